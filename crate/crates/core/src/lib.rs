//! posecheck: post-hoc validation of 6-dof pose estimates.
//!
//! Given an object model, a depth scene and a list of pose hypotheses, the
//! crate renders what each hypothesis predicts, crops the matching scene
//! evidence, and scores the pair with two independently trained streams
//! (a depth-image tower pair and a point-cloud correlation network). The
//! averaged probability replaces the detector's confidence when ranking
//! detections.
//!
//! Module map:
//!
//! - [`geometry`]: rigid poses, symmetry groups, object models, the
//!   symmetry-aware pose distance and TP/FP labeling.
//! - [`mesh`]: triangle meshes, OBJ I/O and area-weighted sampling.
//! - [`rasterizer`]: z-buffer depth rendering, ROI crops, back-projection.
//! - [`cloudprep`]: point-cloud canonicalization and resampling.
//! - [`nn`]: the small CPU network engine, both streams, fusion, training.
//! - [`datagen`]: toy objects, synthetic scenes and simulated detections.
//! - [`evaluation`]: ACA/OA, average precision, reports.
//! - [`pipeline`]: glue that turns a detection into network inputs.

pub mod cloudprep;
pub mod datagen;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod mesh;
pub mod nn;
pub mod pipeline;
pub mod rasterizer;
pub mod seeding;

pub use error::{Error, Result};
pub use geometry::{Label, ObjectModel, Pose, Symmetry};
pub use mesh::TriangleMesh;
