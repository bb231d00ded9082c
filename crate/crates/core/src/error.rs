use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("invalid symmetry: {0}")]
    InvalidSymmetry(String),

    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("empty ground-truth set")]
    EmptyGroundTruth,

    #[error("detection lies behind the near plane (t_z = {tz}, near = {near})")]
    BehindCamera { tz: f64, near: f64 },

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("insufficient support: {0} points")]
    InsufficientSupport(usize),

    #[error("{op}: shape mismatch {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid architecture: {0}")]
    Architecture(String),

    #[error("single-class dataset ({valid} valid, {invalid} invalid)")]
    SingleClass { valid: usize, invalid: usize },

    #[error("scene too crowded: no placement after {0} trials")]
    SceneTooCrowded(usize),

    #[error("invalid format: {0}")]
    Format(String),

    #[error("no ground-truth instances to evaluate against")]
    NoGroundTruth,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
