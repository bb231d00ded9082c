//! Browser demo. Three operations on a toy object: render a depth view at a
//! chosen pose, sweep the symmetry-aware distance along a rotation, and
//! compare precision-recall curves for two detection scorings.
//!
//! The `#[wasm_bindgen]` exports are thin wrappers over plain functions so
//! the logic is testable natively.

use nalgebra::Vector3;
use posecheck::datagen::{generate_scene, make_toy_mesh, simulate_detections, NoiseConfig, SceneRegion, ToyKind};
use posecheck::evaluation::MatchTable;
use posecheck::geometry::{pose_distance, rotation_about, TP_THRESHOLD_FRACTION};
use posecheck::rasterizer::{render_depth, CameraIntrinsics};
use posecheck::seeding::derive_seed;
use posecheck::{ObjectModel, Pose};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn axis_vector(axis: &str) -> Result<Vector3<f64>, String> {
    match axis {
        "x" => Ok(Vector3::x()),
        "y" => Ok(Vector3::y()),
        "z" => Ok(Vector3::z()),
        other => Err(format!("unknown axis `{other}`")),
    }
}

/// Pose from yaw/pitch/roll in degrees (about z, y, x) at depth `tz`.
pub fn view_pose(yaw: f64, pitch: f64, roll: f64, tz: f64) -> Pose {
    let r = rotation_about(&Vector3::z(), yaw.to_radians())
        * rotation_about(&Vector3::y(), pitch.to_radians())
        * rotation_about(&Vector3::x(), roll.to_radians());
    Pose {
        rotation: r,
        translation: Vector3::new(0.0, 0.0, tz),
    }
}

pub struct Core {
    pub kind: ToyKind,
    pub model: ObjectModel,
    pub cam: CameraIntrinsics,
}

impl Core {
    pub fn new(kind: &str) -> Result<Self, String> {
        let kind: ToyKind = kind.parse().map_err(|e: posecheck::Error| e.to_string())?;
        let (mesh, sym) = make_toy_mesh(kind);
        let model = ObjectModel::build(&mesh, sym, 600, 0).map_err(|e| e.to_string())?;
        Ok(Self {
            kind,
            model,
            cam: CameraIntrinsics::default(),
        })
    }

    /// RGBA pixels, nearer is brighter, background black.
    pub fn render_rgba(&self, pose: &Pose) -> Vec<u8> {
        let img = render_depth(&self.model, std::slice::from_ref(pose), &self.cam);
        let finite = img.pixels.iter().filter(|d| d.is_finite());
        let lo = finite.clone().fold(f32::INFINITY, |a, &b| a.min(b));
        let hi = finite.fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let span = (hi - lo).max(1e-6);
        img.pixels
            .iter()
            .flat_map(|&d| {
                if d.is_finite() {
                    let g = (255.0 * (1.0 - 0.75 * (d - lo) / span)) as u8;
                    [g, g, g, 255]
                } else {
                    [0, 0, 0, 255]
                }
            })
            .collect()
    }

    /// Distance from the identity to a rotation by `i/steps · 360°` about
    /// `axis`, as a fraction of the diameter, for `i = 0..=steps`.
    pub fn distance_sweep(&self, axis: &str, steps: usize) -> Result<Vec<f64>, String> {
        let a = axis_vector(axis)?;
        let steps = steps.max(1);
        Ok((0..=steps)
            .map(|i| {
                let angle = 2.0 * std::f64::consts::PI * i as f64 / steps as f64;
                let p = Pose::from_axis_angle(&a, angle, Vector3::zeros());
                pose_distance(&Pose::identity(), &p, &self.model) / self.model.diameter
            })
            .collect())
    }
}

#[derive(Debug, Serialize)]
pub struct Curve {
    pub ap: f64,
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct PrComparison {
    pub detections: usize,
    pub instances: usize,
    pub confidence: Curve,
    pub validator: Curve,
}

/// Simulated detections over `scenes` three-instance scenes, ranked once
/// by the uninformative detector confidence and once by a stand-in
/// validator whose score is correct with probability `accuracy`.
pub fn pr_comparison(core: &Core, scenes: usize, accuracy: f64, seed: u64) -> Result<PrComparison, String> {
    let err = |e: posecheck::Error| e.to_string();
    let mut gts = Vec::new();
    let mut dets = Vec::new();
    let mut conf = Vec::new();
    let mut validator = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[7]));
    let region = SceneRegion::default();
    for s in 0..scenes {
        let scene = generate_scene(&core.model, core.kind.name(), 3, &core.cam, &region, &s.to_string(), derive_seed(seed, &[0, s as u64])).map_err(err)?;
        for d in simulate_detections(&scene, &core.model, &NoiseConfig::default(), derive_seed(seed, &[1, s as u64])).map_err(err)? {
            let right = rng.random_bool(accuracy.clamp(0.0, 1.0));
            let p = rng.random_range(0.5..1.0);
            validator.push(if d.label.is_valid() == right { p } else { 1.0 - p });
            conf.push(d.confidence);
            dets.push((s, d.pose));
        }
        gts.push(scene.gt);
    }
    let table = MatchTable::new(&dets, &gts, &core.model, TP_THRESHOLD_FRACTION).map_err(err)?;
    let curve = |scores: &[f64]| -> Result<Curve, String> {
        let pr = table.pr_curve(scores).map_err(err)?;
        Ok(Curve {
            ap: table.average_precision(scores).map_err(err)?,
            recall: pr.iter().map(|p| p.0).collect(),
            precision: pr.iter().map(|p| p.1).collect(),
        })
    };
    Ok(PrComparison {
        detections: dets.len(),
        instances: table.total_gt(),
        confidence: curve(&conf)?,
        validator: curve(&validator)?,
    })
}

#[wasm_bindgen]
pub struct Demo {
    core: Core,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(kind: &str) -> Result<Demo, JsError> {
        Core::new(kind).map(|core| Demo { core }).map_err(|e| JsError::new(&e))
    }

    pub fn width(&self) -> usize {
        self.core.cam.width
    }

    pub fn height(&self) -> usize {
        self.core.cam.height
    }

    pub fn diameter(&self) -> f64 {
        self.core.model.diameter
    }

    /// Depth view as RGBA bytes for an `ImageData`.
    pub fn render(&self, yaw: f64, pitch: f64, roll: f64, depth: f64) -> Vec<u8> {
        self.core.render_rgba(&view_pose(yaw, pitch, roll, depth))
    }

    #[wasm_bindgen(js_name = distanceSweep)]
    pub fn distance_sweep(&self, axis: &str, steps: usize) -> Result<Vec<f64>, JsError> {
        self.core.distance_sweep(axis, steps).map_err(|e| JsError::new(&e))
    }

    /// JSON with both curves and their APs.
    #[wasm_bindgen(js_name = prComparison)]
    pub fn pr_comparison(&self, scenes: usize, accuracy: f64, seed: u64) -> Result<String, JsError> {
        let cmp = pr_comparison(&self.core, scenes, accuracy, seed).map_err(|e| JsError::new(&e))?;
        serde_json::to_string(&cmp).map_err(|e| JsError::new(&e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_has_object_pixels() {
        let core = Core::new("wedge").unwrap();
        let rgba = core.render_rgba(&view_pose(20.0, 10.0, 0.0, 3.0));
        assert_eq!(rgba.len(), 4 * core.cam.width * core.cam.height);
        assert!(rgba.chunks(4).any(|p| p[0] > 0));
        assert!(rgba.chunks(4).any(|p| p[0] == 0));
    }

    #[test]
    fn sweep_shows_the_symmetry() {
        let core = Core::new("cross4").unwrap();
        let d = core.distance_sweep("z", 8).unwrap();
        assert_eq!(d.len(), 9);
        for i in [0, 2, 4, 6, 8] {
            assert!(d[i] < 1e-9, "{d:?}");
        }
        assert!(d[1] > 0.05);
        assert!(core.distance_sweep("w", 8).is_err());
        assert!(Core::new("sphere").is_err());
    }

    #[test]
    fn perfect_stand_in_validator_reaches_full_precision() {
        let core = Core::new("bar2").unwrap();
        let cmp = pr_comparison(&core, 10, 1.0, 3).unwrap();
        assert_eq!(cmp.confidence.recall.len(), cmp.detections);
        assert!(cmp.validator.ap >= cmp.confidence.ap);
        let tp_at_top = cmp.validator.precision.iter().take_while(|p| **p == 1.0).count();
        assert!(tp_at_top > 0);
    }
}
