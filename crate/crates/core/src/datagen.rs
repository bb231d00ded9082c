//! Synthetic data: toy objects with known symmetry, multi-instance scenes,
//! simulated detector output and class-balanced labeled datasets.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{Vector2, Vector3};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloudprep::PointCloud;
use crate::geometry::{label_detection, random_rotation, random_unit_vector, rotation_about, GroundTruthSet, Label};
use crate::mesh::TriangleMesh;
use crate::nn::Prob2;
use crate::rasterizer::{backproject, render_depth, CameraIntrinsics, DepthImage};
use crate::seeding::derive_seed;
use crate::{Error, ObjectModel, Pose, Symmetry};
use crate::Result;

pub const SCENE_TRIAL_BUDGET: usize = 10_000;
pub const SEPARATION_FACTOR: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyKind {
    Wedge,
    Bar2,
    Cross4,
    ConeRev,
}

impl ToyKind {
    pub const ALL: [ToyKind; 4] = [ToyKind::Wedge, ToyKind::Bar2, ToyKind::Cross4, ToyKind::ConeRev];

    pub fn name(self) -> &'static str {
        match self {
            ToyKind::Wedge => "wedge",
            ToyKind::Bar2 => "bar2",
            ToyKind::Cross4 => "cross4",
            ToyKind::ConeRev => "cone_rev",
        }
    }
}

impl fmt::Display for ToyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ToyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ToyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown toy object `{s}` (wedge, bar2, cross4, cone_rev)")))
    }
}

/// Closed solid between `bottom` at `z = -h/2` and `top` at `z = +h/2`.
/// Both outlines are counter-clockwise seen from `+z`, star-shaped about
/// their centroid, and have the same vertex count.
fn loft(bottom: &[Vector2<f64>], top: &[Vector2<f64>], height: f64) -> TriangleMesh {
    let n = bottom.len();
    let z = height / 2.0;
    let mut vertices: Vec<Vector3<f64>> = bottom.iter().map(|p| Vector3::new(p.x, p.y, -z)).collect();
    vertices.extend(top.iter().map(|p| Vector3::new(p.x, p.y, z)));
    let centroid = |pts: &[Vector2<f64>]| pts.iter().sum::<Vector2<f64>>() / pts.len() as f64;
    let (cb, ct) = (centroid(bottom), centroid(top));
    vertices.push(Vector3::new(cb.x, cb.y, -z));
    vertices.push(Vector3::new(ct.x, ct.y, z));
    let (ib, it) = (2 * n, 2 * n + 1);
    let mut triangles = Vec::with_capacity(4 * n);
    for i in 0..n {
        let j = (i + 1) % n;
        triangles.push([i, j, n + j]);
        triangles.push([i, n + j, n + i]);
        triangles.push([ib, j, i]);
        triangles.push([it, n + i, n + j]);
    }
    TriangleMesh::new(vertices, triangles).expect("loft indices are in range")
}

fn scaled(outline: &[Vector2<f64>], s: f64) -> Vec<Vector2<f64>> {
    let c = outline.iter().sum::<Vector2<f64>>() / outline.len() as f64;
    outline.iter().map(|p| c + (p - c) * s).collect()
}

/// Toy object and its exact proper symmetry group. Every mesh is closed,
/// with a diameter close to one unit.
pub fn make_toy_mesh(kind: ToyKind) -> (TriangleMesh, Symmetry) {
    let v = Vector2::new;
    match kind {
        ToyKind::Wedge => {
            let base = [v(-0.45, -0.25), v(0.5, -0.18), v(-0.12, 0.38)];
            (loft(&base, &scaled(&base, 0.55), 0.35), Symmetry::None)
        }
        ToyKind::Bar2 => {
            let base = [v(-0.48, -0.14), v(0.34, -0.14), v(0.48, 0.14), v(-0.34, 0.14)];
            let sym = Symmetry::cyclic(2, Vector3::z()).expect("unit axis");
            (loft(&base, &scaled(&base, 0.7), 0.22), sym)
        }
        ToyKind::Cross4 => {
            let (a, l) = (0.13, 0.45);
            let arm = [v(l, -a), v(l, a), v(a, a)];
            let mut base = Vec::with_capacity(12);
            for q in 0..4 {
                let (s, c) = (q as f64 * PI / 2.0).sin_cos();
                base.extend(arm.iter().map(|p| v(c * p.x - s * p.y, s * p.x + c * p.y)));
            }
            let sym = Symmetry::cyclic(4, Vector3::z()).expect("unit axis");
            (loft(&base, &scaled(&base, 0.6), 0.3), sym)
        }
        ToyKind::ConeRev => {
            let ring = |r: f64| -> Vec<Vector2<f64>> {
                (0..64)
                    .map(|i| {
                        let (s, c) = (2.0 * PI * i as f64 / 64.0).sin_cos();
                        v(r * c, r * s)
                    })
                    .collect()
            };
            let sym = Symmetry::revolution(Vector3::z()).expect("unit axis");
            (loft(&ring(0.36), &ring(0.14), 0.62), sym)
        }
    }
}

/// Axis-aligned box, in camera coordinates, that instance origins are drawn
/// from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRegion {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for SceneRegion {
    fn default() -> Self {
        Self {
            min: [-1.1, -0.7, 3.2],
            max: [1.1, 0.7, 4.4],
        }
    }
}

impl SceneRegion {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector3<f64> {
        Vector3::from_fn(|i, _| {
            if self.max[i] > self.min[i] {
                rng.random_range(self.min[i]..self.max[i])
            } else {
                self.min[i]
            }
        })
    }
}

/// A generated scene held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub gt: GroundTruthSet,
    pub depth: DepthImage,
    pub cloud: PointCloud,
    pub region: SceneRegion,
}

pub fn generate_scene(
    model: &ObjectModel,
    model_id: &str,
    n_instances: usize,
    cam: &CameraIntrinsics,
    region: &SceneRegion,
    id: &str,
    seed: u64,
) -> Result<Scene> {
    cam.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_sep = SEPARATION_FACTOR * 2.0 * model.radius;
    let mut poses: Vec<Pose> = Vec::with_capacity(n_instances);
    let (mut trials, mut stalled) = (0, 0);
    while poses.len() < n_instances {
        if trials == SCENE_TRIAL_BUDGET {
            return Err(Error::SceneTooCrowded(SCENE_TRIAL_BUDGET));
        }
        trials += 1;
        stalled += 1;
        if stalled > 500 {
            // Early placements can make the rest infeasible; start over.
            poses.clear();
            stalled = 0;
        }
        let t = region.sample(&mut rng);
        if poses.iter().all(|p| (p.translation - t).norm() >= min_sep) {
            poses.push(Pose {
                rotation: random_rotation(&mut rng),
                translation: t,
            });
            stalled = 0;
        }
    }
    let depth = render_depth(model, &poses, cam);
    let cloud = backproject(&depth, cam);
    Ok(Scene {
        id: id.to_string(),
        gt: GroundTruthSet {
            model_id: model_id.to_string(),
            poses,
        },
        depth,
        cloud,
        region: *region,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Relative weight of small perturbations of a ground-truth pose.
    pub perturb_weight: f64,
    /// Relative weight of gross corruptions.
    pub corrupt_weight: f64,
    pub max_rotation_deg: f64,
    /// Translation perturbation bound as a fraction of the diameter.
    pub max_translation_frac: f64,
    pub corrupt_rotation_deg: [f64; 2],
    /// Corruption translation range as a fraction of the radius.
    pub corrupt_translation_frac: [f64; 2],
    /// Relative weights of rotation-only, translation-only and combined
    /// corruptions.
    pub corrupt_modes: [f64; 3],
    /// Probability of one extra detection placed away from every instance.
    pub spurious_rate: f64,
    pub confidence: [f64; 2],
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            perturb_weight: 0.5,
            corrupt_weight: 0.5,
            max_rotation_deg: 5.0,
            max_translation_frac: 0.02,
            corrupt_rotation_deg: [30.0, 180.0],
            corrupt_translation_frac: [0.3, 1.0],
            corrupt_modes: [1.0, 1.0, 1.0],
            spurious_rate: 0.0,
            confidence: [0.4, 1.0],
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |r: [f64; 2]| r[0] <= r[1] && r[0] >= 0.0;
        let ok = self.perturb_weight >= 0.0
            && self.corrupt_weight >= 0.0
            && self.perturb_weight + self.corrupt_weight > 0.0
            && self.max_rotation_deg >= 0.0
            && self.max_translation_frac >= 0.0
            && range_ok(self.corrupt_rotation_deg)
            && range_ok(self.corrupt_translation_frac)
            && self.corrupt_modes.iter().all(|w| *w >= 0.0)
            && self.corrupt_modes.iter().sum::<f64>() > 0.0
            && (0.0..=1.0).contains(&self.spurious_rate)
            && range_ok(self.confidence)
            && self.confidence[1] <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Format(format!("invalid noise config {self:?}")))
        }
    }
}

/// Output of a (simulated) detector plus the derived ground-truth label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub scene: String,
    pub pose: Pose,
    pub confidence: f64,
    pub label: Label,
    /// Distance to the nearest instance; absent when the scene has none.
    pub distance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validator: Option<Verdict>,
}

/// Per-detection network output written by inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub depth: Prob2,
    /// Absent when the scene crop had too few points.
    pub cloud: Option<Prob2>,
    pub fused: Prob2,
    pub label: Label,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn perturb<R: Rng + ?Sized>(gt: &Pose, angle: f64, offset: f64, rng: &mut R) -> Pose {
    let axis = random_unit_vector(rng);
    let dir = random_unit_vector(rng);
    Pose {
        rotation: gt.rotation * rotation_about(&axis, angle),
        translation: gt.translation + dir * offset,
    }
}

fn labeled(scene: &Scene, pose: Pose, confidence: f64, model: &ObjectModel) -> DetectionRecord {
    let (label, distance) = match label_detection(&pose, &scene.gt, model) {
        Ok(l) => (l.label, Some(l.distance)),
        Err(_) => (Label::Invalid, None),
    };
    DetectionRecord {
        scene: scene.id.clone(),
        pose,
        confidence,
        label,
        distance,
        validator: None,
    }
}

/// One detection per instance (perturbed or corrupted) plus an optional
/// spurious one. Labels come from the pose distance only.
pub fn simulate_detections(
    scene: &Scene,
    model: &ObjectModel,
    noise: &NoiseConfig,
    seed: u64,
) -> Result<Vec<DetectionRecord>> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p_perturb = noise.perturb_weight / (noise.perturb_weight + noise.corrupt_weight);
    let modes = WeightedIndex::new(noise.corrupt_modes).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(scene.gt.poses.len() + 1);
    for gt in &scene.gt.poses {
        let pose = if rng.random_bool(p_perturb) {
            let angle = rng.random_range(0.0..=1.0) * noise.max_rotation_deg.to_radians();
            let offset = rng.random_range(0.0..=1.0) * noise.max_translation_frac * model.diameter;
            perturb(gt, angle, offset, &mut rng)
        } else {
            let angle = uniform(&mut rng, noise.corrupt_rotation_deg).to_radians();
            let offset = uniform(&mut rng, noise.corrupt_translation_frac) * model.radius;
            match modes.sample(&mut rng) {
                0 => perturb(gt, angle, 0.0, &mut rng),
                1 => perturb(gt, 0.0, offset, &mut rng),
                _ => perturb(gt, angle, offset, &mut rng),
            }
        };
        let confidence = uniform(&mut rng, noise.confidence);
        out.push(labeled(scene, pose, confidence, model));
    }
    if rng.random_bool(noise.spurious_rate) {
        let clearance = 2.0 * model.radius;
        let mut translation = scene.region.sample(&mut rng);
        for _ in 0..100 {
            if scene.gt.poses.iter().all(|p| (p.translation - translation).norm() >= clearance) {
                break;
            }
            translation = scene.region.sample(&mut rng);
        }
        let pose = Pose {
            rotation: random_rotation(&mut rng),
            translation,
        };
        let confidence = uniform(&mut rng, noise.confidence);
        out.push(labeled(scene, pose, confidence, model));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Samples kept per class after balancing.
    pub per_class: usize,
    pub instances_per_scene: usize,
    /// Detections below this confidence are dropped before balancing.
    pub min_confidence: Option<f64>,
    pub region: SceneRegion,
    pub noise: NoiseConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            per_class: 1000,
            instances_per_scene: 3,
            min_confidence: None,
            region: SceneRegion::default(),
            noise: NoiseConfig::default(),
        }
    }
}

impl DatasetConfig {
    /// Scene budget: four times what a perfectly balanced mix would need.
    pub fn max_scenes(&self) -> usize {
        let per_scene = self.instances_per_scene.max(1);
        4 * (2 * self.per_class).div_ceil(per_scene) + 10
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene: String,
    pub gt: Vec<Pose>,
    pub depth_file: PathBuf,
    pub cloud_file: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub valid: usize,
    pub invalid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub model_id: String,
    pub symmetry: Symmetry,
    pub seed: u64,
    pub camera: CameraIntrinsics,
    pub counts: ClassCounts,
    pub scenes: Vec<SceneRecord>,
    pub records: Vec<DetectionRecord>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Scene index of every record.
    pub fn scene_indices(&self) -> Result<Vec<usize>> {
        let lookup: std::collections::HashMap<&str, usize> =
            self.scenes.iter().enumerate().map(|(i, s)| (s.scene.as_str(), i)).collect();
        self.records
            .iter()
            .map(|r| {
                lookup
                    .get(r.scene.as_str())
                    .copied()
                    .ok_or_else(|| Error::Format(format!("record refers to unknown scene {}", r.scene)))
            })
            .collect()
    }

    /// Loads every referenced scene from disk, paths relative to `dir`.
    pub fn load_scenes(&self, dir: &Path) -> Result<Vec<Scene>> {
        self.scenes
            .iter()
            .map(|s| {
                Ok(Scene {
                    id: s.scene.clone(),
                    gt: GroundTruthSet {
                        model_id: self.model_id.clone(),
                        poses: s.gt.clone(),
                    },
                    depth: DepthImage::read_dpr(&dir.join(&s.depth_file))?,
                    cloud: PointCloud::read_xyz(&dir.join(&s.cloud_file))?,
                    region: SceneRegion::default(),
                })
            })
            .collect()
    }
}

/// Manifest plus the scenes it references, in manifest order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub scenes: Vec<Scene>,
}

impl Dataset {
    /// Writes `manifest.json` and the scene files under `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        for (rec, scene) in self.manifest.scenes.iter().zip(&self.scenes) {
            for f in [&rec.depth_file, &rec.cloud_file] {
                if let Some(parent) = dir.join(f).parent() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            scene.depth.write_dpr(&dir.join(&rec.depth_file))?;
            scene.cloud.write_xyz(&dir.join(&rec.cloud_file))?;
        }
        let path = dir.join("manifest.json");
        std::fs::write(&path, self.manifest.to_json()?)?;
        Ok(path)
    }
}

pub fn scene_id(seed: u64, index: usize) -> String {
    format!("s{seed:016x}-{index:05}")
}

/// Generates scenes until both classes reach `per_class` (or the scene
/// budget runs out), then down-samples the majority class.
pub fn build_dataset(
    model: &ObjectModel,
    model_id: &str,
    cfg: &DatasetConfig,
    cam: &CameraIntrinsics,
    seed: u64,
) -> Result<Dataset> {
    cfg.noise.validate()?;
    let mut scenes = Vec::new();
    let mut valid = Vec::new();
    let mut invalid = Vec::new();
    for index in 0..cfg.max_scenes() {
        if valid.len() >= cfg.per_class && invalid.len() >= cfg.per_class {
            break;
        }
        let id = scene_id(seed, index);
        let scene = generate_scene(
            model,
            model_id,
            cfg.instances_per_scene,
            cam,
            &cfg.region,
            &id,
            derive_seed(seed, &[0, index as u64]),
        )?;
        for det in simulate_detections(&scene, model, &cfg.noise, derive_seed(seed, &[1, index as u64]))? {
            if cfg.min_confidence.is_some_and(|m| det.confidence < m) {
                continue;
            }
            match det.label {
                Label::Valid => valid.push((scenes.len(), det)),
                Label::Invalid => invalid.push((scenes.len(), det)),
            }
        }
        scenes.push(scene);
    }
    if valid.is_empty() || invalid.is_empty() || cfg.per_class == 0 {
        return Err(Error::SingleClass {
            valid: valid.len(),
            invalid: invalid.len(),
        });
    }
    let keep = cfg.per_class.min(valid.len()).min(invalid.len());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[2]));
    let mut pick = |pool: Vec<(usize, DetectionRecord)>| {
        let mut idx = index::sample(&mut rng, pool.len(), keep).into_vec();
        idx.sort_unstable();
        let mut pool: Vec<Option<(usize, DetectionRecord)>> = pool.into_iter().map(Some).collect();
        idx.into_iter().filter_map(|i| pool[i].take()).collect::<Vec<_>>()
    };
    let mut chosen = pick(valid);
    chosen.extend(pick(invalid));
    // Restore generation order: by scene, then valid before invalid.
    chosen.sort_by_key(|(s, _)| *s);

    let mut used: Vec<usize> = chosen.iter().map(|(s, _)| *s).collect();
    used.dedup();
    let mut kept_scenes = Vec::with_capacity(used.len());
    let mut scene_records = Vec::with_capacity(used.len());
    let mut slots = scenes.into_iter().map(Some).collect::<Vec<_>>();
    for s in used {
        let scene = slots[s].take().expect("scene used once");
        scene_records.push(SceneRecord {
            scene: scene.id.clone(),
            gt: scene.gt.poses.clone(),
            depth_file: PathBuf::from(format!("scenes/{}.dpr", scene.id)),
            cloud_file: PathBuf::from(format!("scenes/{}.xyz", scene.id)),
        });
        kept_scenes.push(scene);
    }
    Ok(Dataset {
        manifest: DatasetManifest {
            model_id: model_id.to_string(),
            symmetry: model.symmetry,
            seed,
            camera: *cam,
            counts: ClassCounts {
                valid: keep,
                invalid: keep,
            },
            scenes: scene_records,
            records: chosen.into_iter().map(|(_, d)| d).collect(),
        },
        scenes: kept_scenes,
    })
}
