//! Turns detections into network inputs and network outputs into verdicts.

use crate::cloudprep::{crop_canonicalize, model_cloud, resample, shuffle_points, PointCloud, MIN_SUPPORT};
use crate::datagen::{DatasetManifest, Scene, Verdict};
use crate::geometry::Label;
use crate::nn::{fuse, predict_cloud, predict_depth, CloudNet, CloudSample, DepthNet, DepthSample, Prob2};
use crate::rasterizer::{make_depth_pair, normalize_depth, CameraIntrinsics, ROI_RADIUS_FACTOR};
use crate::seeding::derive_seed;
use crate::{ObjectModel, Pose, Result};

/// Seed of the cached model cloud, relative to the run seed.
const MODEL_CLOUD_STREAM: u64 = 0x6d6f64656c;

/// Per-object input builder. Holds the model cloud, which is generated
/// once per object and seed.
#[derive(Debug, Clone)]
pub struct InputBuilder<'a> {
    pub model: &'a ObjectModel,
    pub cam: CameraIntrinsics,
    /// Side of the stored depth crops (the augmentation size).
    pub depth_size: usize,
    pub points: usize,
    pub seed: u64,
    model_cloud: Vec<[f32; 3]>,
}

impl<'a> InputBuilder<'a> {
    pub fn new(model: &'a ObjectModel, cam: CameraIntrinsics, depth_size: usize, points: usize, seed: u64) -> Result<Self> {
        cam.validate()?;
        let raw = model_cloud(model, points, derive_seed(seed, &[MODEL_CLOUD_STREAM]))?;
        let model_cloud = scale_cloud(&raw, model);
        Ok(Self {
            model,
            cam,
            depth_size,
            points,
            seed,
            model_cloud,
        })
    }

    pub fn model_cloud(&self) -> &[[f32; 3]] {
        &self.model_cloud
    }

    /// Normalized `(scene crop, rendered crop)` at `depth_size`.
    pub fn depth_pair(&self, depth: &crate::rasterizer::DepthImage, pose: &Pose) -> Result<(Vec<f32>, Vec<f32>)> {
        let (d, d_tilde, _) = make_depth_pair(self.model, pose, depth, &self.cam, self.depth_size)?;
        let tz = pose.translation.z;
        Ok((
            normalize_depth(&d, tz, self.model.radius),
            normalize_depth(&d_tilde, tz, self.model.radius),
        ))
    }

    /// Canonicalized, shuffled and resampled scene cloud, or `None` when the
    /// crop has fewer than [`MIN_SUPPORT`] points.
    pub fn cloud(&self, cloud: &PointCloud, pose: &Pose, key: u64) -> Result<Option<Vec<[f32; 3]>>> {
        let crop = crop_canonicalize(cloud, pose, self.model);
        if crop.len() < MIN_SUPPORT {
            return Ok(None);
        }
        let shuffled = shuffle_points(&crop, derive_seed(self.seed, &[key, 1]));
        let fixed = resample(&shuffled, self.points, derive_seed(self.seed, &[key, 2]))?;
        Ok(Some(scale_cloud(&fixed, self.model)))
    }
}

/// Model-frame coordinates divided by the crop radius, so inputs lie in the
/// unit ball.
fn scale_cloud(cloud: &PointCloud, model: &ObjectModel) -> Vec<[f32; 3]> {
    let s = 1.0 / (ROI_RADIUS_FACTOR * model.radius);
    cloud
        .points
        .iter()
        .map(|p| [(p.x * s) as f32, (p.y * s) as f32, (p.z * s) as f32])
        .collect()
}

/// Network inputs for every record of a manifest, in record order.
#[derive(Debug, Clone, Default)]
pub struct PreparedSet {
    pub depth: Vec<DepthSample>,
    /// `None` marks insufficient support.
    pub cloud: Vec<Option<CloudSample>>,
}

impl PreparedSet {
    /// Cloud samples with enough support, as the cloud stream trains on.
    pub fn cloud_training(&self) -> Vec<CloudSample> {
        self.cloud.iter().flatten().cloned().collect()
    }
}

pub fn prepare(builder: &InputBuilder<'_>, manifest: &DatasetManifest, scenes: &[Scene]) -> Result<PreparedSet> {
    let idx = manifest.scene_indices()?;
    let mut out = PreparedSet::default();
    for (i, (rec, &s)) in manifest.records.iter().zip(&idx).enumerate() {
        let scene = &scenes[s];
        let (d, d_tilde) = builder.depth_pair(&scene.depth, &rec.pose)?;
        out.depth.push(DepthSample {
            scene: d,
            model: d_tilde,
            size: builder.depth_size,
            label: rec.label,
        });
        out.cloud.push(builder.cloud(&scene.cloud, &rec.pose, i as u64)?.map(|scene| CloudSample {
            scene,
            label: rec.label,
        }));
    }
    Ok(out)
}

/// Combines the stream outputs. A detection without cloud support counts
/// as a certain rejection by the cloud stream and is always invalid.
pub fn verdict(depth: Prob2, cloud: Option<Prob2>) -> Verdict {
    let (fused, label) = match cloud {
        Some(c) => fuse(depth, c),
        None => (fuse(depth, Prob2::new(0.0)).0, Label::Invalid),
    };
    Verdict {
        depth,
        cloud,
        fused,
        label,
    }
}

/// Runs both streams in eval mode over a prepared set.
pub fn validate(
    depth_net: &mut DepthNet<f32>,
    cloud_net: &mut CloudNet<f32>,
    builder: &InputBuilder<'_>,
    set: &PreparedSet,
) -> Result<Vec<Verdict>> {
    let depth = predict_depth(depth_net, &set.depth)?;
    let present = set.cloud_training();
    let mut cloud_probs = predict_cloud(cloud_net, &present, builder.model_cloud())?.into_iter();
    Ok(depth
        .into_iter()
        .zip(&set.cloud)
        .map(|(d, c)| verdict(d, c.as_ref().and_then(|_| cloud_probs.next())))
        .collect())
}
