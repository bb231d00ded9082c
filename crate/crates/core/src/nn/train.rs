//! Minibatch training with Adam and softmax cross-entropy, one stream at a
//! time. All randomness (shuffling, augmentation, dropout) is derived from
//! `TrainConfig::seed`, so repeated runs are bit-identical.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig};
use super::layers::{softmax, softmax_cross_entropy, Ctx, Param};
use super::tensor::Tensor;
use super::{CloudArch, CloudNet, DepthArch, DepthNet, Prob2, INVALID, VALID};
use crate::geometry::Label;
use crate::seeding::derive_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    /// The learning rate is divided by `lr_decay_factor` every
    /// `lr_decay_every` epochs.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub epochs: usize,
    pub batch: usize,
    pub dropout_keep: f64,
    pub seed: u64,
    pub input_size: usize,
    pub points: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            lr_decay_every: 10,
            lr_decay_factor: 10.0,
            epochs: 60,
            batch: 8,
            dropout_keep: 0.7,
            seed: 0,
            input_size: 224,
            points: 1024,
        }
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            epochs: 20,
            input_size: 64,
            points: 256,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr0 > 0.0
            && self.lr_decay_every > 0
            && self.lr_decay_factor > 0.0
            && self.epochs > 0
            && self.batch > 0
            && self.input_size > 0
            && self.points > 0
            && self.dropout_keep > 0.0
            && self.dropout_keep <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Architecture(format!("invalid training config {self:?}")))
        }
    }

    /// Side of the stored crops before the random training crop, scaled
    /// like 224 → 236.
    pub fn augment_size(&self) -> usize {
        (self.input_size as f64 * 236.0 / 224.0).round() as usize
    }
}

pub fn learning_rate(cfg: &TrainConfig, epoch: usize) -> f64 {
    cfg.lr0 / cfg.lr_decay_factor.powi((epoch / cfg.lr_decay_every) as i32)
}

/// Normalized depth pair at `size × size` (the augmentation size).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthSample {
    pub scene: Vec<f32>,
    pub model: Vec<f32>,
    pub size: usize,
    pub label: Label,
}

/// Canonicalized, resampled scene cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudSample {
    pub scene: Vec<[f32; 3]>,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub stream: String,
    pub epochs: Vec<EpochStats>,
}

fn class_index(label: Label) -> usize {
    match label {
        Label::Valid => VALID,
        Label::Invalid => INVALID,
    }
}

fn check_classes<I: Iterator<Item = Label>>(labels: I) -> Result<()> {
    let (mut valid, mut invalid) = (0, 0);
    for l in labels {
        match l {
            Label::Valid => valid += 1,
            Label::Invalid => invalid += 1,
        }
    }
    if valid == 0 || invalid == 0 {
        return Err(Error::SingleClass { valid, invalid });
    }
    Ok(())
}

/// Crops `out × out` at `(ox, oy)` from both `src × src` images and rotates
/// both by `quarter_turns · 90°`.
pub fn augment_pair(
    scene: &[f32],
    model: &[f32],
    src: usize,
    out: usize,
    ox: usize,
    oy: usize,
    quarter_turns: usize,
) -> (Vec<f32>, Vec<f32>) {
    let transform = |img: &[f32]| {
        let mut res = vec![0.0; out * out];
        for y in 0..out {
            for x in 0..out {
                // Destination (x, y) reads the rotated source position.
                let (sx, sy) = match quarter_turns % 4 {
                    0 => (x, y),
                    1 => (y, out - 1 - x),
                    2 => (out - 1 - x, out - 1 - y),
                    _ => (out - 1 - y, x),
                };
                res[y * out + x] = img[(sy + oy) * src + sx + ox];
            }
        }
        res
    };
    (transform(scene), transform(model))
}

fn center_crop(sample: &DepthSample, out: usize) -> (Vec<f32>, Vec<f32>) {
    let off = (sample.size - out) / 2;
    augment_pair(&sample.scene, &sample.model, sample.size, out, off, off, 0)
}

struct Tally {
    loss: f64,
    correct: usize,
    seen: usize,
}

impl Tally {
    fn add(&mut self, loss: f32, probs: &Tensor<f32>, labels: &[usize]) {
        self.loss += loss as f64 * labels.len() as f64;
        self.seen += labels.len();
        for (row, &l) in probs.data.chunks(2).zip(labels) {
            let pred = if row[VALID] > 0.5 { VALID } else { INVALID };
            self.correct += usize::from(pred == l);
        }
    }

    fn stats(&self, epoch: usize, lr: f64) -> EpochStats {
        EpochStats {
            epoch,
            lr,
            loss: self.loss / self.seen.max(1) as f64,
            accuracy: self.correct as f64 / self.seen.max(1) as f64,
        }
    }
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1, epoch as u64])));
    order
}

fn batch_ctx(seed: u64, epoch: usize, batch: usize) -> Ctx {
    Ctx {
        train: true,
        rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, &[2, epoch as u64, batch as u64])),
    }
}

pub fn train_depth(samples: &[DepthSample], arch: DepthArch, cfg: &TrainConfig) -> Result<(DepthNet<f32>, History)> {
    cfg.validate()?;
    check_classes(samples.iter().map(|s| s.label))?;
    let s = arch.input_size;
    if let Some(bad) = samples.iter().find(|x| x.size < s || x.scene.len() != x.size * x.size) {
        return Err(Error::Shape {
            op: "train_depth",
            detail: format!("sample of size {} for input size {s}", bad.size),
        });
    }
    let mut net = DepthNet::<f32>::new(arch, cfg.seed)?;
    let adam = AdamConfig::default();
    let mut step = 0u64;
    let mut history = History {
        stream: "depth".into(),
        epochs: Vec::new(),
    };
    for epoch in 0..cfg.epochs {
        let lr = learning_rate(cfg, epoch);
        let mut tally = Tally {
            loss: 0.0,
            correct: 0,
            seen: 0,
        };
        for (b, chunk) in epoch_order(samples.len(), cfg.seed, epoch).chunks(cfg.batch).enumerate() {
            let mut ctx = batch_ctx(cfg.seed, epoch, b);
            let (mut xs, mut xm, mut labels) = (Vec::new(), Vec::new(), Vec::new());
            for &i in chunk {
                let smp = &samples[i];
                let span = smp.size - s;
                let (ox, oy) = (ctx.rng.random_range(0..=span), ctx.rng.random_range(0..=span));
                let turns = ctx.rng.random_range(0..4);
                let (a, m) = augment_pair(&smp.scene, &smp.model, smp.size, s, ox, oy, turns);
                xs.extend(a);
                xm.extend(m);
                labels.push(class_index(smp.label));
            }
            let n = chunk.len();
            let logits = net.forward(
                Tensor::from_vec(&[n, 1, s, s], xs)?,
                Tensor::from_vec(&[n, 1, s, s], xm)?,
                &mut ctx,
            )?;
            let (loss, dlogits, probs) = softmax_cross_entropy(&logits, &labels)?;
            tally.add(loss, &probs, &labels);
            net.params_mut().into_iter().for_each(Param::zero_grad);
            net.backward(dlogits)?;
            step += 1;
            adam_step(&mut net.params_mut(), lr, step, &adam);
        }
        history.epochs.push(tally.stats(epoch, lr));
    }
    Ok((net, history))
}

/// Eval-mode probabilities, center-cropping each stored pair.
pub fn predict_depth(net: &mut DepthNet<f32>, samples: &[DepthSample]) -> Result<Vec<Prob2>> {
    let s = net.arch.input_size;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(32) {
        let (mut xs, mut xm) = (Vec::new(), Vec::new());
        for smp in chunk {
            let (a, m) = center_crop(smp, s);
            xs.extend(a);
            xm.extend(m);
        }
        let n = chunk.len();
        let logits = net.forward(
            Tensor::from_vec(&[n, 1, s, s], xs)?,
            Tensor::from_vec(&[n, 1, s, s], xm)?,
            &mut Ctx::eval(),
        )?;
        out.extend(softmax(&logits).data.chunks(2).map(Prob2::from_row));
    }
    Ok(out)
}

fn cloud_tensor(points: &[[f32; 3]]) -> Vec<f32> {
    points.iter().flatten().copied().collect()
}

pub fn train_cloud(
    samples: &[CloudSample],
    model_cloud: &[[f32; 3]],
    arch: CloudArch,
    cfg: &TrainConfig,
) -> Result<(CloudNet<f32>, History)> {
    cfg.validate()?;
    check_classes(samples.iter().map(|s| s.label))?;
    let p = arch.points;
    if model_cloud.len() != p || samples.iter().any(|s| s.scene.len() != p) {
        return Err(Error::Shape {
            op: "train_cloud",
            detail: format!("clouds must have exactly {p} points"),
        });
    }
    let mut net = CloudNet::<f32>::new(arch, cfg.seed)?;
    let model = Tensor::from_vec(&[p, 3], cloud_tensor(model_cloud))?;
    let adam = AdamConfig::default();
    let mut step = 0u64;
    let mut history = History {
        stream: "cloud".into(),
        epochs: Vec::new(),
    };
    for epoch in 0..cfg.epochs {
        let lr = learning_rate(cfg, epoch);
        let mut tally = Tally {
            loss: 0.0,
            correct: 0,
            seen: 0,
        };
        for (b, chunk) in epoch_order(samples.len(), cfg.seed, epoch).chunks(cfg.batch).enumerate() {
            let mut ctx = batch_ctx(cfg.seed, epoch, b);
            let mut xs = Vec::with_capacity(chunk.len() * p * 3);
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let mut pts = samples[i].scene.clone();
                pts.shuffle(&mut ctx.rng);
                xs.extend(cloud_tensor(&pts));
                labels.push(class_index(samples[i].label));
            }
            let logits = net.forward(Tensor::from_vec(&[chunk.len(), p, 3], xs)?, model.clone(), &mut ctx)?;
            let (loss, dlogits, probs) = softmax_cross_entropy(&logits, &labels)?;
            tally.add(loss, &probs, &labels);
            net.params_mut().into_iter().for_each(Param::zero_grad);
            net.backward(dlogits)?;
            step += 1;
            adam_step(&mut net.params_mut(), lr, step, &adam);
        }
        history.epochs.push(tally.stats(epoch, lr));
    }
    Ok((net, history))
}

pub fn predict_cloud(net: &mut CloudNet<f32>, samples: &[CloudSample], model_cloud: &[[f32; 3]]) -> Result<Vec<Prob2>> {
    let p = net.arch.points;
    let model = Tensor::from_vec(&[p, 3], cloud_tensor(model_cloud))?;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(32) {
        let xs: Vec<f32> = chunk.iter().flat_map(|s| cloud_tensor(&s.scene)).collect();
        let logits = net.forward(Tensor::from_vec(&[chunk.len(), p, 3], xs)?, model.clone(), &mut Ctx::eval())?;
        out.extend(softmax(&logits).data.chunks(2).map(Prob2::from_row));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_divides_by_ten_every_ten_epochs() {
        let cfg = TrainConfig::default();
        assert_eq!(learning_rate(&cfg, 0), 1e-4);
        assert_eq!(learning_rate(&cfg, 9), 1e-4);
        assert!((learning_rate(&cfg, 10) - 1e-5).abs() < 1e-18);
        assert!((learning_rate(&cfg, 20) - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn augmentation_size_tracks_the_reference_ratio() {
        assert_eq!(TrainConfig::default().augment_size(), 236);
        assert_eq!(TrainConfig::desk().augment_size(), 67);
    }

    #[test]
    fn rotations_compose_to_identity() {
        let img: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let (mut a, _) = augment_pair(&img, &img, 4, 4, 0, 0, 1);
        for _ in 0..3 {
            a = augment_pair(&a, &a, 4, 4, 0, 0, 1).0;
        }
        assert_eq!(a, img);
        let (half, _) = augment_pair(&img, &img, 4, 4, 0, 0, 2);
        assert_eq!(half, img.iter().rev().copied().collect::<Vec<_>>());
        let (crop, _) = augment_pair(&img, &img, 4, 2, 1, 2, 0);
        assert_eq!(crop, vec![9.0, 10.0, 13.0, 14.0]);
    }

    fn toy_depth_samples(n: usize) -> Vec<DepthSample> {
        // Valid pairs agree, invalid pairs are shifted blobs.
        let size = 34;
        (0..n)
            .map(|i| {
                let valid = i % 2 == 0;
                let c = 10.0 + (i % 7) as f32 * 2.0;
                let blob = |cx: f32| -> Vec<f32> {
                    (0..size * size)
                        .map(|k| {
                            let (x, y) = ((k % size) as f32, (k / size) as f32);
                            if (x - cx).powi(2) + (y - 16.0).powi(2) < 36.0 {
                                -0.5
                            } else {
                                1.0
                            }
                        })
                        .collect()
                };
                DepthSample {
                    scene: blob(c),
                    model: blob(if valid { c } else { 34.0 - c }),
                    size,
                    label: if valid { Label::Valid } else { Label::Invalid },
                }
            })
            .collect()
    }

    fn small_arch() -> DepthArch {
        DepthArch {
            input_size: 32,
            widths: [4, 8, 8],
            combined_repeats: 2,
            fc_hidden: 16,
            dropout_keep: 0.7,
        }
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let data = toy_depth_samples(50);
        let cfg = TrainConfig {
            epochs: 5,
            lr0: 1e-3,
            input_size: 32,
            seed: 3,
            ..TrainConfig::default()
        };
        let (net_a, hist) = train_depth(&data, small_arch(), &cfg).unwrap();
        let losses: Vec<f64> = hist.epochs.iter().map(|e| e.loss).collect();
        assert!(losses[0] > losses[1] && losses[1] > losses[2], "{losses:?}");
        let (net_b, hist_b) = train_depth(&data, small_arch(), &cfg).unwrap();
        assert_eq!(hist, hist_b);
        for (a, b) in net_a.params().iter().zip(net_b.params()) {
            assert_eq!(a.value.data, b.value.data);
        }
    }

    #[test]
    fn single_class_data_is_refused() {
        let data: Vec<DepthSample> = toy_depth_samples(10).into_iter().filter(|s| s.label.is_valid()).collect();
        let err = train_depth(&data, small_arch(), &TrainConfig { input_size: 32, ..TrainConfig::default() }).unwrap_err();
        assert!(matches!(err, Error::SingleClass { valid: 5, invalid: 0 }));
    }
}
