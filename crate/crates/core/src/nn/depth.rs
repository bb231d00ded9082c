//! Depth stream: two towers with separate weights (scene crop and rendered
//! hypothesis), channel concatenation, a shared combined block and a
//! two-layer classifier head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Conv3x3, Ctx, Dense, Dropout, Layer, MaxPool2, Param, Relu, Sequential};
use super::tensor::{Scalar, Tensor};
use super::Prob2;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthArch {
    pub input_size: usize,
    /// Tower widths; the combined block runs at twice the last width.
    pub widths: [usize; 3],
    /// Number of `[conv, conv, pool]` repetitions after concatenation.
    pub combined_repeats: usize,
    pub fc_hidden: usize,
    pub dropout_keep: f64,
}

impl Default for DepthArch {
    fn default() -> Self {
        Self {
            input_size: 224,
            widths: [64, 128, 256],
            combined_repeats: 2,
            fc_hidden: 256,
            dropout_keep: 0.7,
        }
    }
}

impl DepthArch {
    /// CPU-sized profile: 64×64 inputs, widths 8/16/32.
    pub fn desk() -> Self {
        Self {
            input_size: 64,
            widths: [8, 16, 32],
            ..Self::default()
        }
    }

    pub fn pool_count(&self) -> usize {
        3 + self.combined_repeats
    }

    pub fn feature_side(&self) -> usize {
        self.input_size >> self.pool_count()
    }

    pub fn validate(&self) -> Result<()> {
        let div = 1usize << self.pool_count();
        if self.input_size == 0 || !self.input_size.is_multiple_of(div) {
            return Err(Error::Architecture(format!(
                "depth input size {} is not divisible by {div} ({} pooling stages)",
                self.input_size,
                self.pool_count()
            )));
        }
        if self.widths.contains(&0) || self.fc_hidden == 0 {
            return Err(Error::Architecture("zero layer width".into()));
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return Err(Error::Architecture(format!("dropout keep {} outside (0, 1]", self.dropout_keep)));
        }
        Ok(())
    }
}

fn conv<T: Scalar>(name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> [Layer<T>; 2] {
    [Layer::Conv(Conv3x3::new(name, cin, cout, rng)), Layer::Relu(Relu::default())]
}

fn tower<T: Scalar>(prefix: &str, widths: [usize; 3], rng: &mut ChaCha8Rng) -> Sequential<T> {
    let [w1, w2, w3] = widths;
    let mut layers = Vec::new();
    layers.extend(conv(&format!("{prefix}.conv1"), 1, w1, rng));
    layers.push(Layer::Pool(MaxPool2::default()));
    layers.extend(conv(&format!("{prefix}.conv2"), w1, w2, rng));
    layers.push(Layer::Pool(MaxPool2::default()));
    layers.extend(conv(&format!("{prefix}.conv3"), w2, w3, rng));
    layers.extend(conv(&format!("{prefix}.conv4"), w3, w3, rng));
    layers.push(Layer::Pool(MaxPool2::default()));
    Sequential { layers }
}

#[derive(Debug, Clone)]
pub struct DepthNet<T> {
    pub arch: DepthArch,
    scene_tower: Sequential<T>,
    model_tower: Sequential<T>,
    combined: Sequential<T>,
    head: Sequential<T>,
    tower_shape: Vec<usize>,
    combined_shape: Vec<usize>,
}

impl<T: Scalar> DepthNet<T> {
    pub fn new(arch: DepthArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene_tower = tower("scene", arch.widths, &mut rng);
        let model_tower = tower("model", arch.widths, &mut rng);
        let c = 2 * arch.widths[2];
        let mut layers = Vec::new();
        for r in 0..arch.combined_repeats {
            layers.extend(conv(&format!("combined{}.conv1", r + 1), c, c, &mut rng));
            layers.extend(conv(&format!("combined{}.conv2", r + 1), c, c, &mut rng));
            layers.push(Layer::Pool(MaxPool2::default()));
        }
        let combined = Sequential { layers };
        let flat = c * arch.feature_side() * arch.feature_side();
        let head = Sequential {
            layers: vec![
                Layer::Dense(Dense::new("fc1", flat, arch.fc_hidden, &mut rng)),
                Layer::Relu(Relu::default()),
                Layer::Dropout(Dropout::new(arch.dropout_keep)),
                Layer::Dense(Dense::zeroed("fc2", arch.fc_hidden, 2)),
            ],
        };
        Ok(Self {
            arch,
            scene_tower,
            model_tower,
            combined,
            head,
            tower_shape: Vec::new(),
            combined_shape: Vec::new(),
        })
    }

    /// Logits `[N, 2]` for a batch of scene crops and rendered crops, both
    /// `[N, 1, S, S]`.
    pub fn forward(&mut self, scene: Tensor<T>, model: Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>> {
        let s = self.arch.input_size;
        if scene.shape.len() != 4 || scene.shape[1..] != [1, s, s] || scene.shape != model.shape {
            return Err(Error::Shape {
                op: "depth_stream",
                detail: format!("inputs {:?} and {:?}, expected [N, 1, {s}, {s}]", scene.shape, model.shape),
            });
        }
        let a = self.scene_tower.forward(scene, ctx)?;
        let b = self.model_tower.forward(model, ctx)?;
        self.tower_shape = a.shape.clone();
        let (n, per) = (a.shape[0], a.len() / a.shape[0]);
        let mut data = Vec::with_capacity(2 * a.len());
        for i in 0..n {
            data.extend_from_slice(&a.data[i * per..(i + 1) * per]);
            data.extend_from_slice(&b.data[i * per..(i + 1) * per]);
        }
        let joined = Tensor::from_vec(&[n, 2 * a.shape[1], a.shape[2], a.shape[3]], data)?;
        let c = self.combined.forward(joined, ctx)?;
        self.combined_shape = c.shape.clone();
        let flat = c.len() / n;
        self.head.forward(c.reshaped(&[n, flat])?, ctx)
    }

    /// Back-propagates `dlogits`; returns the input gradients for the scene
    /// and rendered crops.
    pub fn backward(&mut self, dlogits: Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let dc = self.head.backward(dlogits)?.reshaped(&self.combined_shape)?;
        let dj = self.combined.backward(dc)?;
        let n = self.tower_shape[0];
        let per = dj.len() / (2 * n);
        let mut da = Vec::with_capacity(n * per);
        let mut db = Vec::with_capacity(n * per);
        for i in 0..n {
            da.extend_from_slice(&dj.data[2 * i * per..(2 * i + 1) * per]);
            db.extend_from_slice(&dj.data[(2 * i + 1) * per..(2 * i + 2) * per]);
        }
        let ds = self.scene_tower.backward(Tensor::from_vec(&self.tower_shape, da)?)?;
        let dm = self.model_tower.backward(Tensor::from_vec(&self.tower_shape, db)?)?;
        Ok((ds, dm))
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.scene_tower.params();
        p.extend(self.model_tower.params());
        p.extend(self.combined.params());
        p.extend(self.head.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.scene_tower.params_mut();
        p.extend(self.model_tower.params_mut());
        p.extend(self.combined.params_mut());
        p.extend(self.head.params_mut());
        p
    }

    /// Eval-mode probabilities for one normalized pair.
    pub fn predict(&mut self, scene: &[f32], model: &[f32]) -> Result<Prob2> {
        let s = self.arch.input_size;
        let to_t = |x: &[f32]| Tensor::from_vec(&[1, 1, s, s], x.iter().map(|&v| T::of(v as f64)).collect());
        let logits = self.forward(to_t(scene)?, to_t(model)?, &mut Ctx::eval())?;
        let p = super::softmax(&logits);
        Ok(Prob2::from_row(&p.data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(size: usize, repeats: usize) -> DepthArch {
        DepthArch {
            input_size: size,
            widths: [2, 3, 2],
            combined_repeats: repeats,
            fc_hidden: 4,
            dropout_keep: 0.7,
        }
    }

    #[test]
    fn cold_start_is_uninformative() {
        let mut net = DepthNet::<f32>::new(DepthArch::desk(), 1).unwrap();
        let x: Vec<f32> = (0..64 * 64).map(|i| ((i * 7) % 13) as f32 / 13.0).collect();
        let p = net.predict(&x, &x).unwrap();
        assert_eq!((p.p_valid, p.p_invalid), (0.5, 0.5));
    }

    #[test]
    fn rejects_sizes_that_do_not_pool_cleanly() {
        assert!(matches!(DepthNet::<f32>::new(tiny(48, 2), 0), Err(Error::Architecture(_))));
        assert!(DepthNet::<f32>::new(tiny(32, 2), 0).is_ok());
        assert!(DepthNet::<f32>::new(tiny(16, 1), 0).is_ok());
    }

    #[test]
    fn output_is_a_distribution() {
        let mut net = DepthNet::<f64>::new(tiny(32, 2), 4).unwrap();
        for p in net.params_mut() {
            for (i, v) in p.value.data.iter_mut().enumerate() {
                *v += 0.05 * ((i % 5) as f64 - 2.0);
            }
        }
        let x: Vec<f32> = (0..32 * 32).map(|i| (i % 9) as f32 / 9.0 - 0.5).collect();
        let y: Vec<f32> = x.iter().rev().copied().collect();
        let p = net.predict(&x, &y).unwrap();
        assert!((p.p_valid + p.p_invalid - 1.0).abs() < 1e-6);
        assert!(p.p_valid != 0.5);
    }

    #[test]
    fn parameter_names_are_unique() {
        let net = DepthNet::<f32>::new(DepthArch::desk(), 0).unwrap();
        let mut names: Vec<&str> = net.params().iter().map(|p| p.name.as_str()).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
        assert_eq!(n, 2 * 2 * 4 + 2 * 2 * 2 + 4);
    }
}
