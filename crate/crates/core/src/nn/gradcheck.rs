//! Central finite-difference checks of the hand-written backward passes.
//!
//! Everything here runs in `f64`. Layer checks use the loss `Σ y ⊙ R` with a
//! fixed random projection `R`; stream checks use the softmax cross-entropy
//! of the full network. Dropout masks are re-drawn from the same seed on
//! every evaluation so the loss is a deterministic function of the inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{softmax_cross_entropy, Conv3x3, Ctx, Dense, Dropout, MaxPool2, Param, Relu};
use super::tensor::Tensor;
use super::{CloudArch, CloudNet, DepthArch, DepthNet};
use crate::Result;

pub const STEP: f64 = 1e-5;

/// Relative error per checked tensor: `‖a − n‖ / (‖a‖ + ‖n‖)`.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub entries: Vec<(String, f64)>,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.entries.iter().map(|e| e.1).fold(0.0, f64::max)
    }

    pub fn worst_entry(&self) -> Option<&(String, f64)> {
        self.entries.iter().max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// A scalar loss over a set of named tensors ("slots") with an analytic
/// gradient for each slot.
pub trait Checkable {
    fn loss(&mut self) -> Result<f64>;
    fn gradients(&mut self) -> Result<Vec<(String, Vec<f64>)>>;
    fn slot_mut(&mut self, slot: usize) -> &mut [f64];
}

/// Compares analytic and central-difference gradients on at most
/// `max_entries` randomly chosen entries per slot.
pub fn run<C: Checkable>(c: &mut C, max_entries: usize, seed: u64) -> Result<GradReport> {
    let analytic = c.gradients()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for (slot, (name, grad)) in analytic.iter().enumerate() {
        let len = grad.len();
        let picks: Vec<usize> = if len <= max_entries {
            (0..len).collect()
        } else {
            rand::seq::index::sample(&mut rng, len, max_entries).into_vec()
        };
        let (mut diff, mut norm_a, mut norm_n) = (0.0, 0.0, 0.0);
        for &i in &picks {
            let orig = c.slot_mut(slot)[i];
            c.slot_mut(slot)[i] = orig + STEP;
            let up = c.loss()?;
            c.slot_mut(slot)[i] = orig - STEP;
            let down = c.loss()?;
            c.slot_mut(slot)[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            diff += (grad[i] - numeric).powi(2);
            norm_a += grad[i].powi(2);
            norm_n += numeric.powi(2);
        }
        let denom = norm_a.sqrt() + norm_n.sqrt();
        let rel = if denom < 1e-12 { 0.0 } else { diff.sqrt() / denom };
        entries.push((name.clone(), rel));
    }
    Ok(GradReport { entries })
}

fn random_tensor(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    }
}

fn project(y: &Tensor<f64>, r: &[f64]) -> f64 {
    y.data.iter().zip(r).map(|(a, b)| a * b).sum()
}

fn randomize(params: Vec<&mut Param<f64>>, rng: &mut ChaCha8Rng) {
    for p in params {
        let fan = p.value.data.len().max(1) as f64;
        let scale = (3.0 / fan.sqrt()).min(0.5);
        for v in p.value.data.iter_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

/// Which primitive a [`LayerCheck`] exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    Conv3x3,
    MaxPool2,
    Dense,
    Relu,
    Dropout,
    SoftmaxCrossEntropy,
}

impl Primitive {
    pub const ALL: [Primitive; 6] = [
        Primitive::Conv3x3,
        Primitive::MaxPool2,
        Primitive::Dense,
        Primitive::Relu,
        Primitive::Dropout,
        Primitive::SoftmaxCrossEntropy,
    ];
}

enum Op {
    Conv(Conv3x3<f64>),
    Pool(MaxPool2),
    Dense(Dense<f64>),
    Relu(Relu),
    Dropout(Dropout<f64>),
    Softmax(Vec<usize>),
}

pub struct LayerCheck {
    op: Op,
    x: Tensor<f64>,
    proj: Vec<f64>,
    seed: u64,
}

impl LayerCheck {
    pub fn new(primitive: Primitive, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (op, x) = match primitive {
            Primitive::Conv3x3 => {
                let mut conv = Conv3x3::new("conv", 3, 4, &mut rng);
                conv.bias.value = random_tensor(&[4], 0.5, &mut rng);
                (Op::Conv(conv), random_tensor(&[2, 3, 5, 6], 1.0, &mut rng))
            }
            Primitive::MaxPool2 => (Op::Pool(MaxPool2::default()), random_tensor(&[2, 3, 4, 6], 1.0, &mut rng)),
            Primitive::Dense => {
                let mut d = Dense::new("dense", 7, 5, &mut rng);
                d.bias.value = random_tensor(&[5], 0.5, &mut rng);
                (Op::Dense(d), random_tensor(&[4, 7], 1.0, &mut rng))
            }
            Primitive::Relu => (Op::Relu(Relu::default()), random_tensor(&[3, 11], 1.0, &mut rng)),
            Primitive::Dropout => (Op::Dropout(Dropout::new(0.7)), random_tensor(&[4, 9], 1.0, &mut rng)),
            Primitive::SoftmaxCrossEntropy => {
                let labels = (0..6).map(|_| rng.random_range(0..3)).collect();
                (Op::Softmax(labels), random_tensor(&[6, 3], 3.0, &mut rng))
            }
        };
        let mut check = Self {
            op,
            x,
            proj: Vec::new(),
            seed,
        };
        let out_len = check.forward().map(|y| y.len()).unwrap_or(0);
        check.proj = (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect();
        check
    }

    fn ctx(&self) -> Ctx {
        Ctx {
            train: true,
            rng: ChaCha8Rng::seed_from_u64(self.seed ^ 0xd00d),
        }
    }

    fn forward(&mut self) -> Result<Tensor<f64>> {
        let mut ctx = self.ctx();
        let x = self.x.clone();
        match &mut self.op {
            Op::Conv(l) => l.forward(x),
            Op::Pool(l) => l.forward(x),
            Op::Dense(l) => l.forward(x),
            Op::Relu(l) => Ok(l.forward(x)),
            Op::Dropout(l) => Ok(l.forward(x, &mut ctx)),
            Op::Softmax(_) => Ok(x),
        }
    }
}

impl Checkable for LayerCheck {
    fn loss(&mut self) -> Result<f64> {
        let y = self.forward()?;
        match &self.op {
            Op::Softmax(labels) => Ok(softmax_cross_entropy(&y, labels)?.0),
            _ => Ok(project(&y, &self.proj)),
        }
    }

    fn gradients(&mut self) -> Result<Vec<(String, Vec<f64>)>> {
        let y = self.forward()?;
        let dy = Tensor::from_vec(&y.shape, self.proj.clone())?;
        Ok(match &mut self.op {
            Op::Conv(l) => {
                l.weight.zero_grad();
                l.bias.zero_grad();
                let dx = l.backward(dy)?;
                vec![
                    ("x".into(), dx.data),
                    ("w".into(), l.weight.grad.clone()),
                    ("b".into(), l.bias.grad.clone()),
                ]
            }
            Op::Dense(l) => {
                l.weight.zero_grad();
                l.bias.zero_grad();
                let dx = l.backward(dy)?;
                vec![
                    ("x".into(), dx.data),
                    ("w".into(), l.weight.grad.clone()),
                    ("b".into(), l.bias.grad.clone()),
                ]
            }
            Op::Pool(l) => vec![("x".into(), l.backward(dy)?.data)],
            Op::Relu(l) => vec![("x".into(), l.backward(dy)?.data)],
            Op::Dropout(l) => vec![("x".into(), l.backward(dy)?.data)],
            Op::Softmax(labels) => vec![("logits".into(), softmax_cross_entropy(&y, labels)?.1.data)],
        })
    }

    fn slot_mut(&mut self, slot: usize) -> &mut [f64] {
        match (slot, &mut self.op) {
            (0, _) => &mut self.x.data,
            (1, Op::Conv(l)) => &mut l.weight.value.data,
            (2, Op::Conv(l)) => &mut l.bias.value.data,
            (1, Op::Dense(l)) => &mut l.weight.value.data,
            (2, Op::Dense(l)) => &mut l.bias.value.data,
            _ => panic!("slot {slot} out of range"),
        }
    }
}

/// Full depth stream in training mode (dropout active, fixed mask).
pub struct DepthCheck {
    pub net: DepthNet<f64>,
    scene: Tensor<f64>,
    model: Tensor<f64>,
    labels: Vec<usize>,
    seed: u64,
}

impl DepthCheck {
    pub fn new(arch: DepthArch, batch: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = DepthNet::new(arch.clone(), seed)?;
        randomize(net.params_mut(), &mut rng);
        let s = arch.input_size;
        Ok(Self {
            net,
            scene: random_tensor(&[batch, 1, s, s], 1.0, &mut rng),
            model: random_tensor(&[batch, 1, s, s], 1.0, &mut rng),
            labels: (0..batch).map(|i| i % 2).collect(),
            seed,
        })
    }

    fn ctx(&self) -> Ctx {
        Ctx {
            train: true,
            rng: ChaCha8Rng::seed_from_u64(self.seed ^ 0xbeef),
        }
    }
}

impl Checkable for DepthCheck {
    fn loss(&mut self) -> Result<f64> {
        let mut ctx = self.ctx();
        let logits = self.net.forward(self.scene.clone(), self.model.clone(), &mut ctx)?;
        Ok(softmax_cross_entropy(&logits, &self.labels)?.0)
    }

    fn gradients(&mut self) -> Result<Vec<(String, Vec<f64>)>> {
        let mut ctx = self.ctx();
        let logits = self.net.forward(self.scene.clone(), self.model.clone(), &mut ctx)?;
        let (_, dlogits, _) = softmax_cross_entropy(&logits, &self.labels)?;
        self.net.params_mut().into_iter().for_each(Param::zero_grad);
        let (ds, dm) = self.net.backward(dlogits)?;
        let mut out = vec![("input.scene".to_string(), ds.data), ("input.model".to_string(), dm.data)];
        out.extend(self.net.params().into_iter().map(|p| (p.name.clone(), p.grad.clone())));
        Ok(out)
    }

    fn slot_mut(&mut self, slot: usize) -> &mut [f64] {
        match slot {
            0 => &mut self.scene.data,
            1 => &mut self.model.data,
            k => &mut self.net.params_mut().into_iter().nth(k - 2).expect("slot in range").value.data,
        }
    }
}

/// Full point-cloud stream in training mode.
pub struct CloudCheck {
    pub net: CloudNet<f64>,
    scene: Tensor<f64>,
    model: Tensor<f64>,
    labels: Vec<usize>,
    seed: u64,
}

impl CloudCheck {
    pub fn new(arch: CloudArch, batch: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = CloudNet::new(arch.clone(), seed)?;
        randomize(net.params_mut(), &mut rng);
        let p = arch.points;
        Ok(Self {
            net,
            scene: random_tensor(&[batch, p, 3], 1.0, &mut rng),
            model: random_tensor(&[p, 3], 1.0, &mut rng),
            labels: (0..batch).map(|i| (i + 1) % 2).collect(),
            seed,
        })
    }

    fn ctx(&self) -> Ctx {
        Ctx {
            train: true,
            rng: ChaCha8Rng::seed_from_u64(self.seed ^ 0xfeed),
        }
    }
}

impl Checkable for CloudCheck {
    fn loss(&mut self) -> Result<f64> {
        let mut ctx = self.ctx();
        let logits = self.net.forward(self.scene.clone(), self.model.clone(), &mut ctx)?;
        Ok(softmax_cross_entropy(&logits, &self.labels)?.0)
    }

    fn gradients(&mut self) -> Result<Vec<(String, Vec<f64>)>> {
        let mut ctx = self.ctx();
        let logits = self.net.forward(self.scene.clone(), self.model.clone(), &mut ctx)?;
        let (_, dlogits, _) = softmax_cross_entropy(&logits, &self.labels)?;
        self.net.params_mut().into_iter().for_each(Param::zero_grad);
        let (ds, dm) = self.net.backward(dlogits)?;
        let mut out = vec![("input.scene".to_string(), ds.data), ("input.model".to_string(), dm.data)];
        out.extend(self.net.params().into_iter().map(|p| (p.name.clone(), p.grad.clone())));
        Ok(out)
    }

    fn slot_mut(&mut self, slot: usize) -> &mut [f64] {
        match slot {
            0 => &mut self.scene.data,
            1 => &mut self.model.data,
            k => &mut self.net.params_mut().into_iter().nth(k - 2).expect("slot in range").value.data,
        }
    }
}

/// Reduced depth architecture for checks at a given input size.
pub fn small_depth_arch(input_size: usize, combined_repeats: usize) -> DepthArch {
    DepthArch {
        input_size,
        widths: [3, 4, 3],
        combined_repeats,
        fc_hidden: 5,
        dropout_keep: 0.7,
    }
}

/// Reduced point-cloud architecture for checks.
pub fn small_cloud_arch(points: usize) -> CloudArch {
    CloudArch {
        points,
        mlp: vec![6, 5, 7, 9],
        local_layers: 2,
        seg: vec![6],
        fc: vec![7, 5],
        dropout_keep: 0.7,
    }
}
