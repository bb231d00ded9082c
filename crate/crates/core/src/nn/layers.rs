//! Layer primitives with hand-written backward passes.
//!
//! Every layer caches what its backward pass needs during `forward`, so a
//! `backward` call must follow the matching `forward`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{expect_rank, Scalar, Tensor};
use crate::{Error, Result};

/// Trainable tensor with its gradient and Adam moments.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Vec<T>,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let n = value.len();
        Self {
            name: name.into(),
            value,
            grad: vec![T::zero(); n],
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// He-normal initialization for a layer with the given fan-in.
pub fn he_normal<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    let n = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..n).map(|_| T::of(normal.sample(rng))).collect(),
    }
}

/// Per-call state: train/eval switch and the dropout RNG.
pub struct Ctx {
    pub train: bool,
    pub rng: ChaCha8Rng,
}

impl Ctx {
    pub fn eval() -> Self {
        use rand::SeedableRng;
        Self {
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

/// 3×3 convolution, stride 1, zero "same" padding. Weight layout is
/// `[out, in·9]`, i.e. `[out][in][ky][kx]` flattened.
#[derive(Debug, Clone)]
pub struct Conv3x3<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    cin: usize,
    cout: usize,
    cols: Vec<Vec<T>>,
    hw: (usize, usize),
}

fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ch * 9 + ky * 3 + kx) * hw..(ch * 9 + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let out = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (xo, v) in out.iter_mut().enumerate() {
                        let sx = xo as isize + kx as isize - 1;
                        *v = if sx < 0 || sx >= w as isize {
                            T::zero()
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ch * 9 + ky * 3 + kx) * hw..(ch * 9 + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xo in 0..w {
                        let sx = xo as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            let idx = ch * hw + sy as usize * w + sx as usize;
                            dx[idx] = dx[idx] + row[y * w + xo];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Conv3x3<T> {
    pub fn new(name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: Param::new(format!("{name}.w"), he_normal(&[cout, cin * 9], cin * 9, rng)),
            bias: Param::new(format!("{name}.b"), Tensor::zeros(&[cout])),
            cin,
            cout,
            cols: Vec::new(),
            hw: (0, 0),
        }
    }

    pub fn forward(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        expect_rank("conv2d_3x3", &x, 4)?;
        let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
        if c != self.cin {
            return Err(shape_err("conv2d_3x3", format!("{} input channels, layer takes {}", c, self.cin)));
        }
        let hw = h * w;
        let k = c * 9;
        self.hw = (h, w);
        self.cols.resize_with(n, Vec::new);
        let mut y = Tensor::zeros(&[n, self.cout, h, w]);
        for (s, cols) in self.cols.iter_mut().enumerate() {
            cols.resize(k * hw, T::zero());
            im2col(&x.data[s * c * hw..(s + 1) * c * hw], c, h, w, cols);
            let out = &mut y.data[s * self.cout * hw..(s + 1) * self.cout * hw];
            for (o, row) in out.chunks_mut(hw).enumerate() {
                row.iter_mut().for_each(|v| *v = self.bias.value.data[o]);
            }
            T::gemm(self.cout, k, hw, &self.weight.value.data, false, cols, false, out, true);
        }
        Ok(y)
    }

    pub fn backward(&mut self, dy: Tensor<T>) -> Result<Tensor<T>> {
        let (h, w) = self.hw;
        let hw = h * w;
        let n = self.cols.len();
        if dy.shape != [n, self.cout, h, w] {
            return Err(shape_err("conv2d_3x3 backward", format!("{:?}", dy.shape)));
        }
        let k = self.cin * 9;
        let mut dx = Tensor::zeros(&[n, self.cin, h, w]);
        let mut dcols = vec![T::zero(); k * hw];
        for (s, cols) in self.cols.iter().enumerate() {
            let g = &dy.data[s * self.cout * hw..(s + 1) * self.cout * hw];
            T::gemm(self.cout, hw, k, g, false, cols, true, &mut self.weight.grad, true);
            for (o, row) in g.chunks(hw).enumerate() {
                self.bias.grad[o] = self.bias.grad[o] + row.iter().copied().sum();
            }
            T::gemm(k, self.cout, hw, &self.weight.value.data, true, g, false, &mut dcols, false);
            col2im(&dcols, self.cin, h, w, &mut dx.data[s * self.cin * hw..(s + 1) * self.cin * hw]);
        }
        Ok(dx)
    }
}

/// 2×2 max pooling with stride 2.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    argmax: Vec<usize>,
    in_shape: Vec<usize>,
}

impl MaxPool2 {
    pub fn forward<T: Scalar>(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        expect_rank("maxpool_2x2", &x, 4)?;
        let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err("maxpool_2x2", format!("odd spatial size {h}x{w}")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let mut y = Tensor::zeros(&[n, c, ho, wo]);
        self.argmax.clear();
        self.argmax.reserve(y.len());
        self.in_shape = x.shape.clone();
        for plane in 0..n * c {
            let base = plane * h * w;
            for yo in 0..ho {
                for xo in 0..wo {
                    let mut best = base + 2 * yo * w + 2 * xo;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * yo + dy) * w + 2 * xo + dx;
                        if x.data[idx] > x.data[best] {
                            best = idx;
                        }
                    }
                    y.data[plane * ho * wo + yo * wo + xo] = x.data[best];
                    self.argmax.push(best);
                }
            }
        }
        Ok(y)
    }

    pub fn backward<T: Scalar>(&mut self, dy: Tensor<T>) -> Result<Tensor<T>> {
        if dy.len() != self.argmax.len() {
            return Err(shape_err("maxpool_2x2 backward", format!("{:?}", dy.shape)));
        }
        let mut dx = Tensor::zeros(&self.in_shape);
        for (g, &idx) in dy.data.iter().zip(&self.argmax) {
            dx.data[idx] = dx.data[idx] + *g;
        }
        Ok(dx)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Relu {
    pub fn forward<T: Scalar>(&mut self, mut x: Tensor<T>) -> Tensor<T> {
        self.mask.clear();
        self.mask.extend(x.data.iter().map(|v| *v > T::zero()));
        for (v, keep) in x.data.iter_mut().zip(&self.mask) {
            if !keep {
                *v = T::zero();
            }
        }
        x
    }

    pub fn backward<T: Scalar>(&mut self, mut dy: Tensor<T>) -> Result<Tensor<T>> {
        if dy.len() != self.mask.len() {
            return Err(shape_err("relu backward", format!("{:?}", dy.shape)));
        }
        for (g, keep) in dy.data.iter_mut().zip(&self.mask) {
            if !keep {
                *g = T::zero();
            }
        }
        Ok(dy)
    }
}

/// Fully connected layer on `[rows, in]` inputs; weight layout `[in, out]`.
#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::with_weight(name, he_normal(&[fan_in, fan_out], fan_in, rng))
    }

    pub fn zeroed(name: &str, fan_in: usize, fan_out: usize) -> Self {
        Self::with_weight(name, Tensor::zeros(&[fan_in, fan_out]))
    }

    fn with_weight(name: &str, w: Tensor<T>) -> Self {
        let out = w.shape[1];
        Self {
            weight: Param::new(format!("{name}.w"), w),
            bias: Param::new(format!("{name}.b"), Tensor::zeros(&[out])),
            input: Tensor::zeros(&[0]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.value.shape[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.value.shape[1]
    }

    pub fn forward(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        expect_rank("dense", &x, 2)?;
        let (rows, fin, fout) = (x.shape[0], self.fan_in(), self.fan_out());
        if x.shape[1] != fin {
            return Err(shape_err("dense", format!("input {:?}, weight {:?}", x.shape, self.weight.value.shape)));
        }
        let mut y = Tensor::zeros(&[rows, fout]);
        for row in y.data.chunks_mut(fout) {
            row.copy_from_slice(&self.bias.value.data);
        }
        T::gemm(rows, fin, fout, &x.data, false, &self.weight.value.data, false, &mut y.data, true);
        self.input = x;
        Ok(y)
    }

    pub fn backward(&mut self, dy: Tensor<T>) -> Result<Tensor<T>> {
        let (rows, fin, fout) = (self.input.shape[0], self.fan_in(), self.fan_out());
        if dy.shape != [rows, fout] {
            return Err(shape_err("dense backward", format!("{:?}", dy.shape)));
        }
        T::gemm(fin, rows, fout, &self.input.data, true, &dy.data, false, &mut self.weight.grad, true);
        for row in dy.data.chunks(fout) {
            for (g, d) in self.bias.grad.iter_mut().zip(row) {
                *g = *g + *d;
            }
        }
        let mut dx = Tensor::zeros(&[rows, fin]);
        T::gemm(rows, fout, fin, &dy.data, false, &self.weight.value.data, true, &mut dx.data, false);
        Ok(dx)
    }
}

/// Inverted dropout: survivors are scaled by `1/keep` at train time, the
/// layer is the identity at eval time.
#[derive(Debug, Clone)]
pub struct Dropout<T> {
    pub keep: f64,
    mask: Vec<T>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(keep: f64) -> Self {
        Self {
            keep,
            mask: Vec::new(),
        }
    }

    pub fn forward(&mut self, mut x: Tensor<T>, ctx: &mut Ctx) -> Tensor<T> {
        self.mask.clear();
        if !ctx.train || self.keep >= 1.0 {
            self.mask.resize(x.len(), T::one());
            return x;
        }
        let scale = T::of(1.0 / self.keep);
        for v in x.data.iter_mut() {
            let m = if ctx.rng.random::<f64>() < self.keep {
                scale
            } else {
                T::zero()
            };
            self.mask.push(m);
            *v = *v * m;
        }
        x
    }

    pub fn backward(&mut self, mut dy: Tensor<T>) -> Result<Tensor<T>> {
        if dy.len() != self.mask.len() {
            return Err(shape_err("dropout backward", format!("{:?}", dy.shape)));
        }
        for (g, m) in dy.data.iter_mut().zip(&self.mask) {
            *g = *g * *m;
        }
        Ok(dy)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let cols = *logits.shape.last().unwrap_or(&1);
    let mut out = logits.clone();
    for row in out.data.chunks_mut(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    out
}

/// Mean softmax cross-entropy over the batch; returns the loss, the
/// gradient w.r.t. the logits, and the probabilities.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>, Tensor<T>)> {
    expect_rank("softmax_cross_entropy", logits, 2)?;
    let (rows, cols) = (logits.shape[0], logits.shape[1]);
    if labels.len() != rows || labels.iter().any(|&l| l >= cols) {
        return Err(shape_err(
            "softmax_cross_entropy",
            format!("{} labels for logits {:?}", labels.len(), logits.shape),
        ));
    }
    let probs = softmax(logits);
    let inv_n = T::of(1.0 / rows as f64);
    let tiny = T::of(1e-300f64.max(f32::MIN_POSITIVE as f64));
    let mut loss = T::zero();
    let mut grad = probs.clone();
    for (r, &label) in labels.iter().enumerate() {
        loss = loss - probs.data[r * cols + label].max(tiny).ln();
        grad.data[r * cols + label] = grad.data[r * cols + label] - T::one();
    }
    grad.data.iter_mut().for_each(|g| *g = *g * inv_n);
    Ok((loss * inv_n, grad, probs))
}

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(Conv3x3<T>),
    Pool(MaxPool2),
    Relu(Relu),
    Dense(Dense<T>),
    Dropout(Dropout<T>),
}

/// Straight chain of layers.
#[derive(Debug, Clone, Default)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn forward(&mut self, mut x: Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>> {
        for layer in &mut self.layers {
            x = match layer {
                Layer::Conv(l) => l.forward(x)?,
                Layer::Pool(l) => l.forward(x)?,
                Layer::Relu(l) => l.forward(x),
                Layer::Dense(l) => l.forward(x)?,
                Layer::Dropout(l) => l.forward(x, ctx),
            };
        }
        Ok(x)
    }

    pub fn backward(&mut self, mut dy: Tensor<T>) -> Result<Tensor<T>> {
        for layer in self.layers.iter_mut().rev() {
            dy = match layer {
                Layer::Conv(l) => l.backward(dy)?,
                Layer::Pool(l) => l.backward(dy)?,
                Layer::Relu(l) => l.backward(dy)?,
                Layer::Dense(l) => l.backward(dy)?,
                Layer::Dropout(l) => l.backward(dy)?,
            };
        }
        Ok(dy)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                Layer::Conv(c) => vec![&c.weight, &c.bias],
                Layer::Dense(d) => vec![&d.weight, &d.bias],
                _ => vec![],
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| match l {
                Layer::Conv(c) => vec![&mut c.weight, &mut c.bias],
                Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
                _ => vec![],
            })
            .collect()
    }
}
