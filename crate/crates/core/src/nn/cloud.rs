//! Point-cloud correlation stream.
//!
//! Each cloud goes through its own PointNet-segmentation-style extractor
//! (shared per-point MLP, max-pooled global feature, per-point descriptor
//! from local ‖ global). The model/scene descriptor dot products form a
//! correlation matrix; its row-wise max (best scene match per model point)
//! feeds the classifier head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Ctx, Dense, Dropout, Layer, Param, Relu, Sequential};
use super::tensor::{Scalar, Tensor};
use super::Prob2;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudArch {
    pub points: usize,
    /// Shared per-point MLP widths; the last entry is the global feature size.
    pub mlp: Vec<usize>,
    /// How many leading MLP layers produce the local feature.
    pub local_layers: usize,
    /// Per-point MLP applied to `local ‖ global`; the last entry is the
    /// descriptor size used in the correlation.
    pub seg: Vec<usize>,
    /// Hidden widths of the classifier head.
    pub fc: Vec<usize>,
    pub dropout_keep: f64,
}

impl Default for CloudArch {
    fn default() -> Self {
        Self {
            points: 1024,
            mlp: vec![64, 64, 64, 128, 1024],
            local_layers: 2,
            seg: vec![128],
            fc: vec![512, 256],
            dropout_keep: 0.7,
        }
    }
}

impl CloudArch {
    /// CPU-sized profile: 256 points, extractor widths scaled down 4×.
    pub fn desk() -> Self {
        Self {
            points: 256,
            mlp: vec![32, 32, 32, 64, 256],
            local_layers: 2,
            seg: vec![64],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Architecture(m));
        if self.points == 0 {
            return bad("zero points".into());
        }
        if self.local_layers == 0 || self.local_layers >= self.mlp.len() {
            return bad(format!(
                "local_layers must be in 1..{}, got {}",
                self.mlp.len(),
                self.local_layers
            ));
        }
        if self.seg.is_empty() || self.fc.is_empty() {
            return bad("seg and fc need at least one layer".into());
        }
        if [&self.mlp, &self.seg, &self.fc].iter().any(|v| v.contains(&0)) {
            return bad("zero layer width".into());
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return bad(format!("dropout keep {} outside (0, 1]", self.dropout_keep));
        }
        Ok(())
    }
}

fn mlp<T: Scalar>(prefix: &str, fan_in: usize, widths: &[usize], start: usize, rng: &mut ChaCha8Rng) -> Sequential<T> {
    let mut layers = Vec::new();
    let mut fin = fan_in;
    for (i, &w) in widths.iter().enumerate() {
        layers.push(Layer::Dense(Dense::new(&format!("{prefix}.mlp{}", start + i + 1), fin, w, rng)));
        layers.push(Layer::Relu(Relu::default()));
        fin = w;
    }
    Sequential { layers }
}

/// Per-point feature extractor for one cloud.
#[derive(Debug, Clone)]
struct PointFeatures<T> {
    early: Sequential<T>,
    late: Sequential<T>,
    seg: Sequential<T>,
    local_width: usize,
    global_width: usize,
    global_argmax: Vec<usize>,
    batch: usize,
    points: usize,
}

impl<T: Scalar> PointFeatures<T> {
    fn new(prefix: &str, arch: &CloudArch, rng: &mut ChaCha8Rng) -> Self {
        let (local, deep) = arch.mlp.split_at(arch.local_layers);
        let local_width = *local.last().expect("validated");
        let global_width = *deep.last().expect("validated");
        let early = mlp(prefix, 3, local, 0, rng);
        let late = mlp(prefix, local_width, deep, arch.local_layers, rng);
        let seg = mlp(&format!("{prefix}.seg"), local_width + global_width, &arch.seg, 0, rng);
        Self {
            early,
            late,
            seg,
            local_width,
            global_width,
            global_argmax: Vec::new(),
            batch: 0,
            points: 0,
        }
    }

    /// `x`: `[batch·points, 3]` → descriptors `[batch·points, F]`.
    fn forward(&mut self, x: Tensor<T>, batch: usize, ctx: &mut Ctx) -> Result<Tensor<T>> {
        let points = x.shape[0] / batch;
        self.batch = batch;
        self.points = points;
        let local = self.early.forward(x, ctx)?;
        let deep = self.late.forward(local.clone(), ctx)?;
        let (lw, gw) = (self.local_width, self.global_width);

        let mut global = vec![T::neg_infinity(); batch * gw];
        self.global_argmax = vec![0; batch * gw];
        for b in 0..batch {
            for p in 0..points {
                let row = &deep.data[(b * points + p) * gw..(b * points + p + 1) * gw];
                for (g, &v) in row.iter().enumerate() {
                    if v > global[b * gw + g] {
                        global[b * gw + g] = v;
                        self.global_argmax[b * gw + g] = b * points + p;
                    }
                }
            }
        }

        let mut joined = Vec::with_capacity(batch * points * (lw + gw));
        for b in 0..batch {
            for p in 0..points {
                let r = b * points + p;
                joined.extend_from_slice(&local.data[r * lw..(r + 1) * lw]);
                joined.extend_from_slice(&global[b * gw..(b + 1) * gw]);
            }
        }
        let joined = Tensor::from_vec(&[batch * points, lw + gw], joined)?;
        self.seg.forward(joined, ctx)
    }

    fn backward(&mut self, dfeat: Tensor<T>) -> Result<Tensor<T>> {
        let (lw, gw) = (self.local_width, self.global_width);
        let rows = self.batch * self.points;
        let djoined = self.seg.backward(dfeat)?;
        let mut dlocal = Tensor::zeros(&[rows, lw]);
        let mut ddeep = Tensor::zeros(&[rows, gw]);
        for r in 0..rows {
            let src = &djoined.data[r * (lw + gw)..(r + 1) * (lw + gw)];
            dlocal.data[r * lw..(r + 1) * lw].copy_from_slice(&src[..lw]);
            let b = r / self.points;
            for g in 0..gw {
                let target = self.global_argmax[b * gw + g] * gw + g;
                ddeep.data[target] = ddeep.data[target] + src[lw + g];
            }
        }
        let dlocal_deep = self.late.backward(ddeep)?;
        for (a, b) in dlocal.data.iter_mut().zip(&dlocal_deep.data) {
            *a = *a + *b;
        }
        self.early.backward(dlocal)
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.early.params();
        p.extend(self.late.params());
        p.extend(self.seg.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.early.params_mut();
        p.extend(self.late.params_mut());
        p.extend(self.seg.params_mut());
        p
    }
}

#[derive(Debug, Clone)]
pub struct CloudNet<T> {
    pub arch: CloudArch,
    model_features: PointFeatures<T>,
    scene_features: PointFeatures<T>,
    head: Sequential<T>,
    model_desc: Tensor<T>,
    scene_desc: Tensor<T>,
    match_argmax: Vec<usize>,
    batch: usize,
}

impl<T: Scalar> CloudNet<T> {
    pub fn new(arch: CloudArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model_features = PointFeatures::new("model", &arch, &mut rng);
        let scene_features = PointFeatures::new("scene", &arch, &mut rng);
        let mut layers = Vec::new();
        let mut fin = arch.points;
        for (i, &w) in arch.fc.iter().enumerate() {
            layers.push(Layer::Dense(Dense::new(&format!("fc{}", i + 1), fin, w, &mut rng)));
            layers.push(Layer::Relu(Relu::default()));
            fin = w;
        }
        layers.push(Layer::Dropout(Dropout::new(arch.dropout_keep)));
        layers.push(Layer::Dense(Dense::zeroed(&format!("fc{}", arch.fc.len() + 1), fin, 2)));
        Ok(Self {
            arch,
            model_features,
            scene_features,
            head: Sequential { layers },
            model_desc: Tensor::zeros(&[0]),
            scene_desc: Tensor::zeros(&[0]),
            match_argmax: Vec::new(),
            batch: 0,
        })
    }

    fn descriptor_width(&self) -> usize {
        *self.arch.seg.last().expect("validated")
    }

    /// Logits `[N, 2]` for scene clouds `[N, P, 3]` against the single model
    /// cloud `[P, 3]`.
    pub fn forward(&mut self, scene: Tensor<T>, model: Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>> {
        let p = self.arch.points;
        if scene.shape.len() != 3 || scene.shape[1..] != [p, 3] || model.shape != [p, 3] {
            return Err(Error::Shape {
                op: "pc_stream",
                detail: format!(
                    "scene {:?} and model {:?}, expected [N, {p}, 3] and [{p}, 3]",
                    scene.shape, model.shape
                ),
            });
        }
        let n = scene.shape[0];
        self.batch = n;
        let f = self.descriptor_width();
        self.model_desc = self.model_features.forward(model, 1, ctx)?;
        self.scene_desc = self.scene_features.forward(scene.reshaped(&[n * p, 3])?, n, ctx)?;

        let mut corr = vec![T::zero(); p * p];
        let mut matches = Tensor::zeros(&[n, p]);
        self.match_argmax = vec![0; n * p];
        for b in 0..n {
            let fs = &self.scene_desc.data[b * p * f..(b + 1) * p * f];
            T::gemm(p, f, p, &self.model_desc.data, false, fs, true, &mut corr, false);
            for m in 0..p {
                let row = &corr[m * p..(m + 1) * p];
                let mut best = 0;
                for s in 1..p {
                    if row[s] > row[best] {
                        best = s;
                    }
                }
                matches.data[b * p + m] = row[best];
                self.match_argmax[b * p + m] = best;
            }
        }
        self.head.forward(matches, ctx)
    }

    /// Back-propagates `dlogits`; returns input gradients for the scene
    /// clouds and the model cloud.
    pub fn backward(&mut self, dlogits: Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let (n, p, f) = (self.batch, self.arch.points, self.descriptor_width());
        let dmatch = self.head.backward(dlogits)?;
        let mut dmodel = Tensor::zeros(&[p, f]);
        let mut dscene = Tensor::zeros(&[n * p, f]);
        for b in 0..n {
            for m in 0..p {
                let g = dmatch.data[b * p + m];
                if g == T::zero() {
                    continue;
                }
                let s = b * p + self.match_argmax[b * p + m];
                for k in 0..f {
                    dmodel.data[m * f + k] = dmodel.data[m * f + k] + g * self.scene_desc.data[s * f + k];
                    dscene.data[s * f + k] = dscene.data[s * f + k] + g * self.model_desc.data[m * f + k];
                }
            }
        }
        let dscene_in = self.scene_features.backward(dscene)?.reshaped(&[n, p, 3])?;
        let dmodel_in = self.model_features.backward(dmodel)?;
        Ok((dscene_in, dmodel_in))
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.model_features.params();
        p.extend(self.scene_features.params());
        p.extend(self.head.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.model_features.params_mut();
        p.extend(self.scene_features.params_mut());
        p.extend(self.head.params_mut());
        p
    }

    /// Eval-mode probabilities for one scene cloud against the model cloud.
    pub fn predict(&mut self, scene: &[[f32; 3]], model: &[[f32; 3]]) -> Result<Prob2> {
        let to_t = |pts: &[[f32; 3]], shape: &[usize]| {
            Tensor::from_vec(shape, pts.iter().flatten().map(|&v| T::of(v as f64)).collect())
        };
        let logits = self.forward(
            to_t(scene, &[1, scene.len(), 3])?,
            to_t(model, &[model.len(), 3])?,
            &mut Ctx::eval(),
        )?;
        Ok(Prob2::from_row(&super::softmax(&logits).data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> CloudArch {
        CloudArch {
            points: 8,
            mlp: vec![4, 4, 6],
            local_layers: 1,
            seg: vec![5],
            fc: vec![6, 4],
            dropout_keep: 0.7,
        }
    }

    fn cloud(n: usize, phase: f32) -> Vec<[f32; 3]> {
        (0..n)
            .map(|i| {
                let a = i as f32 * 0.7 + phase;
                [a.sin(), a.cos(), (2.0 * a).sin() * 0.5]
            })
            .collect()
    }

    fn perturbed(arch: CloudArch) -> CloudNet<f64> {
        let mut net = CloudNet::<f64>::new(arch, 3).unwrap();
        for p in net.params_mut() {
            for (i, v) in p.value.data.iter_mut().enumerate() {
                *v += 0.1 * ((i % 7) as f64 - 3.0) / 3.0;
            }
        }
        net
    }

    #[test]
    fn scene_order_does_not_matter() {
        let mut net = perturbed(tiny());
        let model = cloud(8, 0.0);
        let scene = cloud(8, 0.3);
        let mut reversed = scene.clone();
        reversed.reverse();
        let a = net.predict(&scene, &model).unwrap();
        let b = net.predict(&reversed, &model).unwrap();
        assert!((a.p_valid - b.p_valid).abs() < 1e-12);
        assert!((a.p_valid + a.p_invalid - 1.0).abs() < 1e-6);
    }

    #[test]
    fn point_count_mismatch_is_an_error() {
        let mut net = CloudNet::<f32>::new(tiny(), 0).unwrap();
        let err = net.predict(&cloud(7, 0.0), &cloud(8, 0.0)).unwrap_err();
        assert!(err.to_string().starts_with("pc_stream:"), "{err}");
    }

    #[test]
    fn cold_start_is_uninformative() {
        let mut net = CloudNet::<f32>::new(CloudArch::desk(), 0).unwrap();
        let p = net.predict(&cloud(256, 0.1), &cloud(256, 0.0)).unwrap();
        assert_eq!(p.p_valid, 0.5);
    }

    #[test]
    fn invalid_architectures() {
        let mut a = tiny();
        a.local_layers = 3;
        assert!(CloudNet::<f32>::new(a, 0).is_err());
        let mut a = tiny();
        a.fc.clear();
        assert!(CloudNet::<f32>::new(a, 0).is_err());
    }
}
