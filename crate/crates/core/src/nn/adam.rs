use super::layers::Param;
use super::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update; `step` counts from 1.
pub fn adam_step<T: Scalar>(params: &mut [&mut Param<T>], lr: f64, step: u64, cfg: &AdamConfig) {
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::of(1.0 - cfg.beta1.powi(step as i32));
    let c2 = T::of(1.0 - cfg.beta2.powi(step as i32));
    let (lr, eps) = (T::of(lr), T::of(cfg.eps));
    let one = T::one();
    for p in params.iter_mut() {
        let Param { value, grad, m, v, .. } = &mut **p;
        for i in 0..grad.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (one - b1) * g;
            v[i] = b2 * v[i] + (one - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            value.data[i] = value.data[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn param(values: Vec<f64>) -> Param<f64> {
        let n = values.len();
        Param::new("p", Tensor::from_vec(&[n], values).unwrap())
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = param(vec![1.0, -2.0]);
        for step in 1..=5 {
            adam_step(&mut [&mut p], 1e-3, step, &AdamConfig::default());
        }
        assert_eq!(p.value.data, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = param(vec![0.0, 0.0]);
        p.grad = vec![3.0, -0.25];
        adam_step(&mut [&mut p], 1e-4, 1, &AdamConfig::default());
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps).
        assert!((p.value.data[0] + 1e-4).abs() < 1e-10);
        assert!((p.value.data[1] - 1e-4).abs() < 1e-10);
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let run = || {
            let mut p = param(vec![0.5, 0.1, -0.3]);
            for step in 1..=10 {
                p.grad = p.value.data.iter().map(|x| 2.0 * x + 0.1).collect();
                adam_step(&mut [&mut p], 1e-2, step, &AdamConfig::default());
            }
            p.value.data
        };
        assert_eq!(run(), run());
    }
}
