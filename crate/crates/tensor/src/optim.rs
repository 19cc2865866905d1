use crate::element::Element;
use crate::tensor::Tensor;

/// First/second moment buffers of the Adam optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

/// A trainable tensor with a hierarchical name such as `stage2.0.branch1.0.conv1.weight`.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub adam: AdamState<T>,
}

impl<T: Element> Parameter<T> {
    pub fn new(name: impl Into<String>, tensor: Tensor<T>) -> Self {
        let len = tensor.numel();
        Self {
            name: name.into(),
            tensor: tensor.with_requires_grad(true),
            adam: AdamState {
                m: vec![T::zero(); len],
                v: vec![T::zero(); len],
                step: 0,
            },
        }
    }

    pub fn numel(&self) -> usize {
        self.tensor.numel()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of every parameter holding a gradient.
/// Parameters without a gradient are left untouched.
pub fn adam_step<T: Element>(params: &mut [Parameter<T>], cfg: &AdamConfig) {
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
    for p in params.iter_mut() {
        let Some(grad) = p.tensor.grad().map(<[T]>::to_vec) else {
            continue;
        };
        p.adam.step += 1;
        let t = p.adam.step as i32;
        let c1 = T::one() - T::lit(cfg.beta1.powi(t));
        let c2 = T::one() - T::lit(cfg.beta2.powi(t));
        let AdamState { m, v, .. } = &mut p.adam;
        for (((w, &g), m), v) in p
            .tensor
            .data_mut()
            .iter_mut()
            .zip(&grad)
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

pub fn zero_grads<T: Element>(params: &mut [Parameter<T>]) {
    params.iter_mut().for_each(|p| p.tensor.zero_grad());
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(w: f64) -> Parameter<f64> {
        Parameter::new("w", Tensor::from_vec(&[1], vec![w]).unwrap())
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![scalar(0.5)];
        p[0].tensor.accumulate_grad(&[3.0]);
        adam_step(&mut p, &AdamConfig::default());
        let delta = p[0].tensor.data()[0] - 0.5;
        assert!((delta + 1e-3).abs() < 1e-9, "delta {delta}");
        assert_eq!(p[0].adam.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut p = vec![scalar(0.5)];
        p[0].tensor.accumulate_grad(&[0.0]);
        adam_step(&mut p, &AdamConfig::default());
        assert_eq!(p[0].tensor.data()[0], 0.5);
        assert_eq!(p[0].adam.m[0], 0.0);
        assert_eq!(p[0].adam.v[0], 0.0);
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let mut p = vec![scalar(0.5)];
        p[0].tensor.accumulate_grad(&[1.0]);
        adam_step(&mut p, &AdamConfig::default());
        let (m1, v1) = (p[0].adam.m[0], p[0].adam.v[0]);
        zero_grads(&mut p);
        p[0].tensor.accumulate_grad(&[0.0]);
        adam_step(&mut p, &AdamConfig::default());
        assert!((p[0].adam.m[0] - 0.9 * m1).abs() < 1e-15);
        assert!((p[0].adam.v[0] - 0.999 * v1).abs() < 1e-15);
    }

    #[test]
    fn quadratic_magnitude_decreases_every_step() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut p = vec![scalar(1.0)];
        let mut prev = 1.0f64;
        for _ in 0..10 {
            let w = p[0].tensor.data()[0];
            zero_grads(&mut p);
            p[0].tensor.accumulate_grad(&[2.0 * w]);
            adam_step(&mut p, &cfg);
            let now = p[0].tensor.data()[0].abs();
            assert!(now < prev, "|w| went from {prev} to {now}");
            prev = now;
        }
        // Reference trajectory computed independently in double precision.
        assert!((p[0].tensor.data()[0] - 0.076_249_155_606_911_76).abs() < 1e-12);
    }

    #[test]
    fn parameter_without_gradient_is_skipped() {
        let mut p = vec![scalar(2.0)];
        adam_step(&mut p, &AdamConfig::default());
        assert_eq!(p[0].adam.step, 0);
        assert_eq!(p[0].tensor.data()[0], 2.0);
    }
}
