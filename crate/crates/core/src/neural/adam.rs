use serde::{Deserialize, Serialize};

use super::tensor::{Parameters, Tensor2};
use crate::error::{Error, Result};
use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair of tensors per parameter.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub config: AdamConfig,
    m: Vec<Tensor2<F>>,
    v: Vec<Tensor2<F>>,
    t: u64,
}

impl<F: Scalar> Adam<F> {
    pub fn new<P: Parameters<F>>(config: AdamConfig, params: &P) -> Self {
        let zeros: Vec<Tensor2<F>> = params
            .tensors()
            .iter()
            .map(|(_, t)| Tensor2::zeros(t.rows(), t.cols()))
            .collect();
        Adam {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update of `params` from `grads`.
    pub fn step<P: Parameters<F>>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grads = grads.tensors();
        let mut params = params.tensors_mut();
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, ((_, g), p)) in grads.iter().zip(params.iter()).enumerate() {
            if g.shape() != p.shape() || g.shape() != self.m[i].shape() {
                return Err(Error::Shape(format!(
                    "tensor {i}: parameter {:?}, gradient {:?}, state {:?}",
                    p.shape(),
                    g.shape(),
                    self.m[i].shape()
                )));
            }
        }
        self.t += 1;
        let c = &self.config;
        let (b1, b2) = (F::of(c.beta1), F::of(c.beta2));
        let bc1 = F::one() - F::of(c.beta1.powi(self.t as i32));
        let bc2 = F::one() - F::of(c.beta2.powi(self.t as i32));
        let (lr, eps, one) = (F::of(c.lr), F::of(c.eps), F::one());
        for (i, ((_, g), p)) in grads.iter().zip(params.iter_mut()).enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (k, (w, gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[k] = b1 * m[k] + (one - b1) * *gk;
                v[k] = b2 * v[k] + (one - b2) * *gk * *gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::dense::Mlp;

    fn scalar(v: f64) -> Mlp<f64> {
        let mut m = Mlp::zeros(1, &[1]);
        m.layers[0].w.data_mut()[0] = v;
        m
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = scalar(0.7);
        let g = scalar(0.0);
        let mut opt = Adam::new(AdamConfig::default(), &p);
        for _ in 0..3 {
            opt.step(&mut p, &g).unwrap();
        }
        assert_eq!(p.layers[0].w.data()[0], 0.7);
    }

    #[test]
    fn first_step_closed_form() {
        let cfg = AdamConfig::default();
        for g0 in [0.3, -2.0, 1e-3] {
            let mut p = scalar(1.0);
            let mut opt = Adam::new(cfg, &p);
            opt.step(&mut p, &scalar(g0)).unwrap();
            // m̂ = g, v̂ = g², so the step is lr·g/(|g|+ε).
            let expected = 1.0 - cfg.lr * g0 / (g0.abs() + cfg.eps);
            assert!((p.layers[0].w.data()[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_problems_follow_identical_paths() {
        let run = || {
            let mut p = scalar(2.0);
            let mut opt = Adam::new(AdamConfig::default(), &p);
            let mut path = Vec::new();
            for _ in 0..20 {
                let w = p.layers[0].w.data()[0];
                opt.step(&mut p, &scalar(2.0 * w)).unwrap();
                path.push(p.layers[0].w.data()[0].to_bits());
            }
            path
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut p = scalar(1.0);
        let mut opt = Adam::new(AdamConfig::default(), &p);
        let g: Mlp<f64> = Mlp::zeros(2, &[1]);
        assert!(matches!(opt.step(&mut p, &g), Err(Error::Shape(_))));
        assert_eq!(opt.steps(), 0);
    }
}
