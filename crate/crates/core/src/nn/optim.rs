use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

/// First-order optimizer over a flat parameter buffer.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::Sgd,
            lr,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Adam with the usual β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn adam(lr: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            lr,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one descent step `params -= update(grads)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape {
                context: "optimizer step",
                expected: params.len().to_string(),
                got: grads.len().to_string(),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericFault {
                layer: 0,
                detail: "non-finite gradient passed to optimizer".into(),
            });
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.m.len() != params.len() {
                    self.m = vec![0.0; params.len()];
                    self.v = vec![0.0; params.len()];
                }
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    params[i] -= self.lr * mh / (vh.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

/// Rescale `grads` in place so its L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_is_exact() {
        let mut p = [1.0];
        Optimizer::sgd(0.1).step(&mut p, &[1.0]).unwrap();
        assert_eq!(p[0], 0.9);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = [1.0, -3.0];
        let mut opt = Optimizer::adam(0.01);
        opt.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, [1.0, -3.0]);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn adam_first_step_has_magnitude_lr() {
        // At t = 1 the bias-corrected moments are g and g², so the step is
        // lr·g/(|g| + ε).
        for g in [1e-3, 0.5, -2.0, 1e4] {
            let mut p = [0.0];
            Optimizer::adam(0.01).step(&mut p, &[g]).unwrap();
            let expected = 0.01 * g.abs() / (g.abs() + 1e-8);
            assert!((p[0].abs() - expected).abs() < 1e-12);
            assert!((p[0].abs() - 0.01).abs() < 1e-6);
            assert_eq!(p[0].signum(), -g.signum());
        }
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = [0.0];
        assert!(Optimizer::sgd(0.1).step(&mut p, &[f64::NAN]).is_err());
        assert!(Optimizer::adam(0.1).step(&mut p, &[f64::INFINITY]).is_err());
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = [3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
    }
}
