use serde::{Deserialize, Serialize};

use crate::diffengine::params::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr, .. } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam(1e-3)
    }
}

/// First-order optimizer with moment state carried between calls.
#[derive(Clone, Debug)]
pub struct Optimizer<T = f32> {
    config: OptimizerConfig,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        if !(config.lr() > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                config.lr()
            )));
        }
        Ok(Self {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update. A non-finite gradient anywhere rejects the whole
    /// step and leaves both parameters and moment state untouched.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "{} gradient slots for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for ((pn, p), (gn, g)) in params.iter().zip(grads.iter()) {
            if pn != gn || p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient `{gn}` {:?} does not match parameter `{pn}` {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(gn.to_string()));
            }
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|(_, g)| vec![T::zero(); g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        match self.config {
            OptimizerConfig::Sgd { lr, momentum } => {
                let (lr, mu) = (T::from_f64(lr), T::from_f64(momentum));
                for i in 0..params.len() {
                    let g = grads.tensor_at(i).data();
                    let buf = &mut self.m[i];
                    let p = params.tensor_at_mut(i).data_mut();
                    for j in 0..p.len() {
                        buf[j] = mu * buf[j] + g[j];
                        p[j] = p[j] - lr * buf[j];
                    }
                }
            }
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
                let (one, lr, eps) = (T::one(), T::from_f64(lr), T::from_f64(eps));
                let (bc1, bc2) = (T::from_f64(bc1), T::from_f64(bc2));
                for i in 0..params.len() {
                    let g = grads.tensor_at(i).data();
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    let p = params.tensor_at_mut(i).data_mut();
                    for j in 0..p.len() {
                        m[j] = b1 * m[j] + (one - b1) * g[j];
                        v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                        let mhat = m[j] / bc1;
                        let vhat = v[j] / bc2;
                        p[j] = p[j] - lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(v: Vec<f64>) -> ParamSet<f64> {
        let mut p = ParamSet::new(0);
        p.insert("w", Tensor::new(vec![v.len()], v).unwrap()).unwrap();
        p
    }

    #[test]
    fn sgd_unit_lr_subtracts_gradient() {
        let mut p = single(vec![1.0, -2.0, 0.5]);
        let g = single(vec![0.25, 1.0, -0.5]);
        let mut opt = Optimizer::new(OptimizerConfig::Sgd { lr: 1.0, momentum: 0.0 }).unwrap();
        opt.step(&mut p, &g).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[0.75, -3.0, 1.0]);
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut p = single(vec![0.3, -0.7]);
        let g = single(vec![0.0, 0.0]);
        let mut opt = Optimizer::new(OptimizerConfig::adam(1e-3)).unwrap();
        for _ in 0..5 {
            opt.step(&mut p, &g).unwrap();
        }
        let w = p.get("w").unwrap().data();
        assert!((w[0] - 0.3).abs() < 1e-12 && (w[1] + 0.7).abs() < 1e-12);
    }

    #[test]
    fn adam_two_steps_match_hand_unrolled_recurrence() {
        let (lr, b1, b2, eps, g, p0) = (0.01f64, 0.9f64, 0.999f64, 1e-8f64, 0.5f64, 1.0f64);
        // step 1
        let m1 = (1.0 - b1) * g;
        let v1 = (1.0 - b2) * g * g;
        let p1 = p0 - lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
        // step 2
        let m2 = b1 * m1 + (1.0 - b1) * g;
        let v2 = b2 * v1 + (1.0 - b2) * g * g;
        let p2 = p1 - lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);

        let mut p = single(vec![p0]);
        let grads = single(vec![g]);
        let mut opt = Optimizer::new(OptimizerConfig::Adam {
            lr,
            beta1: b1,
            beta2: b2,
            eps,
        })
        .unwrap();
        opt.step(&mut p, &grads).unwrap();
        opt.step(&mut p, &grads).unwrap();
        assert!((p.get("w").unwrap().data()[0] - p2).abs() < 1e-14);
        // constant gradient: each bias-corrected step is ~lr
        assert!((p0 - p2 - 2.0 * lr).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_is_rejected_by_name() {
        let mut p = single(vec![1.0]);
        let g = single(vec![f64::NAN]);
        let mut opt = Optimizer::new(OptimizerConfig::adam(1e-3)).unwrap();
        match opt.step(&mut p, &g) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "w"),
            other => panic!("expected rejection, got {other:?}"),
        }
        assert_eq!(p.get("w").unwrap().data(), &[1.0]);
        assert_eq!(opt.steps_taken(), 0);
    }

    #[test]
    fn rejects_nonpositive_lr() {
        assert!(Optimizer::<f32>::new(OptimizerConfig::Sgd { lr: 0.0, momentum: 0.0 }).is_err());
    }
}
