//! Adam and RMSprop parameter updates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Adam,
    RmsProp,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            _ => Err(Error::invalid(format!("unknown optimizer {s:?}"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::RmsProp => "rmsprop",
        })
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const RHO: f64 = 0.99;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n_params: usize) -> Self {
        Optimizer { kind, lr, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    /// One update. Fails without touching `params` if any gradient is NaN or infinite.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::contract(format!(
                "optimizer shapes differ: {} params, {} grads, state {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient component {i} is {}", grads[i])));
        }
        self.t += 1;
        match self.kind {
            OptimizerKind::Adam => {
                let c1 = 1.0 - BETA1.powi(self.t);
                let c2 = 1.0 - BETA2.powi(self.t);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
                    self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    params[i] -= self.lr * m_hat / (v_hat.sqrt() + EPS);
                }
            }
            OptimizerKind::RmsProp => {
                for i in 0..params.len() {
                    let g = grads[i];
                    self.v[i] = RHO * self.v[i] + (1.0 - RHO) * g * g;
                    params[i] -= self.lr * g / (self.v[i].sqrt() + EPS);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        for kind in [OptimizerKind::Adam, OptimizerKind::RmsProp] {
            let mut p = vec![0.3, -1.2];
            let mut opt = Optimizer::new(kind, 0.001, 2);
            opt.step(&mut p, &[0.0, 0.0]).unwrap();
            assert_eq!(p, vec![0.3, -1.2]);
        }
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let mut p = vec![0.0; 4];
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.001, 4);
        opt.step(&mut p, &[1.0; 4]).unwrap();
        for x in p {
            assert!((x + 0.001).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_inputs_give_identical_outputs() {
        let run = || {
            let mut p = vec![0.5, 0.25, -0.1];
            let mut opt = Optimizer::new(OptimizerKind::RmsProp, 0.0003, 3);
            for k in 0..5 {
                opt.step(&mut p, &[0.1 * k as f64, -0.2, 0.7]).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn nan_gradient_is_rejected_before_update() {
        let mut p = vec![1.0, 2.0];
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.001, 2);
        assert!(matches!(opt.step(&mut p, &[0.5, f64::NAN]), Err(Error::NonFinite(_))));
        assert_eq!(p, vec![1.0, 2.0]);
    }
}
