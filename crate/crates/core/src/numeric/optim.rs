use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use crate::error::{FiltError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = FiltError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(FiltError::InvalidArgument(format!("unknown optimizer `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            ..Self::default()
        }
    }
}

/// Dense Adam or plain SGD. Moment buffers are allocated lazily per tensor.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// First-moment buffer of tensor `i`, if Adam has touched it.
    pub fn first_moment(&self, i: usize) -> Option<&[f64]> {
        self.m.get(i).map(|v| v.as_slice())
    }

    /// Apply one update and zero every gradient. Frozen tensors are skipped
    /// and their gradients discarded. Nothing is modified when any trainable
    /// gradient is non-finite.
    pub fn step(&mut self, params: &mut ModelParams) -> Result<()> {
        if let Some(t) = params
            .tensors()
            .iter()
            .find(|t| t.trainable && t.grad.iter().any(|g| !g.is_finite()))
        {
            return Err(FiltError::NonFiniteGradient(t.name.clone()));
        }
        let c = self.config;
        self.step += 1;
        if c.kind == OptimizerKind::Adam && self.m.is_empty() {
            self.m = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
            self.v = self.m.clone();
        }
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (i, t) in params.tensors_mut().iter_mut().enumerate() {
            if t.trainable {
                match c.kind {
                    OptimizerKind::Sgd => {
                        for (x, g) in t.values.iter_mut().zip(&t.grad) {
                            *x -= c.lr * g;
                        }
                    }
                    OptimizerKind::Adam => {
                        let (m, v) = (&mut self.m[i], &mut self.v[i]);
                        for k in 0..t.values.len() {
                            let g = t.grad[k];
                            m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g;
                            v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
                            let mh = m[k] / bc1;
                            let vh = v[k] / bc2;
                            t.values[k] -= c.lr * mh / (vh.sqrt() + c.eps);
                        }
                    }
                }
            }
            t.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::params::{ModelDims, ParamId};

    fn params() -> ModelParams {
        ModelParams::init(
            ModelDims {
                num_entities: 2,
                num_relations: 1,
                num_concepts: 1,
                dim: 2,
                time_dim: 1,
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn sgd_unit_lr_subtracts_grad() {
        let mut p = params();
        let before = p.get(ParamId::Entity).values.clone();
        p.get_mut(ParamId::Entity).grad = vec![0.5, -1.0, 2.0, 0.0];
        Optimizer::new(OptimizerConfig::sgd(1.0)).step(&mut p).unwrap();
        let after = &p.get(ParamId::Entity).values;
        let expect: Vec<f64> = before.iter().zip([0.5, -1.0, 2.0, 0.0]).map(|(b, g)| b - g).collect();
        assert_eq!(after, &expect);
        assert!(p.get(ParamId::Entity).grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn adam_zero_grad_leaves_params() {
        let mut p = params();
        let before = p.clone();
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.1));
        opt.step(&mut p).unwrap();
        for (a, b) in p.tensors().iter().zip(before.tensors()) {
            assert_eq!(a.values, b.values);
        }
    }

    #[test]
    fn adam_moments_decay() {
        let mut p = params();
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.1));
        p.get_mut(ParamId::Entity).grad[0] = 1.0;
        opt.step(&mut p).unwrap();
        let m1 = opt.first_moment(0).unwrap()[0];
        opt.step(&mut p).unwrap();
        assert!((opt.first_moment(0).unwrap()[0] - 0.9 * m1).abs() < 1e-15);
    }

    #[test]
    fn non_finite_grad_names_tensor() {
        let mut p = params();
        p.get_mut(ParamId::EncoderWeight).grad[1] = f64::NAN;
        let err = Optimizer::new(OptimizerConfig::default()).step(&mut p).unwrap_err();
        assert!(err.to_string().contains("w_g"), "{err}");
        assert!(err.is_numeric());
    }

    #[test]
    fn frozen_tensor_is_not_updated() {
        let mut p = params();
        p.get_mut(ParamId::UpperGate).trainable = false;
        p.get_mut(ParamId::UpperGate).grad[0] = 1.0;
        Optimizer::new(OptimizerConfig::sgd(1.0)).step(&mut p).unwrap();
        assert_eq!(p.scalar(ParamId::UpperGate), 1.0);
        assert_eq!(p.get(ParamId::UpperGate).grad[0], 0.0);
    }
}
