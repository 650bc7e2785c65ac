//! Central finite differences against the tape's analytic gradients.

use rand::seq::index;
use serde::Serialize;

use super::params::ModelParams;
use crate::error::Result;
use crate::rng::rng_for;

#[derive(Clone, Copy, Debug)]
pub struct GradcheckConfig {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Coordinates sampled per tensor; smaller tensors are checked in full.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            tolerance: 1e-4,
            max_coords: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TensorReport {
    pub name: String,
    pub checked: usize,
    /// Coordinates sitting on a non-differentiable point, excluded from the max.
    pub kinks: Vec<usize>,
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub tensors: Vec<TensorReport>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    pub fn num_checked(&self) -> usize {
        self.tensors.iter().map(|t| t.checked).sum()
    }

    pub fn num_kinks(&self) -> usize {
        self.tensors.iter().map(|t| t.kinks.len()).sum()
    }
}

impl std::fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for t in &self.tensors {
            writeln!(
                f,
                "{:<12} checked {:>4}  kinks {:>3}  max rel err {:.3e}",
                t.name,
                t.checked,
                t.kinks.len(),
                t.max_rel_error
            )?;
        }
        write!(
            f,
            "overall max rel err {:.3e} (tolerance {:.0e}): {}",
            self.max_rel_error,
            self.tolerance,
            if self.passed() { "pass" } else { "FAIL" }
        )
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-12)
}

/// `loss_fn(params, with_grad)` must return the loss and, when `with_grad` is
/// set, accumulate its gradient into `params` (which arrive zeroed). It must be
/// deterministic: dropout off or masks keyed independently of call count.
///
/// A coordinate whose check fails is re-probed with one-sided differences at
/// `epsilon` and `epsilon / 10`; if the gap between the two sides does not
/// shrink with the step, the loss has a kink there and the coordinate is
/// reported instead of counted.
pub fn gradcheck<F>(params: &mut ModelParams, mut loss_fn: F, cfg: GradcheckConfig) -> Result<GradcheckReport>
where
    F: FnMut(&mut ModelParams, bool) -> Result<f64>,
{
    params.zero_grad();
    let f0 = loss_fn(params, true)?;
    let analytic: Vec<Vec<f64>> = params.tensors().iter().map(|t| t.grad.clone()).collect();
    params.zero_grad();

    let eps = cfg.epsilon;
    let mut reports = Vec::new();
    for slot in 0..params.tensors().len() {
        let (name, len, trainable) = {
            let t = &params.tensors()[slot];
            (t.name.clone(), t.len(), t.trainable)
        };
        if !trainable || len == 0 {
            continue;
        }
        let coords: Vec<usize> = if len <= cfg.max_coords {
            (0..len).collect()
        } else {
            let mut rng = rng_for(cfg.seed, &[0x6C8C, slot as u64]);
            let mut v = index::sample(&mut rng, len, cfg.max_coords).into_vec();
            v.sort_unstable();
            v
        };
        let mut rep = TensorReport {
            name,
            checked: 0,
            kinks: Vec::new(),
            max_rel_error: 0.0,
            worst_index: None,
        };
        for &i in &coords {
            let x = params.tensors()[slot].values[i];
            let mut eval = |p: &mut ModelParams, v: f64| -> Result<f64> {
                p.tensors_mut()[slot].values[i] = v;
                loss_fn(p, false)
            };
            let fp = eval(params, x + eps)?;
            let fm = eval(params, x - eps)?;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic[slot][i];
            let err = relative_error(a, numeric);
            if err >= cfg.tolerance {
                let h = eps / 10.0;
                let fp_s = eval(params, x + h)?;
                let fm_s = eval(params, x - h)?;
                params.tensors_mut()[slot].values[i] = x;
                let gap_big = ((fp - f0) - (f0 - fm)).abs() / eps;
                let gap_small = ((fp_s - f0) - (f0 - fm_s)).abs() / h;
                if gap_small > 1e-6 && gap_small > 0.5 * gap_big {
                    rep.kinks.push(i);
                    continue;
                }
            }
            params.tensors_mut()[slot].values[i] = x;
            rep.checked += 1;
            if err > rep.max_rel_error {
                rep.max_rel_error = err;
                rep.worst_index = Some(i);
            }
        }
        reports.push(rep);
    }
    let max_rel_error = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        tensors: reports,
        max_rel_error,
        tolerance: cfg.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::params::{ModelDims, ParamId};
    use crate::numeric::tape::{Activation, Tape};

    fn params() -> ModelParams {
        ModelParams::init(
            ModelDims {
                num_entities: 3,
                num_relations: 1,
                num_concepts: 1,
                dim: 2,
                time_dim: 1,
            },
            5,
        )
        .unwrap()
    }

    #[test]
    fn quadratic_is_near_exact() {
        let mut p = params();
        let report = gradcheck(
            &mut p,
            |p, grad| {
                let mut t = Tape::new(false, 0);
                let x = t.param_row(p, ParamId::Entity, 1)?;
                let w = t.param(p, ParamId::UpperBranch)?;
                let y = t.matvec(w, 2, 2, x)?;
                let l = t.dot(y, y)?;
                if grad {
                    t.backward(l, p)?;
                }
                Ok(t.scalar(l))
            },
            GradcheckConfig {
                tolerance: 1e-9,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.passed(), "{report}");
        assert_eq!(report.num_kinks(), 0);
    }

    #[test]
    fn leaky_relu_kink_is_flagged() {
        let mut p = params();
        p.get_mut(ParamId::Entity).values = vec![0.0, 1.0, -2.0, 0.5, 0.25, 3.0];
        let report = gradcheck(
            &mut p,
            |p, grad| {
                let mut t = Tape::new(false, 0);
                let x = t.param(p, ParamId::Entity)?;
                let y = t.activation(x, Activation::LeakyRelu);
                let ones = t.constant(vec![1.0; 6]);
                let l = t.dot(y, ones)?;
                if grad {
                    t.backward(l, p)?;
                }
                Ok(t.scalar(l))
            },
            GradcheckConfig::default(),
        )
        .unwrap();
        let ent = report.tensors.iter().find(|r| r.name == "entity_emb").unwrap();
        assert_eq!(ent.kinks, vec![0]);
        assert!(report.passed(), "{report}");
    }
}
