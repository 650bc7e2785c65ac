//! Concept representations: mean initialisation from pretrained entity rows,
//! one attention correction pass, per-entity concept aggregation and the two
//! injection branches.

use serde::{Deserialize, Serialize};

use crate::data::{ConceptMap, EntityId};
use crate::error::{FiltError, Result};
use crate::numeric::tape::{softmax, Activation, NodeId, Tape};
use crate::numeric::{ModelParams, ParamId};

/// What to do with a concept none of whose members may contribute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyConceptPolicy {
    Error,
    /// Leave the concept row at its random initialisation.
    KeepInit,
}

/// Attention weights from the latest correction pass, one row per concept
/// (empty for concepts that were skipped).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConceptState {
    pub alpha: Vec<Vec<f64>>,
}

pub fn mean_rows(rows: &[&[f64]]) -> Vec<f64> {
    let mut out = vec![0.0; rows[0].len()];
    for r in rows {
        for (o, v) in out.iter_mut().zip(*r) {
            *o += v;
        }
    }
    let n = rows.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn weighted(weights: &[f64], rows: &[&[f64]]) -> Vec<f64> {
    let mut out = vec![0.0; rows[0].len()];
    for (w, r) in weights.iter().zip(rows) {
        for (o, v) in out.iter_mut().zip(*r) {
            *o += w * v;
        }
    }
    out
}

/// One correction of a single concept: `alpha = softmax(h_e . h_c)` over the
/// neighbourhood, result `sum alpha_i h_e_i`.
pub fn correct_one(h_c: &[f64], neighbours: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let logits: Vec<f64> = neighbours.iter().map(|h| dot(h, h_c)).collect();
    let alpha = softmax(&logits);
    (weighted(&alpha, neighbours), alpha)
}

/// `sum beta_i h_c_i` with `beta = softmax(h_c_i . h_e)`.
pub fn concept_vector(h_e: &[f64], concepts: &[&[f64]]) -> Result<(Vec<f64>, Vec<f64>)> {
    if concepts.is_empty() {
        return Err(FiltError::InvalidArgument("entity has no concepts".into()));
    }
    let logits: Vec<f64> = concepts.iter().map(|h| dot(h, h_e)).collect();
    let beta = softmax(&logits);
    Ok((weighted(&beta, concepts), beta))
}

/// `h + delta * act(W h_concept)` for a row-major `d x d` matrix `w`.
pub fn inject(h: &[f64], h_concept: &[f64], w: &[f64], delta: f64, act: Activation) -> Vec<f64> {
    let d = h.len();
    (0..d)
        .map(|i| h[i] + delta * act.apply(dot(&w[i * d..(i + 1) * d], h_concept)))
        .collect()
}

/// Set every concept row to the mean of its members' entity rows.
/// `members[c]` should already be restricted to background entities.
/// Returns the concepts left untouched under [`EmptyConceptPolicy::KeepInit`].
pub fn init_concepts(
    params: &mut ModelParams,
    members: &[Vec<EntityId>],
    policy: EmptyConceptPolicy,
) -> Result<Vec<usize>> {
    let num_concepts = params.get(ParamId::Concept).shape[0];
    if members.len() != num_concepts {
        return Err(FiltError::Shape {
            op: "init_concepts",
            detail: format!("{} member lists for {num_concepts} concepts", members.len()),
        });
    }
    let mut skipped = Vec::new();
    let ent = params.get(ParamId::Entity).clone();
    let table = params.get_mut(ParamId::Concept);
    for (c, m) in members.iter().enumerate() {
        if m.is_empty() {
            match policy {
                EmptyConceptPolicy::Error => {
                    return Err(FiltError::InvalidArgument(format!(
                        "concept {c} has no contributing entity"
                    )))
                }
                EmptyConceptPolicy::KeepInit => {
                    skipped.push(c);
                    continue;
                }
            }
        }
        let rows: Vec<&[f64]> = m.iter().map(|&e| ent.row(e)).collect();
        table.row_mut(c).copy_from_slice(&mean_rows(&rows));
    }
    Ok(skipped)
}

/// One simultaneous correction pass: every concept reads the pre-correction
/// table. Concepts with no members keep their row.
pub fn correct_concepts(params: &mut ModelParams, members: &[Vec<EntityId>]) -> ConceptState {
    let ent = params.get(ParamId::Entity).clone();
    let before = params.get(ParamId::Concept).clone();
    let table = params.get_mut(ParamId::Concept);
    let mut alpha = Vec::with_capacity(members.len());
    for (c, m) in members.iter().enumerate() {
        if m.is_empty() {
            alpha.push(Vec::new());
            continue;
        }
        let rows: Vec<&[f64]> = m.iter().map(|&e| ent.row(e)).collect();
        let (h, a) = correct_one(before.row(c), &rows);
        table.row_mut(c).copy_from_slice(&h);
        alpha.push(a);
    }
    ConceptState { alpha }
}

/// Tape version of [`concept_vector`] for entity `e`'s current row.
pub fn entity_concept_vector(
    tape: &mut Tape,
    params: &ModelParams,
    concepts: &ConceptMap,
    e: EntityId,
) -> Result<NodeId> {
    let cs = concepts.concepts_of(e);
    if cs.is_empty() {
        return Err(FiltError::InvalidArgument(format!("entity {e} has no concepts")));
    }
    let h_e = tape.param_row(params, ParamId::Entity, e)?;
    let rows = cs
        .iter()
        .map(|&c| tape.param_row(params, ParamId::Concept, c))
        .collect::<Result<Vec<_>>>()?;
    if rows.len() == 1 {
        return Ok(rows[0]);
    }
    let logits = rows
        .iter()
        .map(|&h| tape.dot(h, h_e))
        .collect::<Result<Vec<_>>>()?;
    let logits = tape.concat(&logits)?;
    let beta = tape.softmax(logits)?;
    tape.weighted_sum(beta, &rows)
}

/// Branch term `act(W h_concept)` before gating; `branch` is
/// [`ParamId::UpperBranch`] or [`ParamId::LowerBranch`].
pub fn branch_output(
    tape: &mut Tape,
    params: &ModelParams,
    branch: ParamId,
    h_concept: NodeId,
    act: Activation,
) -> Result<NodeId> {
    let d = params.dims.dim;
    let w = tape.param(params, branch)?;
    let m = tape.matvec(w, d, d, h_concept)?;
    Ok(tape.activation(m, act))
}

/// `h + gate * branch_out`, gate being [`ParamId::UpperGate`] or
/// [`ParamId::LowerGate`].
pub fn gated_add(
    tape: &mut Tape,
    params: &ModelParams,
    gate: ParamId,
    h: NodeId,
    branch_out: NodeId,
) -> Result<NodeId> {
    let g = tape.param(params, gate)?;
    let s = tape.scale(g, branch_out)?;
    tape.add(h, s)
}

/// Upper branch: `h_e + delta1 * act(W_c1 h_concept)`.
pub fn inject_upper(
    tape: &mut Tape,
    params: &ModelParams,
    h_e: NodeId,
    h_concept: NodeId,
    act: Activation,
) -> Result<NodeId> {
    let b = branch_output(tape, params, ParamId::UpperBranch, h_concept, act)?;
    gated_add(tape, params, ParamId::UpperGate, h_e, b)
}

/// Lower branch: `h_agg + delta2 * act(W_c2 h_concept)`.
pub fn inject_lower(
    tape: &mut Tape,
    params: &ModelParams,
    h_agg: NodeId,
    h_concept: NodeId,
    act: Activation,
) -> Result<NodeId> {
    let b = branch_output(tape, params, ParamId::LowerBranch, h_concept, act)?;
    gated_add(tape, params, ParamId::LowerGate, h_agg, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::ModelDims;

    fn params(num_entities: usize, num_concepts: usize) -> ModelParams {
        ModelParams::init(
            ModelDims {
                num_entities,
                num_relations: 1,
                num_concepts,
                dim: 2,
                time_dim: 1,
            },
            0,
        )
        .unwrap()
    }

    #[test]
    fn init_is_member_mean() {
        let mut p = params(3, 2);
        p.get_mut(ParamId::Entity).values = vec![1.0, 0.0, 0.0, 1.0, 7.0, 7.0];
        let skipped = init_concepts(&mut p, &[vec![0, 1], vec![2]], EmptyConceptPolicy::Error).unwrap();
        assert!(skipped.is_empty());
        assert_eq!(p.get(ParamId::Concept).values, vec![0.5, 0.5, 7.0, 7.0]);
    }

    #[test]
    fn empty_concept_policy() {
        let mut p = params(2, 2);
        assert!(init_concepts(&mut p, &[vec![0], vec![]], EmptyConceptPolicy::Error).is_err());
        let before = p.get(ParamId::Concept).row(1).to_vec();
        let skipped = init_concepts(&mut p, &[vec![0], vec![]], EmptyConceptPolicy::KeepInit).unwrap();
        assert_eq!(skipped, vec![1]);
        assert_eq!(p.get(ParamId::Concept).row(1), &before[..]);
    }

    #[test]
    fn correction_of_identical_members_is_a_fixed_point() {
        let mut p = params(2, 1);
        p.get_mut(ParamId::Entity).values = vec![0.3, -0.2, 0.3, -0.2];
        init_concepts(&mut p, &[vec![0, 1]], EmptyConceptPolicy::Error).unwrap();
        let st = correct_concepts(&mut p, &[vec![0, 1]]);
        assert_eq!(st.alpha[0], vec![0.5, 0.5]);
        assert_eq!(p.get(ParamId::Concept).values, vec![0.3, -0.2]);
    }

    #[test]
    fn injection_with_identity() {
        let w = [1.0, 0.0, 0.0, 1.0];
        let out = inject(&[0.0, 0.0], &[-1.0, 2.0], &w, 1.0, Activation::LeakyRelu);
        assert_eq!(out, vec![-0.01, 2.0]);
        let out = inject(&[1.0, 1.0], &[3.0, 0.0], &w, 0.0, Activation::LeakyRelu);
        assert_eq!(out, vec![1.0, 1.0]);
    }

    #[test]
    fn tape_concept_vector_matches_plain() {
        let p = params(1, 2);
        let cm = ConceptMap::from_assignments(
            crate::data::Vocab::from_tokens(["a", "b"]).unwrap(),
            vec![vec![0, 1]],
        );
        let mut t = Tape::new(false, 0);
        let n = entity_concept_vector(&mut t, &p, &cm, 0).unwrap();
        let cs = p.get(ParamId::Concept);
        let (plain, beta) = concept_vector(p.get(ParamId::Entity).row(0), &[cs.row(0), cs.row(1)]).unwrap();
        assert!((beta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (a, b) in t.value(n).iter().zip(&plain) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
