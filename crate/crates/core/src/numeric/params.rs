use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FiltError, Result};
use crate::rng::rng_for;

/// Named trainable arrays. The discriminant is the tensor's slot in
/// [`ModelParams`] and its position in checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamId {
    Entity,
    Relation,
    Concept,
    /// Graph encoder projection, `d x 2d`.
    EncoderWeight,
    UpperBranch,
    LowerBranch,
    UpperGate,
    LowerGate,
    /// One `d x d` matrix per (forward or inverse) relation.
    RelationWeights,
    Time2VecFreq,
    Time2VecPhase,
    Time2VecProj,
    FunctionalFreq,
    FunctionalPhase,
    FunctionalProj,
    AttnQuery,
    AttnKey,
}

impl ParamId {
    pub const ALL: [ParamId; 17] = [
        ParamId::Entity,
        ParamId::Relation,
        ParamId::Concept,
        ParamId::EncoderWeight,
        ParamId::UpperBranch,
        ParamId::LowerBranch,
        ParamId::UpperGate,
        ParamId::LowerGate,
        ParamId::RelationWeights,
        ParamId::Time2VecFreq,
        ParamId::Time2VecPhase,
        ParamId::Time2VecProj,
        ParamId::FunctionalFreq,
        ParamId::FunctionalPhase,
        ParamId::FunctionalProj,
        ParamId::AttnQuery,
        ParamId::AttnKey,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamId::Entity => "entity_emb",
            ParamId::Relation => "relation_emb",
            ParamId::Concept => "concept_emb",
            ParamId::EncoderWeight => "w_g",
            ParamId::UpperBranch => "w_c1",
            ParamId::LowerBranch => "w_c2",
            ParamId::UpperGate => "delta1",
            ParamId::LowerGate => "delta2",
            ParamId::RelationWeights => "w_rel",
            ParamId::Time2VecFreq => "t2v_omega",
            ParamId::Time2VecPhase => "t2v_phi",
            ParamId::Time2VecProj => "t2v_f",
            ParamId::FunctionalFreq => "fte_omega",
            ParamId::FunctionalPhase => "fte_phi",
            ParamId::FunctionalProj => "fte_f",
            ParamId::AttnQuery => "w_q",
            ParamId::AttnKey => "w_k",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|p| p.name() == name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
    pub trainable: bool,
}

impl ParamTensor {
    pub fn zeros(name: &str, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.to_string(),
            shape,
            values: vec![0.0; n],
            grad: vec![0.0; n],
            trainable: true,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Width of one row (product of all but the first dimension).
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.row_len();
        &mut self.values[i * w..(i + 1) * w]
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub num_entities: usize,
    /// Forward relations; the relation table holds `2 *` this many rows.
    pub num_relations: usize,
    pub num_concepts: usize,
    pub dim: usize,
    pub time_dim: usize,
}

impl ModelDims {
    pub fn shape_of(&self, id: ParamId) -> Vec<usize> {
        let (d, dt, r2) = (self.dim, self.time_dim, 2 * self.num_relations);
        match id {
            ParamId::Entity => vec![self.num_entities, d],
            ParamId::Relation => vec![r2, d],
            ParamId::Concept => vec![self.num_concepts, d],
            ParamId::EncoderWeight => vec![d, 2 * d],
            ParamId::UpperBranch | ParamId::LowerBranch => vec![d, d],
            ParamId::UpperGate | ParamId::LowerGate => vec![1],
            ParamId::RelationWeights => vec![r2, d, d],
            ParamId::Time2VecFreq | ParamId::Time2VecPhase => vec![dt + 1],
            ParamId::Time2VecProj => vec![d, d + dt + 1],
            ParamId::FunctionalFreq | ParamId::FunctionalPhase => vec![dt],
            ParamId::FunctionalProj | ParamId::AttnQuery | ParamId::AttnKey => vec![d, d + dt],
        }
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.dim == 0 || self.dim % 2 != 0 {
            return Err(FiltError::InvalidArgument(format!(
                "embedding size must be even and positive, got {}",
                self.dim
            )));
        }
        if self.time_dim == 0 {
            return Err(FiltError::InvalidArgument("time dimension must be >= 1".into()));
        }
        Ok(())
    }
}

/// Every trainable array of the model, indexed by [`ParamId`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    tensors: Vec<ParamTensor>,
}

impl ModelParams {
    /// Xavier-uniform matrices, small-uniform embeddings, unit gates.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.check()?;
        let mut tensors = Vec::with_capacity(ParamId::ALL.len());
        for (slot, id) in ParamId::ALL.into_iter().enumerate() {
            let mut t = ParamTensor::zeros(id.name(), dims.shape_of(id));
            let mut rng = rng_for(seed, &[0x1417, slot as u64]);
            match id {
                ParamId::Entity | ParamId::Relation | ParamId::Concept => {
                    let a = 0.5 / dims.dim as f64;
                    fill_uniform(&mut t.values, a, &mut rng);
                }
                ParamId::UpperGate | ParamId::LowerGate => t.values[0] = 1.0,
                ParamId::Time2VecFreq | ParamId::FunctionalFreq => {
                    // geometric ladder 2^-k of frequencies; the linear term starts slow
                    let n = t.values.len();
                    for (j, w) in t.values.iter_mut().enumerate() {
                        *w = 0.5f64.powi((n - 1 - j) as i32).max(1e-3);
                    }
                    if id == ParamId::Time2VecFreq {
                        t.values[0] = 0.01;
                    }
                }
                ParamId::Time2VecPhase | ParamId::FunctionalPhase => {}
                ParamId::RelationWeights => {
                    let a = (6.0 / (2 * dims.dim) as f64).sqrt();
                    fill_uniform(&mut t.values, a, &mut rng);
                }
                _ => {
                    let (rows, cols) = (t.shape[0], t.shape[1]);
                    let a = (6.0 / (rows + cols) as f64).sqrt();
                    fill_uniform(&mut t.values, a, &mut rng);
                }
            }
            tensors.push(t);
        }
        Ok(Self { dims, tensors })
    }

    pub(crate) fn from_tensors(dims: ModelDims, tensors: Vec<ParamTensor>) -> Self {
        Self { dims, tensors }
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.tensors[id as usize]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.tensors[id as usize]
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.tensors
    }

    pub fn scalar(&self, id: ParamId) -> f64 {
        self.get(id).values[0]
    }

    pub fn set_scalar(&mut self, id: ParamId, v: f64) {
        self.get_mut(id).values[0] = v;
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(ParamTensor::zero_grad);
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(ParamTensor::len).sum()
    }
}

fn fill_uniform<R: Rng>(xs: &mut [f64], a: f64, rng: &mut R) {
    for x in xs {
        *x = rng.gen_range(-a..=a);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn dims() -> ModelDims {
        ModelDims {
            num_entities: 5,
            num_relations: 2,
            num_concepts: 3,
            dim: 4,
            time_dim: 2,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = ModelParams::init(dims(), 9).unwrap();
        let b = ModelParams::init(dims(), 9).unwrap();
        let c = ModelParams::init(dims(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn odd_dimension_is_rejected() {
        let d = ModelDims { dim: 5, ..dims() };
        assert!(ModelParams::init(d, 0).is_err());
    }

    #[test]
    fn gates_start_at_one_and_embeddings_are_small() {
        let p = ModelParams::init(dims(), 1).unwrap();
        assert_eq!(p.scalar(ParamId::UpperGate), 1.0);
        assert_eq!(p.scalar(ParamId::LowerGate), 1.0);
        let bound = 0.5 / 4.0;
        assert!(p.get(ParamId::Entity).values.iter().all(|v| v.abs() <= bound));
        assert_eq!(p.get(ParamId::Relation).shape, vec![4, 4]);
        assert_eq!(p.get(ParamId::EncoderWeight).shape, vec![4, 8]);
        let a = (6.0f64 / 12.0).sqrt();
        assert!(p.get(ParamId::EncoderWeight).values.iter().all(|v| v.abs() <= a));
    }

    #[test]
    fn names_round_trip() {
        for id in ParamId::ALL {
            assert_eq!(ParamId::from_name(id.name()), Some(id));
        }
    }
}
