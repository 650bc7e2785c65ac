//! Small deterministic problems for gradient checking and smoke tests.

use std::collections::BTreeSet;

use rand::Rng;

use crate::data::{ConceptMap, Quadruple, Vocab};
use crate::encoder::EncoderKind;
use crate::episodes::EpisodeSampler;
use crate::error::Result;
use crate::model::{ConceptVariant, EpisodeNegatives, Forward, ModelConfig};
use crate::numeric::{gradcheck, GradcheckConfig, GradcheckReport, ModelDims, ModelParams, ParamId};
use crate::rng::rng_for;
use crate::episodes::EpisodeTask;
use crate::trainer::episode_negatives;

/// One meta-training episode on a 20-entity graph with every tensor set to
/// O(1) values, so gradients are far from underflow.
#[derive(Clone, Debug)]
pub struct ToyProblem {
    pub params: ModelParams,
    pub model: ModelConfig,
    pub concepts: ConceptMap,
    pub meta_set: Vec<Quadruple>,
    pub task: EpisodeTask,
    pub negatives: EpisodeNegatives,
    pub dropout_seed: u64,
}

pub const TOY_ENTITIES: usize = 20;
pub const TOY_RELATIONS: usize = 4;
pub const TOY_CONCEPTS: usize = 5;
pub const TOY_DIM: usize = 8;
pub const TOY_TIME_DIM: usize = 4;
pub const TOY_SHOTS: usize = 3;

impl ToyProblem {
    pub fn new(encoder: EncoderKind, concepts: ConceptVariant, seed: u64) -> Result<Self> {
        let mut rng = rng_for(seed, &[0x70E]);
        let dims = ModelDims {
            num_entities: TOY_ENTITIES,
            num_relations: TOY_RELATIONS,
            num_concepts: TOY_CONCEPTS,
            dim: TOY_DIM,
            time_dim: TOY_TIME_DIM,
        };
        let mut params = ModelParams::init(dims, seed)?;
        for t in params.tensors_mut() {
            for v in &mut t.values {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
        params.set_scalar(ParamId::UpperGate, 0.8);
        params.set_scalar(ParamId::LowerGate, 1.2);

        // entities 14..20 are unseen, each with 5 facts towards background entities
        let unseen: BTreeSet<usize> = (14..TOY_ENTITIES).collect();
        let mut meta_set = Vec::new();
        for &e in &unseen {
            for _ in 0..5 {
                let other = rng.gen_range(0..14);
                let r = rng.gen_range(0..TOY_RELATIONS);
                let t = rng.gen_range(0..12);
                meta_set.push(if rng.gen_bool(0.5) {
                    Quadruple::new(e, r, other, t)
                } else {
                    Quadruple::new(other, r, e, t)
                });
            }
        }
        let lists = (0..TOY_ENTITIES)
            .map(|e| {
                let mut l = vec![e % (TOY_CONCEPTS - 1)];
                if e % 3 == 0 {
                    l.push((e / 3) % (TOY_CONCEPTS - 1));
                }
                l
            })
            .collect();
        let vocab = Vocab::from_tokens((0..TOY_CONCEPTS - 1).map(|c| format!("c{c}")))?;
        let concept_map = ConceptMap::from_assignments(vocab, lists);

        let task = EpisodeSampler::new(&meta_set, &unseen).sample_task(unseen.len(), TOY_SHOTS, seed)?;
        let pool: Vec<usize> = (0..TOY_ENTITIES).collect();
        let negatives = episode_negatives(&meta_set, &task, 4, &pool, None, seed)?;
        Ok(Self {
            params,
            model: ModelConfig {
                encoder,
                concepts,
                ..ModelConfig::default()
            },
            concepts: concept_map,
            meta_set,
            task,
            negatives,
            dropout_seed: seed,
        })
    }

    /// Episode loss with dropout on (masks are keyed, hence frozen); adds the
    /// gradient into `params` when `with_grad` is set.
    pub fn loss(&self, params: &mut ModelParams, with_grad: bool) -> Result<f64> {
        let mut fw = Forward::new(params, &self.model, &self.concepts, true, self.dropout_seed);
        let loss = fw.episode_loss(&self.meta_set, &self.task, &self.negatives)?;
        let tape = fw.into_tape();
        if with_grad {
            tape.backward(loss, params)?;
        }
        Ok(tape.scalar(loss))
    }

    pub fn gradcheck(&self, cfg: GradcheckConfig) -> Result<GradcheckReport> {
        let mut params = self.params.clone();
        gradcheck(&mut params, |p, g| self.loss(p, g), cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_problem_has_positive_loss() {
        let p = ToyProblem::new(EncoderKind::Filt, ConceptVariant::Full, 1).unwrap();
        let mut params = p.params.clone();
        assert!(p.loss(&mut params, false).unwrap() > 0.0);
        assert!(p.task.num_queries() > 0);
    }
}
