//! Full forward pass: concept-injected entity rows, neighbourhood encoding,
//! lower-branch injection, ComplEx scoring and the episode hinge loss.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::concept::{branch_output, entity_concept_vector, gated_add};
use crate::data::{ConceptMap, EntityId, Quadruple, RelationId, TimeId};
use crate::encoder::{aggregate, messages, support_neighbors, EncoderKind, NeighborMessages};
use crate::episodes::{inverse_relation, EpisodeTask, UnseenSide};
use crate::error::{FiltError, Result};
use crate::numeric::tape::{Activation, NodeId, Tape};
use crate::numeric::{ModelParams, ParamId};

const KEY_UPPER: u64 = 0xD1;
const KEY_LOWER: u64 = 0xD2;
const KEY_ENCODED: u64 = 0xD3;

/// Which concept branches are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptVariant {
    Full,
    /// A1: no concept information at all.
    NoConcept,
    /// A2: upper branch only.
    NoLower,
    /// A3: lower branch only.
    NoUpper,
}

impl ConceptVariant {
    pub const ALL: [ConceptVariant; 4] = [
        ConceptVariant::Full,
        ConceptVariant::NoConcept,
        ConceptVariant::NoLower,
        ConceptVariant::NoUpper,
    ];

    pub fn uses_upper(self) -> bool {
        matches!(self, ConceptVariant::Full | ConceptVariant::NoLower)
    }

    pub fn uses_lower(self) -> bool {
        matches!(self, ConceptVariant::Full | ConceptVariant::NoUpper)
    }

    pub fn name(self) -> &'static str {
        match self {
            ConceptVariant::Full => "full",
            ConceptVariant::NoConcept => "no_concept",
            ConceptVariant::NoLower => "no_lower",
            ConceptVariant::NoUpper => "no_upper",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ConceptVariant::Full => "FILT",
            ConceptVariant::NoConcept => "A1",
            ConceptVariant::NoLower => "A2",
            ConceptVariant::NoUpper => "A3",
        }
    }
}

impl std::fmt::Display for ConceptVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ConceptVariant {
    type Err = FiltError;

    fn from_str(s: &str) -> Result<Self> {
        let l = s.to_ascii_lowercase();
        ConceptVariant::ALL
            .into_iter()
            .find(|v| v.name() == l || v.label().to_ascii_lowercase() == l)
            .ok_or_else(|| FiltError::InvalidArgument(format!("unknown concept variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    pub concepts: ConceptVariant,
    pub lambda: f64,
    pub dropout: f64,
    pub activation: Activation,
    pub margin: f64,
    /// Divide the episode loss by its number of queries.
    pub mean_loss: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderKind::Filt,
            concepts: ConceptVariant::Full,
            lambda: 0.2,
            dropout: 0.3,
            activation: Activation::LeakyRelu,
            margin: 1.0,
            mean_loss: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(FiltError::InvalidArgument(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.margin > 0.0) {
            return Err(FiltError::InvalidArgument(format!("margin must be positive, got {}", self.margin)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(FiltError::InvalidArgument(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Negative entities per entity and query of an episode:
/// `negatives[i][j]` belongs to query `j` of `task.entities[i]`.
pub type EpisodeNegatives = Vec<Vec<Vec<EntityId>>>;

/// One recorded forward pass. Entity representations, concept vectors and
/// neighbour messages are cached, so within a pass each owner must be
/// encoded from a single support set.
pub struct Forward<'a> {
    pub tape: Tape,
    params: &'a ModelParams,
    cfg: &'a ModelConfig,
    concepts: &'a ConceptMap,
    upper: HashMap<EntityId, NodeId>,
    concept_vec: HashMap<EntityId, NodeId>,
    msgs: HashMap<EntityId, NeighborMessages>,
    encoded: HashMap<(EntityId, TimeId, RelationId), NodeId>,
}

impl<'a> Forward<'a> {
    pub fn new(
        params: &'a ModelParams,
        cfg: &'a ModelConfig,
        concepts: &'a ConceptMap,
        train: bool,
        dropout_seed: u64,
    ) -> Self {
        Self {
            tape: Tape::new(train, dropout_seed),
            params,
            cfg,
            concepts,
            upper: HashMap::new(),
            concept_vec: HashMap::new(),
            msgs: HashMap::new(),
            encoded: HashMap::new(),
        }
    }

    /// Release the parameter borrow so the tape can write gradients.
    pub fn into_tape(self) -> Tape {
        self.tape
    }

    pub fn num_relations(&self) -> usize {
        self.params.dims.num_relations
    }

    fn concept_vector(&mut self, e: EntityId) -> Result<NodeId> {
        if let Some(&n) = self.concept_vec.get(&e) {
            return Ok(n);
        }
        let n = entity_concept_vector(&mut self.tape, self.params, self.concepts, e)?;
        self.concept_vec.insert(e, n);
        Ok(n)
    }

    /// Entity row with the upper concept branch applied (when enabled).
    pub fn entity(&mut self, e: EntityId) -> Result<NodeId> {
        if let Some(&n) = self.upper.get(&e) {
            return Ok(n);
        }
        let h = self.tape.param_row(self.params, ParamId::Entity, e)?;
        let out = if self.cfg.concepts.uses_upper() {
            let hc = self.concept_vector(e)?;
            let b = branch_output(&mut self.tape, self.params, ParamId::UpperBranch, hc, self.cfg.activation)?;
            let b = self.tape.dropout(b, self.cfg.dropout, &[KEY_UPPER, e as u64])?;
            gated_add(&mut self.tape, self.params, ParamId::UpperGate, h, b)?
        } else {
            h
        };
        self.upper.insert(e, out);
        Ok(out)
    }

    /// Representation of `owner` at the time of `query`, from its support
    /// quadruples, with the lower concept branch applied (when enabled).
    pub fn encode(&mut self, owner: EntityId, support: &[Quadruple], query: &Quadruple) -> Result<NodeId> {
        let nr = self.num_relations();
        let side = UnseenSide::of(query, owner).ok_or_else(|| {
            FiltError::InvalidArgument(format!("query {query:?} does not contain entity {owner}"))
        })?;
        let r_q = match side {
            UnseenSide::Subject => inverse_relation(query.relation, nr),
            UnseenSide::Object => query.relation,
        };
        let t_q = query.timestamp;
        if let Some(&n) = self.encoded.get(&(owner, t_q, r_q)) {
            return Ok(n);
        }
        if !self.msgs.contains_key(&owner) {
            let neighbors = support_neighbors(owner, support, nr)?;
            let embs = neighbors
                .iter()
                .map(|n| self.entity(n.entity))
                .collect::<Result<Vec<_>>>()?;
            let m = messages(
                &mut self.tape,
                self.params,
                self.cfg.encoder,
                self.cfg.activation,
                &neighbors,
                &embs,
            )?;
            self.msgs.insert(owner, m);
        }
        let h = aggregate(
            &mut self.tape,
            self.params,
            self.cfg.encoder,
            self.cfg.lambda,
            self.cfg.activation,
            &self.msgs[&owner],
            t_q,
            r_q,
        )?;
        let mut h = self
            .tape
            .dropout(h, self.cfg.dropout, &[KEY_ENCODED, owner as u64, t_q as u64, r_q as u64])?;
        if self.cfg.concepts.uses_lower() {
            let hc = self.concept_vector(owner)?;
            let b = branch_output(&mut self.tape, self.params, ParamId::LowerBranch, hc, self.cfg.activation)?;
            let b = self.tape.dropout(b, self.cfg.dropout, &[KEY_LOWER, owner as u64])?;
            h = gated_add(&mut self.tape, self.params, ParamId::LowerGate, h, b)?;
        }
        self.encoded.insert((owner, t_q, r_q), h);
        Ok(h)
    }

    /// Score `query` with the owner replaced by `encoded` and the other side
    /// replaced by `other`.
    pub fn score(&mut self, owner: EntityId, query: &Quadruple, encoded: NodeId, other: EntityId) -> Result<NodeId> {
        let side = UnseenSide::of(query, owner).ok_or_else(|| {
            FiltError::InvalidArgument(format!("query {query:?} does not contain entity {owner}"))
        })?;
        let r = self.tape.param_row(self.params, ParamId::Relation, query.relation)?;
        let h_other = self.entity(other)?;
        match side {
            UnseenSide::Subject => self.tape.complex_score(encoded, r, h_other),
            UnseenSide::Object => self.tape.complex_score(h_other, r, encoded),
        }
    }

    /// Hinge loss summed over every query and negative of the episode.
    pub fn episode_loss(
        &mut self,
        meta_set: &[Quadruple],
        task: &EpisodeTask,
        negatives: &EpisodeNegatives,
    ) -> Result<NodeId> {
        if negatives.len() != task.entities.len() {
            return Err(FiltError::Shape {
                op: "episode_loss",
                detail: format!("{} negative lists for {} entities", negatives.len(), task.entities.len()),
            });
        }
        let mut terms = Vec::new();
        for (ep, negs) in task.entities.iter().zip(negatives) {
            if negs.len() != ep.query.len() {
                return Err(FiltError::Shape {
                    op: "episode_loss",
                    detail: format!("entity {}: {} negative lists for {} queries", ep.entity, negs.len(), ep.query.len()),
                });
            }
            if ep.query.is_empty() {
                continue;
            }
            let support: Vec<Quadruple> = ep.support.iter().map(|&i| meta_set[i]).collect();
            for (&qi, qn) in ep.query.iter().zip(negs) {
                let q = meta_set[qi];
                let h = self.encode(ep.entity, &support, &q)?;
                let side = UnseenSide::of(&q, ep.entity).expect("checked by encode");
                let pos = self.score(ep.entity, &q, h, side.other(&q))?;
                let neg_scores = qn
                    .iter()
                    .map(|&n| self.score(ep.entity, &q, h, n))
                    .collect::<Result<Vec<_>>>()?;
                terms.push(self.tape.hinge(pos, &neg_scores, self.cfg.margin)?);
            }
        }
        if terms.is_empty() {
            return Err(FiltError::EmptyInput("episode has no queries".into()));
        }
        let n = terms.len();
        let loss = self.tape.sum(&terms)?;
        Ok(if self.cfg.mean_loss {
            self.tape.mul_const(loss, 1.0 / n as f64)
        } else {
            loss
        })
    }
}

/// Upper-injected rows for every entity, evaluated without dropout.
pub fn entity_table(params: &ModelParams, cfg: &ModelConfig, concepts: &ConceptMap) -> Result<Vec<f64>> {
    let (n, d) = (params.dims.num_entities, params.dims.dim);
    let mut out = Vec::with_capacity(n * d);
    const CHUNK: usize = 512;
    for start in (0..n).step_by(CHUNK) {
        let mut fw = Forward::new(params, cfg, concepts, false, 0);
        for e in start..(start + CHUNK).min(n) {
            let node = fw.entity(e)?;
            out.extend_from_slice(fw.tape.value(node));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_flags_and_names() {
        assert!(ConceptVariant::Full.uses_upper() && ConceptVariant::Full.uses_lower());
        assert!(!ConceptVariant::NoConcept.uses_upper() && !ConceptVariant::NoConcept.uses_lower());
        assert!(ConceptVariant::NoLower.uses_upper() && !ConceptVariant::NoLower.uses_lower());
        assert!(!ConceptVariant::NoUpper.uses_upper() && ConceptVariant::NoUpper.uses_lower());
        assert_eq!("A2".parse::<ConceptVariant>().unwrap(), ConceptVariant::NoLower);
        assert_eq!("b4".parse::<EncoderKind>().unwrap(), EncoderKind::Attention);
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig { lambda: 0.0, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { dropout: 1.0, ..Default::default() }.validate().is_err());
    }
}
