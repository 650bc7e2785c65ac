//! Meta-learning episodes: support/query partitions for unseen entities,
//! the inverse-relation transform and negative sampling.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{EntityId, Quadruple, RelationId};
use crate::error::{FiltError, Result};
use crate::rng::rng_for;

/// Support and query quadruples of one unseen entity, as indices into the
/// meta set the episode was drawn from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityEpisode {
    pub entity: EntityId,
    pub support: Vec<usize>,
    pub query: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeTask {
    pub seed: u64,
    pub entities: Vec<EntityEpisode>,
}

impl EpisodeTask {
    pub fn num_queries(&self) -> usize {
        self.entities.iter().map(|e| e.query.len()).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Which side of a quadruple holds the unseen entity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnseenSide {
    Subject,
    Object,
}

impl UnseenSide {
    /// The side of `q` occupied by `owner`; a self-loop counts as subject.
    pub fn of(q: &Quadruple, owner: EntityId) -> Option<Self> {
        if q.subject == owner {
            Some(UnseenSide::Subject)
        } else if q.object == owner {
            Some(UnseenSide::Object)
        } else {
            None
        }
    }

    /// Entity on the opposite (predicted) side.
    pub fn other(self, q: &Quadruple) -> EntityId {
        match self {
            UnseenSide::Subject => q.object,
            UnseenSide::Object => q.subject,
        }
    }
}

/// Number of shots per entity when building an evaluation episode.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shots {
    Fixed(usize),
    /// Each entity draws its shot count uniformly from the list.
    Random(Vec<usize>),
}

impl Shots {
    fn max(&self) -> usize {
        match self {
            Shots::Fixed(k) => *k,
            Shots::Random(ks) => ks.iter().copied().max().unwrap_or(0),
        }
    }
}

impl std::fmt::Display for Shots {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shots::Fixed(k) => write!(f, "{k}"),
            Shots::Random(_) => write!(f, "random"),
        }
    }
}

impl std::str::FromStr for Shots {
    type Err = FiltError;

    /// A shot count, or `random` for a uniform draw from {1, 3, 5}.
    fn from_str(s: &str) -> Result<Self> {
        if s == "random" {
            return Ok(Shots::Random(vec![1, 3, 5]));
        }
        match s.parse::<usize>() {
            Ok(k) if k > 0 => Ok(Shots::Fixed(k)),
            _ => Err(FiltError::InvalidArgument(format!(
                "shots must be a positive integer or `random`, got `{s}`"
            ))),
        }
    }
}

/// Indices of each unseen entity's quadruples within a meta set. A
/// quadruple linking two unseen entities of the set belongs to both.
#[derive(Clone, Debug)]
pub struct EpisodeSampler {
    by_entity: BTreeMap<EntityId, Vec<usize>>,
}

impl EpisodeSampler {
    pub fn new(meta_set: &[Quadruple], unseen: &BTreeSet<EntityId>) -> Self {
        let mut by_entity: BTreeMap<EntityId, Vec<usize>> =
            unseen.iter().map(|&e| (e, Vec::new())).collect();
        for (i, q) in meta_set.iter().enumerate() {
            if let Some(v) = by_entity.get_mut(&q.subject) {
                v.push(i);
            }
            if q.object != q.subject {
                if let Some(v) = by_entity.get_mut(&q.object) {
                    v.push(i);
                }
            }
        }
        Self { by_entity }
    }

    pub fn quads_of(&self, entity: EntityId) -> &[usize] {
        self.by_entity.get(&entity).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn entities(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.by_entity.keys().copied()
    }

    /// Per-entity seeded permutation of its quadruples; the first `k` are
    /// support. Prefixes nest, so the 1-shot support is inside the 3-shot one.
    fn partition(&self, entity: EntityId, k: usize, seed: u64) -> EntityEpisode {
        let mut idx = self.quads_of(entity).to_vec();
        let mut rng = rng_for(seed, &[0xE915_0DE5, entity as u64]);
        idx.shuffle(&mut rng);
        let k = k.min(idx.len());
        let mut support = idx[..k].to_vec();
        let mut query = idx[k..].to_vec();
        support.sort_unstable();
        query.sort_unstable();
        EntityEpisode {
            entity,
            support,
            query,
        }
    }

    /// Draw `n` entities with more than `k` quadruples, then split each into
    /// `k` support and the remaining query quadruples.
    pub fn sample_task(&self, n: usize, k: usize, seed: u64) -> Result<EpisodeTask> {
        if k == 0 {
            return Err(FiltError::InvalidArgument("shot size K must be >= 1".into()));
        }
        let eligible: Vec<EntityId> = self
            .by_entity
            .iter()
            .filter(|(_, q)| q.len() > k)
            .map(|(&e, _)| e)
            .collect();
        let skipped = self.by_entity.len() - eligible.len();
        if skipped > 0 {
            log::warn!("{skipped} entities have <= {k} quadruples and are never sampled");
        }
        if eligible.len() < n {
            return Err(FiltError::Sampling(format!(
                "need {n} entities with more than {k} quadruples, only {} available (short by {})",
                eligible.len(),
                n - eligible.len()
            )));
        }
        let mut rng = rng_for(seed, &[0x7A5C]);
        let entities = index::sample(&mut rng, eligible.len(), n)
            .into_iter()
            .map(|i| self.partition(eligible[i], k, seed))
            .collect();
        Ok(EpisodeTask { seed, entities })
    }

    /// Every unseen entity, with a seeded support draw of the requested size.
    pub fn eval_episode(&self, shots: &Shots, seed: u64) -> Result<EpisodeTask> {
        if shots.max() == 0 {
            return Err(FiltError::InvalidArgument("shot size K must be >= 1".into()));
        }
        let mut entities = Vec::with_capacity(self.by_entity.len());
        for (&e, quads) in &self.by_entity {
            let k = match shots {
                Shots::Fixed(k) => *k,
                Shots::Random(ks) => {
                    let mut rng = rng_for(seed, &[0x5407, e as u64]);
                    *ks.choose(&mut rng).expect("non-empty shot list")
                }
            };
            if quads.len() <= k {
                log::warn!(
                    "entity {e} has {} quadruples (<= K={k}); it contributes no queries",
                    quads.len()
                );
            }
            entities.push(self.partition(e, k, seed));
        }
        Ok(EpisodeTask { seed, entities })
    }
}

pub fn sample_task(
    meta_set: &[Quadruple],
    unseen: &BTreeSet<EntityId>,
    n: usize,
    k: usize,
    seed: u64,
) -> Result<EpisodeTask> {
    EpisodeSampler::new(meta_set, unseen).sample_task(n, k, seed)
}

pub fn build_eval_episode(
    meta_set: &[Quadruple],
    unseen: &BTreeSet<EntityId>,
    shots: &Shots,
    seed: u64,
) -> Result<EpisodeTask> {
    EpisodeSampler::new(meta_set, unseen).eval_episode(shots, seed)
}

/// `(s, r, o, t)` -> `(o, r + |R|, s, t)`.
pub fn add_inverse(q: &Quadruple, num_relations: usize) -> Result<Quadruple> {
    if q.relation >= num_relations {
        return Err(FiltError::InvalidArgument(format!(
            "relation {} is already an inverse relation (|R| = {num_relations})",
            q.relation
        )));
    }
    Ok(Quadruple::new(
        q.object,
        q.relation + num_relations,
        q.subject,
        q.timestamp,
    ))
}

/// The inverse map on relation ids, an involution on `[0, 2|R|)`.
pub fn inverse_relation(r: RelationId, num_relations: usize) -> RelationId {
    (r + num_relations) % (2 * num_relations)
}

/// Swap sides and flip the relation, in either direction.
pub fn invert(q: &Quadruple, num_relations: usize) -> Quadruple {
    Quadruple::new(
        q.object,
        inverse_relation(q.relation, num_relations),
        q.subject,
        q.timestamp,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeSample {
    pub positive: Quadruple,
    pub side: UnseenSide,
    pub corrupted_entity: EntityId,
}

impl NegativeSample {
    pub fn quadruple(&self) -> Quadruple {
        match self.side {
            UnseenSide::Subject => Quadruple {
                object: self.corrupted_entity,
                ..self.positive
            },
            UnseenSide::Object => Quadruple {
                subject: self.corrupted_entity,
                ..self.positive
            },
        }
    }
}

/// Corrupt the non-unseen side of `positive` with `num_neg` entities drawn
/// uniformly (with replacement) from `pool`, never the true entity. With
/// `known_true`, entities in that set are excluded as well.
pub fn sample_negatives<R: Rng + ?Sized>(
    positive: &Quadruple,
    side: UnseenSide,
    num_neg: usize,
    pool: &[EntityId],
    known_true: Option<&HashSet<EntityId>>,
    rng: &mut R,
) -> Result<Vec<NegativeSample>> {
    if num_neg == 0 {
        return Err(FiltError::InvalidArgument("num_neg must be >= 1".into()));
    }
    let truth = side.other(positive);
    let excluded = |e: &EntityId| *e == truth || known_true.is_some_and(|k| k.contains(e));
    let make = |e| NegativeSample {
        positive: *positive,
        side,
        corrupted_entity: e,
    };

    if known_true.is_some() {
        let allowed: Vec<EntityId> = pool.iter().copied().filter(|e| !excluded(e)).collect();
        if allowed.is_empty() {
            return Err(FiltError::Sampling(
                "negative pool is empty after removing true entities".into(),
            ));
        }
        return Ok((0..num_neg)
            .map(|_| make(allowed[rng.gen_range(0..allowed.len())]))
            .collect());
    }

    if !pool.iter().any(|e| !excluded(e)) {
        return Err(FiltError::Sampling(
            "negative pool has no entity other than the true one".into(),
        ));
    }
    let mut out = Vec::with_capacity(num_neg);
    while out.len() < num_neg {
        let e = pool[rng.gen_range(0..pool.len())];
        if !excluded(&e) {
            out.push(make(e));
        }
    }
    Ok(out)
}

/// Seeded convenience wrapper around [`sample_negatives`].
pub fn sample_negatives_seeded(
    positive: &Quadruple,
    side: UnseenSide,
    num_neg: usize,
    pool: &[EntityId],
    known_true: Option<&HashSet<EntityId>>,
    seed: u64,
) -> Result<Vec<NegativeSample>> {
    let mut rng = rng_for(seed, &[0x4E67]);
    sample_negatives(positive, side, num_neg, pool, known_true, &mut rng)
}
