//! Filtered ranking evaluation with pessimistic tie handling.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ConceptMap, EntityId, Quadruple, RelationId, TimeId};
use crate::episodes::{EpisodeTask, UnseenSide};
use crate::error::{FiltError, Result};
use crate::model::{entity_table, Forward, ModelConfig};
use crate::numeric::{ModelParams, ParamId};
use crate::scoring::complex_score;

/// Which slot of the query is being predicted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Object,
    Subject,
}

impl Direction {
    /// The unseen entity stays fixed; the opposite slot is predicted.
    pub fn for_unseen(side: UnseenSide) -> Self {
        match side {
            UnseenSide::Subject => Direction::Object,
            UnseenSide::Object => Direction::Subject,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankResult {
    pub query: Quadruple,
    pub direction: Direction,
    pub rank: usize,
    pub filtered: bool,
    pub num_candidates: usize,
}

/// `1 + #{score > s_gt} + #{score == s_gt}` over candidates other than the
/// ground truth and outside `known_true`. Returns the rank and the number of
/// candidates left after filtering. A NaN score counts against the truth.
pub fn rank_query(
    candidates: &[EntityId],
    scores: &[f64],
    truth: EntityId,
    known_true: &HashSet<EntityId>,
) -> Result<(usize, usize)> {
    if candidates.len() != scores.len() {
        return Err(FiltError::Shape {
            op: "rank_query",
            detail: format!("{} candidates, {} scores", candidates.len(), scores.len()),
        });
    }
    let pos = candidates
        .iter()
        .position(|&c| c == truth)
        .ok_or_else(|| FiltError::InvalidArgument(format!("ground truth {truth} is not a candidate")))?;
    let s_gt = scores[pos];
    let mut rank = 1;
    let mut kept = 1;
    for (&c, &s) in candidates.iter().zip(scores) {
        if c == truth || known_true.contains(&c) {
            continue;
        }
        kept += 1;
        if !(s < s_gt) {
            rank += 1;
        }
    }
    Ok((rank, kept))
}

/// Reference implementation of [`rank_query`]: materialise the filtered list,
/// sort it by descending score with the truth after its ties, and read off
/// the position.
pub fn oracle_rank(
    candidates: &[EntityId],
    scores: &[f64],
    truth: EntityId,
    known_true: &HashSet<EntityId>,
) -> Option<usize> {
    let mut list: Vec<(f64, bool)> = candidates
        .iter()
        .zip(scores)
        .filter(|(c, _)| **c == truth || !known_true.contains(c))
        .map(|(&c, &s)| (s, c == truth))
        .collect();
    list.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    list.iter().position(|x| x.1).map(|p| p + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub num_queries: usize,
}

impl Metrics {
    pub fn from_ranks(ranks: &[usize]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(FiltError::EmptyInput("no queries to evaluate".into()));
        }
        let n = ranks.len() as f64;
        let hits = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Ok(Self {
            mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
            hits1: hits(1),
            hits3: hits(3),
            hits10: hits(10),
            num_queries: ranks.len(),
        })
    }

    pub const CSV_HEADER: &'static str = "dataset,shot,encoder,variant,mrr,hits1,hits3,hits10,num_queries,seed";

    pub fn csv_row(&self, dataset: &str, shot: &str, encoder: &str, variant: &str, seed: u64) -> String {
        format!(
            "{dataset},{shot},{encoder},{variant},{:.6},{:.6},{:.6},{:.6},{},{seed}",
            self.mrr, self.hits1, self.hits3, self.hits10, self.num_queries
        )
    }
}

/// Expected MRR of a uniformly random ranking over `n` candidates.
pub fn random_mrr(n: usize) -> f64 {
    (1..=n).map(|k| 1.0 / k as f64).sum::<f64>() / n as f64
}

/// Other-side entities of every known fact, keyed by the fixed entity,
/// relation, timestamp and the predicted slot.
#[derive(Clone, Debug, Default)]
pub struct KnownFacts {
    map: HashMap<(EntityId, RelationId, TimeId, Direction), HashSet<EntityId>>,
}

impl KnownFacts {
    pub fn new<'a>(quads: impl IntoIterator<Item = &'a Quadruple>) -> Self {
        let mut map: HashMap<_, HashSet<EntityId>> = HashMap::new();
        for q in quads {
            map.entry((q.subject, q.relation, q.timestamp, Direction::Object))
                .or_default()
                .insert(q.object);
            map.entry((q.object, q.relation, q.timestamp, Direction::Subject))
                .or_default()
                .insert(q.subject);
        }
        Self { map }
    }

    /// True entities for the predicted slot of `q` (including `q`'s own).
    pub fn known(&self, q: &Quadruple, direction: Direction) -> Option<&HashSet<EntityId>> {
        let fixed = match direction {
            Direction::Object => q.subject,
            Direction::Subject => q.object,
        };
        self.map.get(&(fixed, q.relation, q.timestamp, direction))
    }
}

#[derive(Clone, Debug)]
pub struct EvalOptions<'a> {
    /// Candidate entities; every ground truth must be among them.
    pub candidates: &'a [EntityId],
    /// `None` evaluates in the raw (unfiltered) setting.
    pub known: Option<&'a KnownFacts>,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub metrics: Metrics,
    pub ranks: Vec<RankResult>,
}

struct Scorer<'a> {
    params: &'a ModelParams,
    cfg: &'a ModelConfig,
    concepts: &'a ConceptMap,
    table: Vec<f64>,
}

impl<'a> Scorer<'a> {
    fn new(params: &'a ModelParams, cfg: &'a ModelConfig, concepts: &'a ConceptMap) -> Result<Self> {
        Ok(Self {
            params,
            cfg,
            concepts,
            table: entity_table(params, cfg, concepts)?,
        })
    }

    /// Candidate scores for each query of one entity, in query order.
    fn entity_scores(
        &self,
        meta_set: &[Quadruple],
        owner: EntityId,
        support: &[usize],
        query: &[usize],
        candidates: &[EntityId],
    ) -> Result<Vec<Vec<f64>>> {
        if query.is_empty() {
            return Ok(Vec::new());
        }
        let d = self.params.dims.dim;
        let support: Vec<Quadruple> = support.iter().map(|&i| meta_set[i]).collect();
        let mut fw = Forward::new(self.params, self.cfg, self.concepts, false, 0);
        let rel = self.params.get(ParamId::Relation);
        let mut out = Vec::with_capacity(query.len());
        for &qi in query {
            let q = meta_set[qi];
            let node = fw.encode(owner, &support, &q)?;
            let h = fw.tape.value(node);
            let r = rel.row(q.relation);
            let side = UnseenSide::of(&q, owner).expect("query contains owner");
            let scores = candidates
                .iter()
                .map(|&c| {
                    let row = &self.table[c * d..(c + 1) * d];
                    match side {
                        UnseenSide::Subject => complex_score(h, r, row),
                        UnseenSide::Object => complex_score(row, r, h),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            out.push(scores);
        }
        Ok(out)
    }
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| FiltError::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Candidate scores for every query of the episode, grouped by entity.
pub fn episode_scores(
    params: &ModelParams,
    cfg: &ModelConfig,
    concepts: &ConceptMap,
    meta_set: &[Quadruple],
    task: &EpisodeTask,
    candidates: &[EntityId],
) -> Result<Vec<Vec<Vec<f64>>>> {
    let scorer = Scorer::new(params, cfg, concepts)?;
    task.entities
        .iter()
        .map(|ep| scorer.entity_scores(meta_set, ep.entity, &ep.support, &ep.query, candidates))
        .collect()
}

/// Rank every query of `task` in its stated direction and aggregate.
pub fn evaluate(
    params: &ModelParams,
    cfg: &ModelConfig,
    concepts: &ConceptMap,
    meta_set: &[Quadruple],
    task: &EpisodeTask,
    opts: &EvalOptions<'_>,
) -> Result<EvalOutcome> {
    let scorer = Scorer::new(params, cfg, concepts)?;
    let empty = HashSet::new();
    let per_entity: Vec<Result<Vec<RankResult>>> = in_pool(opts.workers, || {
        task.entities
            .par_iter()
            .map(|ep| {
                let scores = scorer.entity_scores(meta_set, ep.entity, &ep.support, &ep.query, opts.candidates)?;
                ep.query
                    .iter()
                    .zip(scores)
                    .map(|(&qi, s)| {
                        let q = meta_set[qi];
                        let side = UnseenSide::of(&q, ep.entity).expect("query contains owner");
                        let direction = Direction::for_unseen(side);
                        let known = opts.known.and_then(|k| k.known(&q, direction)).unwrap_or(&empty);
                        let (rank, num_candidates) = rank_query(opts.candidates, &s, side.other(&q), known)?;
                        Ok(RankResult {
                            query: q,
                            direction,
                            rank,
                            filtered: opts.known.is_some(),
                            num_candidates,
                        })
                    })
                    .collect()
            })
            .collect()
    })?;
    let mut ranks = Vec::with_capacity(task.num_queries());
    for r in per_entity {
        ranks.extend(r?);
    }
    let metrics = Metrics::from_ranks(&ranks.iter().map(|r| r.rank).collect::<Vec<_>>())?;
    Ok(EvalOutcome { metrics, ranks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pessimistic_ties_example() {
        // candidates 0..4 with scores (3, 2, 2, 1) and the truth (4) at 2
        let c = [0, 1, 2, 3, 4];
        let s = [3.0, 2.0, 2.0, 1.0, 2.0];
        let none = HashSet::new();
        assert_eq!(rank_query(&c, &s, 4, &none).unwrap(), (4, 5));
        assert_eq!(oracle_rank(&c, &s, 4, &none), Some(4));
    }

    #[test]
    fn filtering_ignores_known_distractor() {
        let c = [0, 1, 2];
        let s = [100.0, 1.0, 0.5];
        let known: HashSet<_> = [0, 1].into_iter().collect();
        assert_eq!(rank_query(&c, &s, 1, &known).unwrap(), (1, 2));
        assert!(rank_query(&c, &s, 7, &known).is_err());
    }

    #[test]
    fn metric_formulas() {
        let m = Metrics::from_ranks(&[1, 2, 4]).unwrap();
        assert!((m.mrr - 0.583_333_333_333_333_3).abs() < 1e-12);
        assert_eq!(m.hits1, 1.0 / 3.0);
        assert_eq!(m.hits3, 2.0 / 3.0);
        assert_eq!(m.hits10, 1.0);
        assert!(Metrics::from_ranks(&[]).is_err());
        assert!((random_mrr(1) - 1.0).abs() < 1e-15);
        assert!((random_mrr(2) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn known_facts_are_keyed_by_direction() {
        let qs = [Quadruple::new(0, 1, 2, 3), Quadruple::new(0, 1, 4, 3)];
        let k = KnownFacts::new(qs.iter());
        let objs = k.known(&qs[0], Direction::Object).unwrap();
        assert_eq!(objs.len(), 2);
        assert_eq!(k.known(&qs[0], Direction::Subject).unwrap().len(), 1);
    }
}
