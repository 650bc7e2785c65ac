//! Background pre-training and episodic meta-training.

use std::collections::{BTreeSet, HashSet};
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::concept::{correct_concepts, init_concepts, EmptyConceptPolicy};
use crate::config::TrainConfig;
use crate::data::{ConceptMap, DatasetSplits, EntityId, MetaSplit, Quadruple};
use crate::episodes::{sample_negatives, EpisodeSampler, EpisodeTask, Shots, UnseenSide};
use crate::error::{FiltError, Result};
use crate::eval::{evaluate, Direction, EvalOptions, EvalOutcome, KnownFacts, Metrics};
use crate::model::{EpisodeNegatives, Forward, ModelConfig};
use crate::numeric::{ModelDims, ModelParams, Optimizer, OptimizerConfig, ParamId, Tape};
use crate::rng::{derive_seed, rng_for};

pub fn model_dims(splits: &DatasetSplits, concepts: &ConceptMap, cfg: &TrainConfig) -> ModelDims {
    ModelDims {
        num_entities: splits.num_entities(),
        num_relations: splits.num_relations(),
        num_concepts: concepts.num_concepts(),
        dim: cfg.dim,
        time_dim: cfg.time_dim,
    }
}

/// Hinge training of entity and relation rows on background triples
/// (timestamps ignored). Negatives corrupt the subject or the object with a
/// background entity. Returns the summed loss of each epoch.
pub fn pretrain_background(
    params: &mut ModelParams,
    background: &[Quadruple],
    unseen: &BTreeSet<EntityId>,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if background.is_empty() {
        return Err(FiltError::EmptyInput("background graph".into()));
    }
    if let Some(q) = background
        .iter()
        .find(|q| unseen.contains(&q.subject) || unseen.contains(&q.object))
    {
        return Err(FiltError::InvalidArgument(format!(
            "background quadruple {q:?} references an unseen entity"
        )));
    }
    let pool: Vec<EntityId> = background
        .iter()
        .flat_map(|q| [q.subject, q.object])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut opt = Optimizer::new(OptimizerConfig {
        kind: cfg.optimizer,
        lr: cfg.pretrain_lr,
        ..OptimizerConfig::default()
    });
    let mut order: Vec<usize> = (0..background.len()).collect();
    let mut losses = Vec::with_capacity(cfg.pretrain_epochs);
    for epoch in 0..cfg.pretrain_epochs {
        let mut rng = rng_for(cfg.model_seed, &[0xB0, epoch as u64]);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.pretrain_batch) {
            let mut tape = Tape::new(false, 0);
            let mut terms = Vec::with_capacity(batch.len());
            for &i in batch {
                let q = background[i];
                let s = tape.param_row(params, ParamId::Entity, q.subject)?;
                let r = tape.param_row(params, ParamId::Relation, q.relation)?;
                let o = tape.param_row(params, ParamId::Entity, q.object)?;
                let pos = tape.complex_score(s, r, o)?;
                let mut negs = Vec::with_capacity(cfg.negatives);
                while negs.len() < cfg.negatives {
                    let e = pool[rng.gen_range(0..pool.len())];
                    let corrupt_object = rng.gen_bool(0.5);
                    let truth = if corrupt_object { q.object } else { q.subject };
                    if e == truth {
                        if pool.len() == 1 {
                            break;
                        }
                        continue;
                    }
                    let n = tape.param_row(params, ParamId::Entity, e)?;
                    negs.push(if corrupt_object {
                        tape.complex_score(s, r, n)?
                    } else {
                        tape.complex_score(n, r, o)?
                    });
                }
                terms.push(tape.hinge(pos, &negs, cfg.margin)?);
            }
            let loss = tape.sum(&terms)?;
            let v = tape.scalar(loss);
            if !v.is_finite() {
                return Err(FiltError::Numeric(format!("pre-training loss is {v} in epoch {epoch}")));
            }
            total += v;
            tape.backward(loss, params)?;
            opt.step(params)?;
        }
        log::debug!("pretrain epoch {epoch}: loss {total:.4}");
        losses.push(total);
    }
    Ok(losses)
}

/// Mean hinge violation over background triples against a fixed, seeded set
/// of corrupted objects. Used to measure pre-training progress.
pub fn background_violation(params: &ModelParams, background: &[Quadruple], margin: f64, seed: u64) -> f64 {
    let ent = params.get(ParamId::Entity);
    let rel = params.get(ParamId::Relation);
    let pool: Vec<EntityId> = background
        .iter()
        .flat_map(|q| [q.subject, q.object])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut rng = rng_for(seed, &[0xB1]);
    let mut total = 0.0;
    for q in background {
        let pos = crate::scoring::complex_score(ent.row(q.subject), rel.row(q.relation), ent.row(q.object))
            .expect("consistent dims");
        let n = pool[rng.gen_range(0..pool.len())];
        let neg = crate::scoring::complex_score(ent.row(q.subject), rel.row(q.relation), ent.row(n))
            .expect("consistent dims");
        total += crate::scoring::hinge(pos, neg, margin);
    }
    total / background.len() as f64
}

/// Draw `num_neg` corrupted entities for every query of `task`. Each query
/// gets its own keyed stream, so the draw does not depend on episode order.
pub fn episode_negatives(
    meta_set: &[Quadruple],
    task: &EpisodeTask,
    num_neg: usize,
    pool: &[EntityId],
    known: Option<&KnownFacts>,
    seed: u64,
) -> Result<EpisodeNegatives> {
    task.entities
        .iter()
        .map(|ep| {
            ep.query
                .iter()
                .map(|&qi| {
                    let q = meta_set[qi];
                    let side = UnseenSide::of(&q, ep.entity).ok_or_else(|| {
                        FiltError::InvalidArgument(format!("query {q:?} does not contain {}", ep.entity))
                    })?;
                    let mut rng = rng_for(seed, &[0x4E67, ep.entity as u64, qi as u64]);
                    let known_set: Option<HashSet<EntityId>> =
                        known.and_then(|k| k.known(&q, Direction::for_unseen(side))).cloned();
                    Ok(sample_negatives(&q, side, num_neg, pool, known_set.as_ref(), &mut rng)?
                        .into_iter()
                        .map(|n| n.corrupted_entity)
                        .collect())
                })
                .collect()
        })
        .collect()
}

/// Initialise concept rows from the (pretrained) background entity rows and
/// run one correction pass. Returns the concepts that had no background member.
pub fn prepare_concepts(params: &mut ModelParams, splits: &DatasetSplits, concepts: &ConceptMap) -> Result<Vec<usize>> {
    let background = splits.background_entities();
    let members = concepts.members(|e| background.contains(&e));
    let skipped = init_concepts(params, &members, EmptyConceptPolicy::KeepInit)?;
    if !skipped.is_empty() {
        log::warn!("{} concepts have no background member and keep their initial rows", skipped.len());
    }
    correct_concepts(params, &members);
    Ok(skipped)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub batch: usize,
    pub loss: f64,
    pub valid_mrr: Option<f64>,
    pub elapsed_secs: f64,
}

impl LogRow {
    pub const CSV_HEADER: &'static str = "batch,loss,valid_mrr,elapsed_secs";

    pub fn csv(&self) -> String {
        format!(
            "{},{:.6},{},{:.3}",
            self.batch,
            self.loss,
            self.valid_mrr.map(|m| format!("{m:.6}")).unwrap_or_default(),
            self.elapsed_secs
        )
    }
}

#[derive(Clone, Debug)]
pub struct MetaTrainOutcome {
    /// Parameters with the best meta-valid MRR seen (the final ones when
    /// meta-valid has no queries).
    pub best: ModelParams,
    pub best_batch: usize,
    pub best_valid_mrr: Option<f64>,
    pub last: ModelParams,
    pub log: Vec<LogRow>,
}

/// Evaluate one meta set with a seeded evaluation episode. All entities are
/// candidates; `known` switches on the filtered setting.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_split(
    params: &ModelParams,
    model: &ModelConfig,
    splits: &DatasetSplits,
    concepts: &ConceptMap,
    split: MetaSplit,
    shots: &Shots,
    seed: u64,
    known: Option<&KnownFacts>,
    workers: usize,
) -> Result<Option<EvalOutcome>> {
    let sampler = EpisodeSampler::new(splits.meta(split), splits.unseen(split));
    let task = sampler.eval_episode(shots, seed)?;
    if task.num_queries() == 0 {
        return Ok(None);
    }
    let candidates: Vec<EntityId> = (0..splits.num_entities()).collect();
    let out = evaluate(
        params,
        model,
        concepts,
        splits.meta(split),
        &task,
        &EvalOptions {
            candidates: &candidates,
            known,
            workers,
        },
    )?;
    Ok(Some(out))
}

#[allow(clippy::too_many_arguments)]
fn validate_on(
    params: &ModelParams,
    model: &ModelConfig,
    splits: &DatasetSplits,
    concepts: &ConceptMap,
    split: MetaSplit,
    shots: &Shots,
    seed: u64,
    known: &KnownFacts,
) -> Result<Option<Metrics>> {
    Ok(evaluate_split(params, model, splits, concepts, split, shots, seed, Some(known), 0)?.map(|o| o.metrics))
}

/// Fresh parameters (seeded by `model_seed`) with pre-trained background
/// rows. Returns the per-epoch pre-training losses alongside.
pub fn pretrained_params(
    splits: &DatasetSplits,
    concepts: &ConceptMap,
    cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<f64>)> {
    let mut params = ModelParams::init(model_dims(splits, concepts, cfg), cfg.model_seed)?;
    let losses = pretrain_background(&mut params, &splits.background, &splits.all_unseen(), cfg)?;
    Ok((params, losses))
}

/// Episodic training from pretrained parameters. `params` must already hold
/// the pretrained entity and relation rows; concept rows are initialised
/// here. Rows of `log` are also written to `log_sink` as CSV when given.
pub fn meta_train(
    mut params: ModelParams,
    splits: &DatasetSplits,
    concepts: &ConceptMap,
    cfg: &TrainConfig,
    mut log_sink: Option<&mut dyn Write>,
) -> Result<MetaTrainOutcome> {
    cfg.validate()?;
    let model = cfg.model();
    prepare_concepts(&mut params, splits, concepts)?;
    for gate in [ParamId::UpperGate, ParamId::LowerGate] {
        params.set_scalar(gate, cfg.gate_init);
        params.get_mut(gate).trainable = cfg.train_gates;
    }
    let meta = splits.meta(MetaSplit::Train);
    let sampler = EpisodeSampler::new(meta, splits.unseen(MetaSplit::Train));
    let pool: Vec<EntityId> = (0..splits.num_entities()).collect();
    let known = KnownFacts::new(splits.all_quads());
    let mut opt = Optimizer::new(cfg.optimizer());
    let start = Instant::now();
    let shots = Shots::Fixed(cfg.shots);

    if let Some(w) = log_sink.as_deref_mut() {
        writeln!(w, "{}", LogRow::CSV_HEADER).map_err(|e| FiltError::io("training log", e))?;
    }
    let mut log = Vec::new();
    let mut best = params.clone();
    let mut best_batch = 0;
    let mut best_mrr: Option<f64> = None;
    let mut record = |row: LogRow, sink: &mut Option<&mut dyn Write>| -> Result<()> {
        if let Some(w) = sink.as_deref_mut() {
            writeln!(w, "{}", row.csv()).map_err(|e| FiltError::io("training log", e))?;
        }
        log.push(row);
        Ok(())
    };

    let initial = validate_on(&params, &model, splits, concepts, MetaSplit::Valid, &shots, cfg.eval_seed, &known)?;
    if let Some(m) = &initial {
        best_mrr = Some(m.mrr);
        log::info!("batch 0: valid MRR {:.4}", m.mrr);
    }
    record(
        LogRow {
            batch: 0,
            loss: f64::NAN,
            valid_mrr: initial.map(|m| m.mrr),
            elapsed_secs: start.elapsed().as_secs_f64(),
        },
        &mut log_sink,
    )?;

    for b in 1..=cfg.batches {
        let task_seed = derive_seed(cfg.episode_seed, &[0x7A, b as u64]);
        let task = sampler.sample_task(cfg.entities_per_task, cfg.shots, task_seed)?;
        let known_neg = cfg.filter_negatives.then_some(&known);
        let negs = episode_negatives(meta, &task, cfg.negatives, &pool, known_neg, task_seed)?;
        let dropout_seed = derive_seed(cfg.episode_seed, &[0xD0, b as u64]);
        let mut fw = Forward::new(&params, &model, concepts, true, dropout_seed);
        let loss = fw.episode_loss(meta, &task, &negs)?;
        let tape = fw.into_tape();
        let v = tape.scalar(loss);
        if !v.is_finite() {
            let dump = task.to_json().unwrap_or_default();
            return Err(FiltError::Numeric(format!(
                "loss is {v} at batch {b}; offending episode:\n{dump}"
            )));
        }
        tape.backward(loss, &mut params)?;
        opt.step(&mut params)?;

        let due = b % cfg.eval_every == 0 || b == cfg.batches;
        let mut valid = None;
        if due {
            valid = validate_on(&params, &model, splits, concepts, MetaSplit::Valid, &shots, cfg.eval_seed, &known)?
                .map(|m| m.mrr);
            match valid {
                Some(m) if best_mrr.map_or(true, |bm| m > bm) => {
                    best_mrr = Some(m);
                    best = params.clone();
                    best_batch = b;
                }
                None => {
                    best = params.clone();
                    best_batch = b;
                }
                _ => {}
            }
            match valid {
                Some(m) => log::info!("batch {b}: loss {v:.4} valid MRR {m:.4}"),
                None => log::info!("batch {b}: loss {v:.4}"),
            }
        }
        if due || b % 50 == 0 {
            record(
                LogRow {
                    batch: b,
                    loss: v,
                    valid_mrr: valid,
                    elapsed_secs: start.elapsed().as_secs_f64(),
                },
                &mut log_sink,
            )?;
        }
    }
    Ok(MetaTrainOutcome {
        best,
        best_batch,
        best_valid_mrr: best_mrr,
        last: params,
        log,
    })
}
