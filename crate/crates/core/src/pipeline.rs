//! File-level operations behind the command-line tool. Each function reads
//! its inputs from disk, writes its artifacts and a [`RunManifest`] next to
//! them, and returns what it computed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::TrainConfig;
use crate::data::{
    build_ooc_splits, dataset_stats, load_concepts, load_splits, parse_quadruples, save_splits, validate_splits,
    ConceptMap, DatasetSplits, DatasetStats, MetaSplit, SplitConfig, ValidationReport,
};
use crate::encoder::EncoderKind;
use crate::episodes::Shots;
use crate::error::{FiltError, Result};
use crate::eval::{KnownFacts, Metrics};
use crate::fixtures::ToyProblem;
use crate::manifest::RunManifest;
use crate::model::{ConceptVariant, ModelConfig};
use crate::numeric::{load_checkpoint, save_checkpoint, CheckpointMeta, GradcheckConfig, GradcheckReport, ModelParams, ParamId};
use crate::synth::{generate, SynthConfig};
use crate::trainer::{evaluate_split, meta_train, model_dims, pretrained_params};

pub const CONCEPTS_FILE: &str = "concepts.json";
pub const STATS_FILE: &str = "stats.csv";

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| FiltError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| FiltError::io(path, e))
}

/// `<path>.<suffix>`, e.g. `model.ckpt.manifest.json`.
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn dataset_label(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

fn config_json<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

pub struct BuildDataset<'a> {
    pub input: &'a Path,
    pub concepts: Option<&'a Path>,
    pub split: SplitConfig,
    pub out: &'a Path,
}

/// Parse, split, validate and persist a dataset directory.
pub fn build_dataset(args: &BuildDataset<'_>) -> Result<(DatasetStats, ValidationReport)> {
    let parsed = parse_quadruples(args.input)?;
    let concepts = match args.concepts {
        Some(p) => load_concepts(p, &parsed.vocab.entities)?,
        None => ConceptMap::region_only(parsed.vocab.entities.len()),
    };
    let splits = build_ooc_splits(&parsed.quads, &parsed.vocab, &args.split)?;
    let report = validate_splits(&splits);
    save_splits(args.out, &splits, Some(&args.split))?;
    write(&args.out.join(CONCEPTS_FILE), serde_json::to_string(&concepts)? + "\n")?;
    let stats = dataset_stats(&splits);
    let label = dataset_label(args.out);
    write(
        &args.out.join(STATS_FILE),
        format!("{}\n{}\n", DatasetStats::CSV_HEADER, stats.csv_row(&label)),
    )?;
    write(&args.out.join("validation.txt"), format!("{report}\n"))?;
    let mut m = RunManifest::new("build-dataset", config_json(&args.split)?)
        .seed("data", args.split.seed)
        .input(args.input)?
        .output(args.out);
    if let Some(c) = args.concepts {
        m = m.input(c)?;
    }
    m.write(&args.out.join("run_manifest.json"))?;
    if !report.passed() {
        return Err(FiltError::InvalidArgument(format!("split validation failed:\n{report}")));
    }
    Ok((stats, report))
}

/// Splits and concept map of a dataset directory written by [`build_dataset`].
pub fn load_dataset(dir: &Path) -> Result<(DatasetSplits, ConceptMap)> {
    let splits = load_splits(dir)?;
    let path = dir.join(CONCEPTS_FILE);
    let concepts = if path.exists() {
        let text = fs::read_to_string(&path).map_err(|e| FiltError::io(&path, e))?;
        serde_json::from_str(&text)?
    } else {
        ConceptMap::region_only(splits.num_entities())
    };
    if concepts.num_entities() != splits.num_entities() {
        return Err(FiltError::InvalidArgument(format!(
            "concept map covers {} entities, dataset has {}",
            concepts.num_entities(),
            splits.num_entities()
        )));
    }
    Ok((splits, concepts))
}

fn seeds(m: RunManifest, cfg: &TrainConfig) -> RunManifest {
    m.seed("data", cfg.data_seed)
        .seed("model", cfg.model_seed)
        .seed("episode", cfg.episode_seed)
        .seed("eval", cfg.eval_seed)
}

/// Pre-train background rows and save them as a checkpoint.
pub fn pretrain(data: &Path, cfg: &TrainConfig, out: &Path) -> Result<Vec<f64>> {
    let (splits, concepts) = load_dataset(data)?;
    let (params, losses) = pretrained_params(&splits, &concepts, cfg)?;
    let meta = CheckpointMeta::new(params.dims, cfg.model_seed, config_json(cfg)?);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| FiltError::io(dir, e))?;
    }
    save_checkpoint(&params, &meta, out)?;
    let log_path = with_suffix(out, "log.csv");
    let mut log = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        log.push_str(&format!("{},{l:.6}\n", i + 1));
    }
    write(&log_path, log)?;
    seeds(RunManifest::new("pretrain", config_json(cfg)?), cfg)
        .input(data)?
        .output(out)
        .output(&log_path)
        .write(&with_suffix(out, "manifest.json"))?;
    Ok(losses)
}

fn load_matching(path: &Path, splits: &DatasetSplits, concepts: &ConceptMap, cfg: &TrainConfig) -> Result<ModelParams> {
    let (params, _) = load_checkpoint(path)?;
    let want = model_dims(splits, concepts, cfg);
    if params.dims != want {
        return Err(FiltError::checkpoint(
            "dims",
            format!("checkpoint has {:?}, dataset and config imply {want:?}", params.dims),
        ));
    }
    Ok(params)
}

#[derive(Clone, Debug, Serialize)]
pub struct MetaTrainSummary {
    pub best_batch: usize,
    pub best_valid_mrr: Option<f64>,
}

/// Meta-train from a pre-trained checkpoint; saves the best checkpoint to
/// `out` and the training log to `<out>.log.csv`.
pub fn meta_train_cmd(data: &Path, cfg: &TrainConfig, pretrained: &Path, out: &Path) -> Result<MetaTrainSummary> {
    let (splits, concepts) = load_dataset(data)?;
    let params = load_matching(pretrained, &splits, &concepts, cfg)?;
    let log_path = with_suffix(out, "log.csv");
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| FiltError::io(dir, e))?;
    }
    let mut log = fs::File::create(&log_path).map_err(|e| FiltError::io(&log_path, e))?;
    let outcome = meta_train(params, &splits, &concepts, cfg, Some(&mut log as &mut dyn Write))?;
    let meta = CheckpointMeta::new(outcome.best.dims, cfg.model_seed, config_json(cfg)?);
    save_checkpoint(&outcome.best, &meta, out)?;
    seeds(RunManifest::new("meta-train", config_json(cfg)?), cfg)
        .input(data)?
        .input(pretrained)?
        .output(out)
        .output(&log_path)
        .write(&with_suffix(out, "manifest.json"))?;
    Ok(MetaTrainSummary {
        best_batch: outcome.best_batch,
        best_valid_mrr: outcome.best_valid_mrr,
    })
}

/// Model configuration stored in a checkpoint's metadata.
pub fn checkpoint_config(meta: &CheckpointMeta) -> Result<TrainConfig> {
    serde_json::from_value(meta.config.clone())
        .map_err(|e| FiltError::checkpoint("metadata config", e.to_string()))
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricsRow {
    pub dataset: String,
    pub shot: String,
    pub encoder: String,
    pub variant: String,
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: Metrics,
}

impl MetricsRow {
    pub fn csv(&self) -> String {
        self.metrics
            .csv_row(&self.dataset, &self.shot, &self.encoder, &self.variant, self.seed)
    }
}

pub struct Evaluate<'a> {
    pub data: &'a Path,
    pub checkpoint: &'a Path,
    pub split: MetaSplit,
    pub shots: Vec<Shots>,
    pub seed: u64,
    pub filtered: bool,
    pub workers: usize,
    pub out: &'a Path,
}

fn eval_rows(
    params: &ModelParams,
    model: &ModelConfig,
    splits: &DatasetSplits,
    concepts: &ConceptMap,
    dataset: &str,
    split: MetaSplit,
    shots: &[Shots],
    seed: u64,
    known: Option<&KnownFacts>,
    workers: usize,
) -> Result<Vec<MetricsRow>> {
    shots
        .iter()
        .map(|s| {
            let out = evaluate_split(params, model, splits, concepts, split, s, seed, known, workers)?
                .ok_or_else(|| FiltError::EmptyInput(format!("meta-{} has no queries at {s} shots", split.name())))?;
            Ok(MetricsRow {
                dataset: dataset.to_string(),
                shot: s.to_string(),
                encoder: model.encoder.name().to_string(),
                variant: model.concepts.label().to_string(),
                seed,
                metrics: out.metrics,
            })
        })
        .collect()
}

fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = format!("{}\n", Metrics::CSV_HEADER);
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

/// Evaluate a checkpoint at each requested shot setting. Writes the rows as
/// CSV to `out` and as JSON to `<out>.json`.
pub fn evaluate_cmd(args: &Evaluate<'_>) -> Result<Vec<MetricsRow>> {
    let (splits, concepts) = load_dataset(args.data)?;
    let (params, meta) = load_checkpoint(args.checkpoint)?;
    let cfg = checkpoint_config(&meta)?;
    if params.dims != model_dims(&splits, &concepts, &cfg) {
        return Err(FiltError::checkpoint("dims", "checkpoint does not match this dataset"));
    }
    let known = args.filtered.then(|| KnownFacts::new(splits.all_quads()));
    let rows = eval_rows(
        &params,
        &cfg.model(),
        &splits,
        &concepts,
        &dataset_label(args.data),
        args.split,
        &args.shots,
        args.seed,
        known.as_ref(),
        args.workers,
    )?;
    write(args.out, metrics_csv(&rows))?;
    let json_path = with_suffix(args.out, "json");
    write(&json_path, serde_json::to_string_pretty(&rows)? + "\n")?;
    RunManifest::new("evaluate", config_json(&cfg)?)
        .seed("eval", args.seed)
        .input(args.data)?
        .input(args.checkpoint)?
        .output(args.out)
        .output(&json_path)
        .write(&with_suffix(args.out, "manifest.json"))?;
    Ok(rows)
}

/// The eight model rows of an ablation: the full model, three concept
/// ablations and four alternative encoders.
pub fn ablation_rows() -> Vec<(&'static str, EncoderKind, ConceptVariant)> {
    let mut rows = vec![("FILT", EncoderKind::Filt, ConceptVariant::Full)];
    for v in [ConceptVariant::NoConcept, ConceptVariant::NoLower, ConceptVariant::NoUpper] {
        rows.push((v.label(), EncoderKind::Filt, v));
    }
    for e in [EncoderKind::Rgcn, EncoderKind::Time2Vec, EncoderKind::Functional, EncoderKind::Attention] {
        rows.push((e.label(), e, ConceptVariant::Full));
    }
    rows
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub model: String,
    pub row: MetricsRow,
}

/// Meta-train and evaluate every ablation row from the same pre-trained
/// checkpoint and seeds; writes a combined CSV to `out`.
pub fn ablate(data: &Path, cfg: &TrainConfig, pretrained: &Path, workers: usize, out: &Path) -> Result<Vec<AblationRow>> {
    let (splits, concepts) = load_dataset(data)?;
    let base = load_matching(pretrained, &splits, &concepts, cfg)?;
    let known = KnownFacts::new(splits.all_quads());
    let label = dataset_label(data);
    let mut rows = Vec::new();
    for (name, encoder, variant) in ablation_rows() {
        let c = TrainConfig {
            encoder,
            concepts: variant,
            ..cfg.clone()
        };
        log::info!("ablation row {name}");
        let trained = meta_train(base.clone(), &splits, &concepts, &c, None)?;
        let r = eval_rows(
            &trained.best,
            &c.model(),
            &splits,
            &concepts,
            &label,
            MetaSplit::Test,
            &[Shots::Fixed(c.shots)],
            c.eval_seed,
            Some(&known),
            workers,
        )?;
        rows.push(AblationRow {
            model: name.to_string(),
            row: r.into_iter().next().expect("one shot setting"),
        });
    }
    let mut csv = format!("model,{}\n", Metrics::CSV_HEADER);
    for r in &rows {
        csv.push_str(&format!("{},{}\n", r.model, r.row.csv()));
    }
    write(out, csv)?;
    seeds(RunManifest::new("ablate", config_json(cfg)?), cfg)
        .input(data)?
        .input(pretrained)?
        .output(out)
        .write(&with_suffix(out, "manifest.json"))?;
    Ok(rows)
}

/// Finite-difference check of the toy problem.
pub fn gradcheck_toy(encoder: EncoderKind, variant: ConceptVariant, seed: u64, cfg: GradcheckConfig) -> Result<GradcheckReport> {
    ToyProblem::new(encoder, variant, seed)?.gradcheck(cfg)
}

/// Write concept rows (and optionally entity rows) as `name,v1,...,vd` CSV.
pub fn export_embeddings(data: &Path, checkpoint: &Path, out: &Path, entities: bool) -> Result<usize> {
    let (splits, concepts) = load_dataset(data)?;
    let (params, meta) = load_checkpoint(checkpoint)?;
    let d = params.dims.dim;
    if params.dims.num_concepts != concepts.num_concepts() {
        return Err(FiltError::checkpoint("dims", "concept count does not match this dataset"));
    }
    let mut csv = String::from("kind,name");
    for j in 0..d {
        csv.push_str(&format!(",v{j}"));
    }
    csv.push('\n');
    let mut n = 0;
    let mut emit = |kind: &str, name: &str, row: &[f64]| {
        csv.push_str(&format!("{kind},{name}"));
        for v in row {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
        n += 1;
    };
    let table = params.get(ParamId::Concept);
    for (c, name) in concepts.concept_vocab.tokens().iter().enumerate() {
        emit("concept", name, table.row(c));
    }
    if entities {
        let table = params.get(ParamId::Entity);
        for (e, name) in splits.vocab.entities.tokens().iter().enumerate() {
            emit("entity", name, table.row(e));
        }
    }
    write(out, csv)?;
    RunManifest::new("export-embeddings", meta.config.clone())
        .input(data)?
        .input(checkpoint)?
        .output(out)
        .write(&with_suffix(out, "manifest.json"))?;
    Ok(n)
}

/// Generate the synthetic corpus and write its quadruple and concept files.
pub fn synth(cfg: &SynthConfig, quads_out: &Path, concepts_out: &Path) -> Result<usize> {
    for p in [quads_out, concepts_out] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| FiltError::io(dir, e))?;
        }
    }
    let corpus = generate(cfg)?;
    corpus.write(quads_out, concepts_out)?;
    RunManifest::new("synth", config_json(cfg)?)
        .seed("data", cfg.seed)
        .output(quads_out)
        .output(concepts_out)
        .write(&with_suffix(quads_out, "manifest.json"))?;
    Ok(corpus.quadruples.lines().count())
}
