use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use filt::data::{MetaSplit, SplitConfig};
use filt::encoder::EncoderKind;
use filt::episodes::Shots;
use filt::model::ConceptVariant;
use filt::numeric::GradcheckConfig;
use filt::pipeline::{self, BuildDataset, Evaluate};
use filt::synth::SynthConfig;
use filt::{FiltError, TrainConfig};

#[derive(Parser)]
#[command(name = "filt", version, about = "Few-shot inductive link prediction on temporal knowledge graphs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// TOML training config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set lr=0.005`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> filt::Result<TrainConfig> {
        TrainConfig::load_with_overrides(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Split a quadruple file into background and meta sets.
    BuildDataset {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        concepts: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        low: usize,
        #[arg(long, default_value_t = 25)]
        high: usize,
        #[arg(long, default_value_t = 0.5)]
        sample_frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Pre-train background embeddings.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Meta-train from a pre-trained checkpoint.
    MetaTrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pretrained: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Rank unseen-entity queries and report MRR and Hits@k.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: MetaSplit,
        /// Shot settings: integers or `random`.
        #[arg(long, num_args = 1.., default_values = ["1", "3", "5"])]
        shots: Vec<Shots>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Rank against all candidates without removing known true facts.
        #[arg(long)]
        raw: bool,
        /// Worker threads; 0 uses all cores.
        #[arg(long, default_value_t = 0)]
        workers: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate the full model, its concept ablations and the baseline encoders.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pretrained: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        workers: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Finite-difference gradient check on a small fixture.
    Gradcheck {
        /// Encoder to check; all encoders and variants when omitted.
        #[arg(long)]
        encoder: Option<EncoderKind>,
        #[arg(long, default_value = "full")]
        variant: ConceptVariant,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Dump concept (and optionally entity) embeddings as CSV.
    ExportEmbeddings {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        entities: bool,
    },
    /// Write the synthetic corpus and its concept file.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        concepts_out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::BuildDataset { input, concepts, out, low, high, sample_frac, seed } => {
            let split = SplitConfig { low, high, sample_frac, seed, ..SplitConfig::default() };
            let (stats, _) = pipeline::build_dataset(&BuildDataset {
                input: &input,
                concepts: concepts.as_deref(),
                split,
                out: &out,
            })?;
            println!("{}", filt::data::DatasetStats::CSV_HEADER);
            println!("{}", stats.csv_row(&out.file_name().unwrap_or_default().to_string_lossy()));
        }
        Cmd::Pretrain { data, out, cfg } => {
            let losses = pipeline::pretrain(&data, &cfg.load()?, &out)?;
            if let Some(l) = losses.last() {
                println!("pretrained {} epochs, final loss {l:.4}", losses.len());
            }
        }
        Cmd::MetaTrain { data, pretrained, out, cfg } => {
            let s = pipeline::meta_train_cmd(&data, &cfg.load()?, &pretrained, &out)?;
            match s.best_valid_mrr {
                Some(m) => println!("best valid MRR {m:.4} at batch {}", s.best_batch),
                None => println!("no validation queries; kept final parameters"),
            }
        }
        Cmd::Evaluate { data, checkpoint, split, shots, seed, raw, workers, out } => {
            let rows = pipeline::evaluate_cmd(&Evaluate {
                data: &data,
                checkpoint: &checkpoint,
                split,
                shots,
                seed,
                filtered: !raw,
                workers,
                out: &out,
            })?;
            println!("{}", filt::eval::Metrics::CSV_HEADER);
            for r in rows {
                println!("{}", r.csv());
            }
        }
        Cmd::Ablate { data, pretrained, out, workers, cfg } => {
            for r in pipeline::ablate(&data, &cfg.load()?, &pretrained, workers, &out)? {
                println!("{},{}", r.model, r.row.csv());
            }
        }
        Cmd::Gradcheck { encoder, variant, seed, tolerance } => {
            let cfg = GradcheckConfig { tolerance, seed, max_coords: usize::MAX, ..GradcheckConfig::default() };
            let runs: Vec<(EncoderKind, ConceptVariant)> = match encoder {
                Some(e) => vec![(e, variant)],
                None => pipeline::ablation_rows().into_iter().map(|(_, e, v)| (e, v)).collect(),
            };
            let mut failed = Vec::new();
            for (e, v) in runs {
                let report = pipeline::gradcheck_toy(e, v, seed, cfg)?;
                println!("{} {}: {report}", e.label(), v.label());
                if !report.passed() {
                    failed.push(format!("{} {}", e.label(), v.label()));
                }
            }
            if !failed.is_empty() {
                return Err(FiltError::Numeric(format!("gradient check failed for {}", failed.join(", "))).into());
            }
        }
        Cmd::ExportEmbeddings { data, checkpoint, out, entities } => {
            let n = pipeline::export_embeddings(&data, &checkpoint, &out, entities)?;
            println!("wrote {n} rows to {}", out.display());
        }
        Cmd::Synth { out, concepts_out, seed } => {
            let cfg = SynthConfig { seed, ..SynthConfig::default() };
            let n = pipeline::synth(&cfg, &out, &concepts_out).context("generating synthetic corpus")?;
            println!("wrote {n} quadruples to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numeric = e.downcast_ref::<FiltError>().is_some_and(FiltError::is_numeric);
            ExitCode::from(if numeric { 1 } else { 2 })
        }
    }
}
