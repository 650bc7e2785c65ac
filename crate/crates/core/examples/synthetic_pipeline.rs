//! Generate the synthetic corpus, build splits, pre-train, meta-train and
//! evaluate on meta-test at several shot sizes.
//!
//! cargo run --release --example synthetic_pipeline -- [encoder] [batches]

use filt::data::{build_ooc_splits, dataset_stats, validate_splits, MetaSplit, SplitConfig};
use filt::episodes::Shots;
use filt::eval::{random_mrr, KnownFacts};
use filt::synth::{generate, SynthConfig};
use filt::trainer::{evaluate_split, meta_train, pretrained_params};
use filt::TrainConfig;

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let encoder = args.get(1).map(String::as_str).unwrap_or("filt");
    let batches: usize = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(1000);

    let corpus = generate(&SynthConfig::default())?;
    let (parsed, concepts) = corpus.parse()?;
    let split_cfg = SplitConfig {
        sample_frac: 1.0,
        ..SplitConfig::default()
    };
    let splits = build_ooc_splits(&parsed.quads, &parsed.vocab, &split_cfg)?;
    assert!(validate_splits(&splits).passed());
    println!("{}", dataset_stats(&splits));

    let cfg = TrainConfig {
        dim: 32,
        time_dim: 4,
        entities_per_task: 16,
        lr: 5e-3,
        batches,
        eval_every: 100,
        pretrain_epochs: 30,
        encoder: encoder.parse()?,
        ..TrainConfig::default()
    };
    let t0 = std::time::Instant::now();
    let (params, losses) = pretrained_params(&splits, &concepts, &cfg)?;
    println!(
        "pre-training: loss {:.2} -> {:.2} in {:.1}s",
        losses[0],
        losses[losses.len() - 1],
        t0.elapsed().as_secs_f64()
    );
    let out = meta_train(params, &splits, &concepts, &cfg, None)?;
    println!(
        "meta-training: best valid MRR {:?} at batch {} ({:.1}s)",
        out.best_valid_mrr,
        out.best_batch,
        t0.elapsed().as_secs_f64()
    );

    let known = KnownFacts::new(splits.all_quads());
    for k in [1, 3, 5] {
        let res = evaluate_split(
            &out.best,
            &cfg.model(),
            &splits,
            &concepts,
            MetaSplit::Test,
            &Shots::Fixed(k),
            cfg.eval_seed,
            Some(&known),
            0,
        )?
        .expect("test queries");
        let chance = res.ranks.iter().map(|r| random_mrr(r.num_candidates)).sum::<f64>() / res.ranks.len() as f64;
        println!(
            "{k}-shot: MRR {:.4}  H@1 {:.4}  H@3 {:.4}  H@10 {:.4}  ({} queries, chance {:.4})",
            res.metrics.mrr, res.metrics.hits1, res.metrics.hits3, res.metrics.hits10, res.metrics.num_queries, chance
        );
    }
    Ok(())
}
