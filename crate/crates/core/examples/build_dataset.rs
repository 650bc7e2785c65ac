//! Turn a raw quadruple corpus into background and meta-learning sets and
//! inspect the result.
//!
//! cargo run --example build_dataset

use filt::data::{build_ooc_splits, dataset_stats, parse_quadruples_str, validate_splits, DatasetStats, MetaSplit, SplitConfig};
use filt::synth::{generate, SynthConfig};

fn main() -> anyhow::Result<()> {
    let corpus = generate(&SynthConfig::default())?;
    let parsed = parse_quadruples_str(&corpus.quadruples, "synthetic")?;
    println!(
        "{} quadruples, {} entities, {} relations, {} timestamps",
        parsed.quads.len(),
        parsed.vocab.entities.len(),
        parsed.vocab.relations.len(),
        parsed.vocab.times.len()
    );

    let cfg = SplitConfig {
        sample_frac: 1.0,
        seed: 3,
        ..SplitConfig::default()
    };
    let splits = build_ooc_splits(&parsed.quads, &parsed.vocab, &cfg)?;
    println!("{}", validate_splits(&splits));
    println!("{}\n{}", DatasetStats::CSV_HEADER, dataset_stats(&splits).csv_row("synthetic"));

    for split in MetaSplit::ALL {
        let first: Vec<&str> = splits
            .unseen(split)
            .iter()
            .take(4)
            .filter_map(|&e| splits.vocab.entities.token(e))
            .collect();
        println!("meta-{:<5} unseen entities start with {first:?}", split.name());
    }
    Ok(())
}
