//! Filtered ranking with ties and the resulting metrics.
//!
//! cargo run --example ranking

use std::collections::HashSet;

use filt::eval::{random_mrr, rank_query, Metrics};

fn main() -> anyhow::Result<()> {
    let candidates: Vec<usize> = (0..8).collect();
    let scores = [0.9, 0.4, 0.7, 0.7, 0.1, 0.95, 0.2, 0.7];
    let truth = 2;

    let raw = rank_query(&candidates, &scores, truth, &HashSet::new())?;
    // Entity 5 is another true answer of the same query, so it is filtered.
    let filtered = rank_query(&candidates, &scores, truth, &HashSet::from([5]))?;
    println!("raw rank {} of {}, filtered rank {} of {}", raw.0, raw.1, filtered.0, filtered.1);

    let ranks = [1, 2, 5, 12, 3, 1, 40];
    let m = Metrics::from_ranks(&ranks)?;
    println!("{}", Metrics::CSV_HEADER);
    println!("{}", m.csv_row("toy", "1", "filt", "FILT", 0));
    println!("chance MRR over 8 candidates: {:.4}", random_mrr(8));
    Ok(())
}
