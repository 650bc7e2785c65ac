//! Sample a K-shot training task and a fixed-shot evaluation episode from the
//! meta-training set, then draw negatives for one query.
//!
//! cargo run --example episodes

use filt::data::{build_ooc_splits, parse_quadruples_str, MetaSplit, SplitConfig};
use filt::episodes::{sample_negatives_seeded, EpisodeSampler, Shots, UnseenSide};
use filt::synth::{generate, SynthConfig};

fn main() -> anyhow::Result<()> {
    let corpus = generate(&SynthConfig::default())?;
    let parsed = parse_quadruples_str(&corpus.quadruples, "synthetic")?;
    let cfg = SplitConfig {
        sample_frac: 1.0,
        ..SplitConfig::default()
    };
    let splits = build_ooc_splits(&parsed.quads, &parsed.vocab, &cfg)?;
    let meta = splits.meta(MetaSplit::Train);
    let sampler = EpisodeSampler::new(meta, splits.unseen(MetaSplit::Train));

    let task = sampler.sample_task(4, 3, 11)?;
    for ep in &task.entities {
        println!(
            "entity {:>3}: support {:?}, {} queries",
            ep.entity,
            ep.support,
            ep.query.len()
        );
    }

    let ep = &task.entities[0];
    let q = meta[ep.query[0]];
    let side = UnseenSide::of(&q, ep.entity).expect("query touches its entity");
    let pool: Vec<usize> = (0..splits.num_entities()).collect();
    let negs = sample_negatives_seeded(&q, side, 5, &pool, None, 1)?;
    println!("query {q:?}, unseen side {side:?}");
    for n in negs {
        println!("  negative {:?}", n.quadruple());
    }

    let eval = sampler.eval_episode(&"random".parse::<Shots>()?, 5)?;
    let sizes: Vec<usize> = eval.entities.iter().take(10).map(|e| e.support.len()).collect();
    println!("random-shot evaluation support sizes: {sizes:?}");
    Ok(())
}
