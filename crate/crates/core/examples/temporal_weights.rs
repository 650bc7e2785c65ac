//! How each encoder weighs the same neighbourhood: time-difference weights,
//! the two learned time encodings, and attention.
//!
//! cargo run --example temporal_weights

use filt::encoder::{attention_weights, filt_weights, functional_time, time2vec};
use filt::numeric::Activation;

fn main() -> anyhow::Result<()> {
    let t_q = 10;
    let times = [10, 9, 7, 2];
    for lambda in [0.2, 1.0, 5.0] {
        let w = filt_weights(t_q, &times, lambda)?;
        println!("lambda {lambda:>3}: weights {w:.4?} for times {times:?}");
    }

    let omega = [0.5, 1.0, 0.25, 0.125];
    let phi = [0.0, 0.1, 0.2, 0.3];
    for t in [0.0, 1.0, 5.0] {
        println!(
            "t={t}: time2vec {:.3?}  functional {:.3?}",
            time2vec(t, &omega, &phi),
            functional_time(t, &omega, &phi)
        );
    }

    let q = [1.0, 0.0, -1.0];
    let keys = vec![vec![1.0, 0.0, -1.0], vec![0.0, 1.0, 0.0], vec![-1.0, 0.0, 1.0]];
    println!("attention {:.4?}", attention_weights(&q, &keys, Activation::LeakyRelu));
    Ok(())
}
