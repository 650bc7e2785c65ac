//! Score a triple with ComplEx and compare a positive against negatives with
//! the margin loss.
//!
//! cargo run --example complex_scoring

use filt::scoring::{complex_score, hinge_loss};

fn main() -> anyhow::Result<()> {
    // Real halves first, imaginary halves second.
    let s = [1.0, 0.5, 0.0, 0.5];
    let r = [0.5, -1.0, 1.0, 0.0];
    let o = [1.0, 0.0, -0.5, 1.0];
    let pos = complex_score(&s, &r, &o)?;
    let swapped = complex_score(&o, &r, &s)?;
    println!("score(s, r, o) = {pos:.4}, score(o, r, s) = {swapped:.4}");

    let negs = [pos - 2.0, pos - 0.5, pos + 0.3];
    let loss = hinge_loss([(pos, &negs[..])], 1.0);
    println!("margin loss against {negs:.2?}: {loss:.4}");
    Ok(())
}
