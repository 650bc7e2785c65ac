//! Concept vectors and injection on hand-made embeddings: the softmax mix of
//! an entity's concepts, and the gated update at different gate values.
//!
//! cargo run --example concept_injection

use filt::concept::{concept_vector, correct_one, inject, mean_rows};
use filt::numeric::Activation;

fn main() -> anyhow::Result<()> {
    let members: [&[f64]; 3] = [&[1.0, 0.0, 0.5], &[0.8, 0.2, 0.4], &[1.2, -0.2, 0.6]];
    let country = mean_rows(&members);
    let (country, alpha) = correct_one(&country, &members);
    println!("country concept {country:.3?}, member weights {alpha:.3?}");

    let sector = vec![-0.5, 1.0, 0.0];
    let entity = [0.9, 0.1, 0.5];
    let (mixed, beta) = concept_vector(&entity, &[&country, &sector])?;
    println!("concept mix {mixed:.3?} with weights {beta:.3?}");

    let w = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    for delta in [0.0, 0.5, 1.0] {
        let h = inject(&entity, &mixed, &w, delta, Activation::LeakyRelu);
        println!("delta {delta:.1}: {h:.3?}");
    }
    Ok(())
}
