//! Finite-difference check of the full episode loss for every encoder and
//! concept variant on the toy problem.
//!
//! cargo run --release --example gradient_check

use filt::encoder::EncoderKind;
use filt::fixtures::ToyProblem;
use filt::model::ConceptVariant;
use filt::numeric::GradcheckConfig;

fn main() -> anyhow::Result<()> {
    let cfg = GradcheckConfig {
        max_coords: usize::MAX,
        ..GradcheckConfig::default()
    };
    let mut runs: Vec<(EncoderKind, ConceptVariant)> =
        EncoderKind::ALL.into_iter().map(|e| (e, ConceptVariant::Full)).collect();
    runs.extend(
        [ConceptVariant::NoConcept, ConceptVariant::NoLower, ConceptVariant::NoUpper]
            .into_iter()
            .map(|v| (EncoderKind::Filt, v)),
    );
    let mut ok = true;
    for (enc, var) in runs {
        let t = std::time::Instant::now();
        let report = ToyProblem::new(enc, var, 7)?.gradcheck(cfg)?;
        println!(
            "{:<10} {:<10} checked {:>5}  kinks {:>2}  max rel err {:.2e}  {:.2}s",
            enc.name(),
            var.name(),
            report.num_checked(),
            report.num_kinks(),
            report.max_rel_error,
            t.elapsed().as_secs_f64()
        );
        if !report.passed() {
            println!("{report}");
            ok = false;
        }
    }
    if !ok {
        anyhow::bail!("gradient check failed");
    }
    Ok(())
}
