//! Compares the three score reductions on the pinned synthetic benchmark
//! and prints text histograms of the ID and OOD scores for each.
//!
//! ```text
//! cargo run --release --example score_distributions
//! ```

use runa::harness::eval::{run_eval, EvalSettings};
use runa::harness::synth::{generate_synthetic, presets};
use runa::scoring::{Membership, ProjectionLayer, ScoreMethod};

fn histogram(id: &[f64], ood: &[f64], bins: usize) {
    let lo = id.iter().chain(ood).copied().fold(f64::INFINITY, f64::min);
    let hi = id.iter().chain(ood).copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo).max(f64::MIN_POSITIVE) / bins as f64;
    let count = |xs: &[f64]| {
        let mut c = vec![0usize; bins];
        for &x in xs {
            c[(((x - lo) / width) as usize).min(bins - 1)] += 1;
        }
        c
    };
    let (ci, co) = (count(id), count(ood));
    let scale = *ci.iter().chain(&co).max().unwrap_or(&1) as f64 / 40.0;
    for b in 0..bins {
        let bar = |n: usize| (n as f64 / scale).round() as usize;
        println!(
            "{:>9.4} | {:<40} | {}",
            lo + width * (b as f64 + 0.5),
            "#".repeat(bar(ci[b])),
            "o".repeat(bar(co[b]))
        );
    }
}

fn main() -> runa::Result<()> {
    let cfg = presets::figure4();
    let data = generate_synthetic(&cfg)?;
    let projection = ProjectionLayer::identity(cfg.dim);
    for method in [ScoreMethod::DirectSum, ScoreMethod::mcm(1.0)?, ScoreMethod::MaxSim] {
        let report = run_eval(&data.eval, &data.bank, &projection, &EvalSettings::new(method))?;
        println!(
            "\n{method}: AUROC {:.4}  FPR95 {:.4}   (# = ID, o = OOD)",
            report.auroc.unwrap_or(f64::NAN),
            report.fpr95.unwrap_or(f64::NAN)
        );
        histogram(&report.sigmas(Membership::Id), &report.sigmas(Membership::Ood), 16);
    }
    Ok(())
}
