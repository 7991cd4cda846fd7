//! Sweeps the fusion weight on a benchmark where ID and OOD objects share
//! regional prototypes and differ only in their surroundings.
//!
//! ```text
//! cargo run --release --example dual_encoder_ablation
//! ```

use runa::harness::eval::{run_eval, EvalSettings};
use runa::harness::synth::{generate_synthetic, presets};
use runa::scoring::{FusionConfig, ProjectionLayer, ScoreMethod};

fn main() -> runa::Result<()> {
    let cfg = presets::dual_encoder();
    let data = generate_synthetic(&cfg)?;
    let projection = ProjectionLayer::identity(cfg.dim);
    println!("{:>7} {:>8} {:>8}", "lambda", "AUROC", "FPR95");
    for lambda in [1.0, 0.75, 0.5, 0.25, 0.0] {
        let settings = EvalSettings {
            fusion: FusionConfig::new(lambda)?,
            ..EvalSettings::new(ScoreMethod::MaxSim)
        };
        let r = run_eval(&data.eval, &data.bank, &projection, &settings)?;
        println!(
            "{lambda:>7} {:>8.4} {:>8.4}",
            r.auroc.unwrap_or(f64::NAN),
            r.fpr95.unwrap_or(f64::NAN)
        );
    }
    println!("lambda = 1 uses the object crop alone; lambda = 0 only the blurred frame.");
    Ok(())
}
