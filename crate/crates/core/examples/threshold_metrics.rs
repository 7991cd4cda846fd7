//! Threshold calibration, FPR at 95% TPR and AUROC on hand-written scores.
//!
//! ```text
//! cargo run --example threshold_metrics
//! ```

use runa::metrics::{auroc, calibrate_threshold, fpr_at_tpr, DEFAULT_TPR};
use runa::scoring::classify;

fn main() -> runa::Result<()> {
    let id: Vec<f64> = (1..=20).map(|i| -1.0 + 0.02 * i as f64).collect();
    let ood = [-0.95, -0.7, -0.64, -0.5, -0.3, -0.1];

    let gamma = calibrate_threshold(&id, DEFAULT_TPR)?;
    println!("gamma at TPR 0.95: {gamma}");
    for s in ood {
        println!("  ood score {s:>6}: {}", classify(s, gamma));
    }
    println!("FPR95: {}", fpr_at_tpr(&id, &ood, DEFAULT_TPR)?);
    println!("AUROC: {}", auroc(&id, &ood)?);
    println!("score equal to gamma is {}", classify(gamma, gamma));
    Ok(())
}
