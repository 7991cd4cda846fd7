//! Threshold calibration, FPR at a target TPR, and AUROC.
//!
//! Scores are uncertainties: ID samples should score low. A sample is
//! accepted as ID when its score is at most the threshold, so an OOD sample
//! sitting exactly on the threshold counts as a false positive.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::scoring::Membership;

pub const DEFAULT_TPR: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSample {
    pub id: String,
    pub sigma: f64,
    pub truth: Membership,
}

fn sorted(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("score"));
    }
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Smallest `k` with `k / n >= tpr`, compared exactly as written.
fn quantile_rank(n: usize, tpr: f64) -> usize {
    let nf = n as f64;
    let mut k = ((tpr * nf).ceil() as usize).clamp(1, n);
    while k > 1 && ((k - 1) as f64) / nf >= tpr {
        k -= 1;
    }
    while k < n && (k as f64) / nf < tpr {
        k += 1;
    }
    k
}

/// Smallest observed ID score `s` with `|{sigma <= s}| / n >= tpr`.
pub fn calibrate_threshold(id_scores: &[f64], tpr: f64) -> Result<f64> {
    if !(tpr > 0.0 && tpr <= 1.0) {
        return Err(Error::Format {
            location: None,
            message: format!("target TPR must lie in (0, 1], got {tpr}"),
        });
    }
    let s = sorted(id_scores)?;
    Ok(s[quantile_rank(s.len(), tpr) - 1])
}

/// Fraction of OOD scores accepted (`<= gamma`) at the threshold that keeps
/// `tpr` of the ID scores.
pub fn fpr_at_tpr(id_scores: &[f64], ood_scores: &[f64], tpr: f64) -> Result<f64> {
    let gamma = calibrate_threshold(id_scores, tpr)?;
    let ood = sorted(ood_scores)?;
    let accepted = ood.partition_point(|&s| s <= gamma);
    Ok(accepted as f64 / ood.len() as f64)
}

/// Probability that a random ID score is below a random OOD score, ties
/// counted half. Computed from midranks of the pooled sample.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    sorted(id_scores)?;
    sorted(ood_scores)?;
    let (n_id, n_ood) = (id_scores.len() as u64, ood_scores.len() as u64);
    let mut pooled: Vec<(f64, bool)> = id_scores
        .iter()
        .map(|&s| (s, false))
        .chain(ood_scores.iter().map(|&s| (s, true)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Twice the OOD rank sum, so midranks stay integral.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0.total_cmp(&pooled[i].0) == Ordering::Equal {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share the midrank (i + j + 2) / 2.
        let twice_midrank = (i + j + 2) as u64;
        let ood_in_run = pooled[i..=j].iter().filter(|p| p.1).count() as u64;
        twice_rank_sum += twice_midrank * ood_in_run;
        i = j + 1;
    }
    // 2U = 2 R_ood - n_ood (n_ood + 1), U counts (id < ood) pairs plus half ties.
    let twice_u = twice_rank_sum - n_ood * (n_ood + 1);
    Ok(twice_u as f64 / (2 * n_id * n_ood) as f64)
}

/// Splits samples by ground truth into `(id, ood)` score lists.
pub fn split_by_truth(samples: &[ScoreSample]) -> (Vec<f64>, Vec<f64>) {
    let mut id = Vec::new();
    let mut ood = Vec::new();
    for s in samples {
        match s.truth {
            Membership::Id => id.push(s.sigma),
            Membership::Ood => ood.push(s.sigma),
        }
    }
    (id, ood)
}
