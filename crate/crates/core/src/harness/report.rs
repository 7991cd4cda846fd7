//! Report emission: a key=value document with one section per method, a
//! separate timing sidecar, a human table, and the per-record score dump.
//!
//! ```text
//! [config]
//! bank=data/bank.tsv
//!
//! [method.max-sim]
//! tau=none
//! lambda=0.5
//! ...
//! ```
//!
//! Floats use the shortest representation that round-trips, so identical
//! runs produce byte-identical documents. Wall-clock time lives only in the
//! timing sidecar.

use std::fmt::Write as _;

use crate::scoring::Membership;

use super::eval::EvalReport;

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

/// Machine-readable report. The `[config]` section comes from the first
/// report's config echo.
pub fn format_report(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    if let Some(first) = reports.first() {
        s.push_str("[config]\n");
        for (k, v) in &first.config {
            writeln!(s, "{k}={v}").unwrap();
        }
    }
    for r in reports {
        write!(
            s,
            "\n[method.{}]\ntau={}\nlambda={}\nshots={}\nrecords={}\nid_records={}\nood_records={}\n\
             gamma={}\ngamma_source={}\ntpr={}\nfpr95={}\nauroc={}\n",
            r.method.name(),
            opt(r.method.tau()),
            r.lambda,
            r.shots,
            r.records.len(),
            r.count(Membership::Id),
            r.count(Membership::Ood),
            r.gamma,
            r.gamma_source.name(),
            r.tpr,
            opt(r.fpr95),
            opt(r.auroc),
        )
        .unwrap();
    }
    s
}

pub fn format_timing(reports: &[EvalReport]) -> String {
    let mut s = String::from("[timing]\n");
    for r in reports {
        writeln!(s, "{}.runtime_ms={:.3}", r.method.name(), r.runtime.as_secs_f64() * 1e3).unwrap();
    }
    s
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x))
}

/// Percentages, one row per report.
pub fn format_table(reports: &[EvalReport]) -> String {
    let mut s = format!(
        "{:<12} {:>8} {:>7} {:>6} {:>8} {:>8} {:>8} {:>12} {:>10}\n",
        "method", "tau", "lambda", "shots", "records", "FPR95", "AUROC", "gamma", "time(ms)"
    );
    for r in reports {
        writeln!(
            s,
            "{:<12} {:>8} {:>7} {:>6} {:>8} {:>8} {:>8} {:>12.6} {:>10.1}",
            r.method.name(),
            r.method.tau().map_or_else(|| "-".to_string(), |t| t.to_string()),
            r.lambda,
            r.shots,
            r.records.len(),
            pct(r.fpr95),
            pct(r.auroc),
            r.gamma,
            r.runtime.as_secs_f64() * 1e3,
        )
        .unwrap();
    }
    s
}

/// `record_id,truth,sigma,decision`, one line per record in input order.
pub fn format_scores_csv(report: &EvalReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["record_id", "truth", "sigma", "decision"]).expect("in-memory write");
    for r in &report.records {
        w.write_record([r.id.clone(), r.truth.to_string(), r.sigma.to_string(), r.decision.to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 fields")
}
