//! Scoring a record set, calibrating the threshold, and fine-tuning runs.

use std::collections::HashSet;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::bank::ConceptBank;
use crate::error::{Error, Result};
use crate::metrics::{auroc, calibrate_threshold, fpr_at_tpr, DEFAULT_TPR};
use crate::scoring::{classify, score_embeddings, FusionConfig, Membership, ProjectionLayer, ScoreMethod};
use crate::train::{sample_few_shot, train, FewShotConfig, LabeledShot, TrainConfig, TrainOutcome};

use super::EvalRecord;

pub const THREADS_ENV: &str = "RUNA_THREADS";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub method: ScoreMethod,
    pub fusion: FusionConfig,
    /// Fixed threshold. When absent it is calibrated on the ID records.
    pub gamma: Option<f64>,
    /// TPR used for calibration and for the FPR metric.
    pub tpr: f64,
    /// Shots behind the projection, for the report only.
    pub shots: usize,
}

impl EvalSettings {
    pub fn new(method: ScoreMethod) -> Self {
        Self {
            method,
            fusion: FusionConfig::default(),
            gamma: None,
            tpr: DEFAULT_TPR,
            shots: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaSource {
    Calibrated,
    Provided,
}

impl GammaSource {
    pub fn name(self) -> &'static str {
        match self {
            GammaSource::Calibrated => "calibrated",
            GammaSource::Provided => "provided",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordScore {
    pub id: String,
    pub truth: Membership,
    pub sigma: f64,
    pub decision: Membership,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: ScoreMethod,
    pub lambda: f64,
    pub shots: usize,
    pub tpr: f64,
    pub gamma: f64,
    pub gamma_source: GammaSource,
    pub records: Vec<RecordScore>,
    /// `None` when either class is missing from the records.
    pub fpr95: Option<f64>,
    pub auroc: Option<f64>,
    pub runtime: Duration,
    /// Free-form settings echoed into the report.
    pub config: Vec<(String, String)>,
}

impl EvalReport {
    pub fn count(&self, truth: Membership) -> usize {
        self.records.iter().filter(|r| r.truth == truth).count()
    }

    pub fn sigmas(&self, truth: Membership) -> Vec<f64> {
        self.records.iter().filter(|r| r.truth == truth).map(|r| r.sigma).collect()
    }
}

/// Worker pool sized by `RUNA_THREADS`, or rayon's default when unset.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::BadConfig(format!("{THREADS_ENV} must be a non-negative integer, got `{v}`")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::BadConfig(e.to_string()))
}

/// Checks every record against the bank dimension.
pub fn check_dims(records: &[EvalRecord], bank: &ConceptBank) -> Result<()> {
    for r in records {
        for (name, v) in [("global", &r.global), ("regional", &r.regional)] {
            if v.len() != bank.dim() {
                return Err(Error::format(
                    r.id.as_str(),
                    format!("{name} embedding has dim {} but the bank has dim {}", v.len(), bank.dim()),
                ));
            }
        }
    }
    Ok(())
}

/// Scores all records in parallel. Output order matches input order.
pub fn score_all(
    records: &[EvalRecord],
    projection: &ProjectionLayer,
    bank: &ConceptBank,
    fusion: FusionConfig,
    method: ScoreMethod,
) -> Result<Vec<f64>> {
    check_dims(records, bank)?;
    if projection.dim() != bank.dim() {
        return Err(Error::DimMismatch {
            expected: bank.dim(),
            got: projection.dim(),
        });
    }
    let pool = worker_pool()?;
    pool.install(|| {
        records
            .par_iter()
            .map(|r| score_embeddings(&r.global, &r.regional, projection, bank, fusion, method))
            .collect()
    })
}

pub fn run_eval(
    records: &[EvalRecord],
    bank: &ConceptBank,
    projection: &ProjectionLayer,
    settings: &EvalSettings,
) -> Result<EvalReport> {
    let start = Instant::now();
    let sigmas = score_all(records, projection, bank, settings.fusion, settings.method)?;
    let id: Vec<f64> = records
        .iter()
        .zip(&sigmas)
        .filter(|(r, _)| r.truth == Membership::Id)
        .map(|(_, &s)| s)
        .collect();
    let ood: Vec<f64> = records
        .iter()
        .zip(&sigmas)
        .filter(|(r, _)| r.truth == Membership::Ood)
        .map(|(_, &s)| s)
        .collect();

    let (gamma, gamma_source) = match settings.gamma {
        Some(g) if g.is_finite() => (g, GammaSource::Provided),
        Some(_) => return Err(Error::NonFinite("gamma")),
        None if id.is_empty() => return Err(Error::NoIdRecords),
        None => (calibrate_threshold(&id, settings.tpr)?, GammaSource::Calibrated),
    };
    let both = !id.is_empty() && !ood.is_empty();
    let fpr95 = if both { Some(fpr_at_tpr(&id, &ood, settings.tpr)?) } else { None };
    let auroc = if both { Some(auroc(&id, &ood)?) } else { None };

    let records = records
        .iter()
        .zip(sigmas)
        .map(|(r, sigma)| RecordScore {
            id: r.id.clone(),
            truth: r.truth,
            sigma,
            decision: classify(sigma, gamma),
        })
        .collect();
    Ok(EvalReport {
        method: settings.method,
        lambda: settings.fusion.lambda(),
        shots: settings.shots,
        tpr: settings.tpr,
        gamma,
        gamma_source,
        records,
        fpr95,
        auroc,
        runtime: start.elapsed(),
        config: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneSettings {
    pub few_shot: FewShotConfig,
    pub train: TrainConfig,
    pub eval: EvalSettings,
    /// Train on the whole pool instead of sampling shots.
    pub all_shots: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOutcome {
    pub shots: Vec<LabeledShot>,
    pub training: TrainOutcome,
    /// Identity projection.
    pub before: EvalReport,
    pub after: EvalReport,
}

/// Refuses training shots that share an id or a regional embedding with any
/// evaluation record.
pub fn check_disjoint(shots: &[LabeledShot], records: &[EvalRecord]) -> Result<()> {
    let ids: HashSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<u64>>();
    let vectors: HashSet<Vec<u64>> = records.iter().map(|r| bits(&r.regional)).collect();
    for s in shots {
        if ids.contains(s.id.as_str()) {
            return Err(Error::Overlap(format!("training shot `{}` is also an evaluation record", s.id)));
        }
        if vectors.contains(&bits(&s.embedding)) {
            return Err(Error::Overlap(format!(
                "training shot `{}` duplicates an evaluation embedding",
                s.id
            )));
        }
    }
    Ok(())
}

pub fn run_finetune(
    pool: &[LabeledShot],
    records: &[EvalRecord],
    bank: &ConceptBank,
    settings: &FinetuneSettings,
) -> Result<FinetuneOutcome> {
    let shots = if settings.all_shots {
        pool.to_vec()
    } else {
        sample_few_shot(pool, bank, settings.few_shot)?
    };
    check_disjoint(&shots, records)?;
    let identity = ProjectionLayer::identity(bank.dim());
    let before = run_eval(records, bank, &identity, &EvalSettings { shots: 0, ..settings.eval })?;
    let training = train(&shots, bank, &settings.train, identity)?;
    let shot_count = if settings.all_shots { shots.len() } else { settings.few_shot.shots_per_class };
    let after = run_eval(
        records,
        bank,
        &training.projection,
        &EvalSettings {
            shots: shot_count,
            ..settings.eval
        },
    )?;
    Ok(FinetuneOutcome {
        shots,
        training,
        before,
        after,
    })
}
