//! Few-shot fine-tuning of the projection layer.
//!
//! Only the projection weights move. Shots are regional embeddings from the
//! frozen encoder; the concept bank is frozen too. The objective is the
//! temperature-scaled cross-entropy between each projected shot and the
//! concept bank, summed over the batch:
//!
//! ```text
//! L = sum_b [ logsumexp_j(s_bj / tau) - s_b,y_b / tau ],   s_bj = cos(normalize(W u_b), t_j)
//! ```
//!
//! The gradient is exact, including the path through the normalization of
//! `W u`; see [`loss_gradient`].

use crate::bank::ConceptBank;
use crate::error::{Error, Result};
use crate::linalg::{dot, matvec, norm, Matrix};
use crate::rng::SplitMix64;
use crate::scoring::{similarities, ProjectionLayer};

/// One labeled regional embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledShot {
    pub id: String,
    pub embedding: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FewShotConfig {
    pub shots_per_class: usize,
    pub seed: u64,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        Self {
            shots_per_class: 10,
            seed: 0,
        }
    }
}

/// Draws `shots_per_class` candidates per bank class without replacement.
///
/// Output is class-major in bank order; within a class, shots appear in the
/// order they were drawn.
pub fn sample_few_shot(pool: &[LabeledShot], bank: &ConceptBank, cfg: FewShotConfig) -> Result<Vec<LabeledShot>> {
    if cfg.shots_per_class == 0 {
        return Err(Error::BadTrainConfig("shots_per_class must be at least 1".into()));
    }
    let k = bank.len();
    let mut by_class: Vec<Vec<&LabeledShot>> = vec![Vec::new(); k];
    for shot in pool {
        by_class
            .get_mut(shot.label)
            .ok_or(Error::LabelOutOfRange { index: shot.label, k })?
            .push(shot);
    }
    let need = cfg.shots_per_class;
    let mut rng = SplitMix64::new(cfg.seed);
    let mut out = Vec::with_capacity(need * k);
    for (class, mut candidates) in by_class.into_iter().enumerate() {
        if candidates.len() < need {
            return Err(Error::InsufficientShots {
                class: bank.labels()[class].clone(),
                have: candidates.len(),
                need,
            });
        }
        // Partial Fisher-Yates from the front.
        for i in 0..need {
            let j = i + rng.below((candidates.len() - i) as u64) as usize;
            candidates.swap(i, j);
        }
        out.extend(candidates[..need].iter().map(|&s| s.clone()));
    }
    Ok(out)
}

fn check_batch(batch: &[LabeledShot], projection: &ProjectionLayer, bank: &ConceptBank, tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::NonPositiveTau(tau));
    }
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if projection.dim() != bank.dim() {
        return Err(Error::DimMismatch {
            expected: bank.dim(),
            got: projection.dim(),
        });
    }
    for shot in batch {
        if shot.label >= bank.len() {
            return Err(Error::LabelOutOfRange {
                index: shot.label,
                k: bank.len(),
            });
        }
    }
    Ok(())
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Summed contrastive loss of `batch` under `projection`.
pub fn contrastive_loss(batch: &[LabeledShot], projection: &ProjectionLayer, bank: &ConceptBank, tau: f64) -> Result<f64> {
    check_batch(batch, projection, bank, tau)?;
    let mut total = 0.0;
    for shot in batch {
        let emb = projection.project(&shot.embedding)?;
        let logits: Vec<f64> = similarities(&emb, bank)?.iter().map(|s| s / tau).collect();
        total += log_sum_exp(&logits) - logits[shot.label];
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("contrastive loss"));
    }
    Ok(total)
}

/// Per-sample forward and backward pass; accumulates `dL/dW` into `grad` and
/// returns the sample's loss.
fn accumulate_sample(shot: &LabeledShot, weights: &Matrix, bank: &ConceptBank, tau: f64, grad: &mut Matrix) -> Result<f64> {
    let u = &shot.embedding;
    let z = matvec(weights, u)?;
    let nz = norm(&z);
    if nz == 0.0 {
        return Err(Error::ZeroVector);
    }
    let zhat: Vec<f64> = z.iter().map(|x| x / nz).collect();
    let logits: Vec<f64> = bank.vectors().iter().map(|t| dot(&zhat, t) / tau).collect();
    let lse = log_sum_exp(&logits);
    let loss = lse - logits[shot.label];

    // dL/ds_j = (softmax_j - [j == y]) / tau, pulled back through s_j = zhat . t_j.
    let mut g_zhat = vec![0.0; zhat.len()];
    for (j, (t, l)) in bank.vectors().iter().zip(&logits).enumerate() {
        let p = (l - lse).exp();
        let coeff = (p - if j == shot.label { 1.0 } else { 0.0 }) / tau;
        for (g, tj) in g_zhat.iter_mut().zip(t) {
            *g += coeff * tj;
        }
    }
    // Through zhat = z / |z|: dzhat/dz = (I - zhat zhat^T) / |z|.
    let radial = dot(&zhat, &g_zhat);
    let g_z: Vec<f64> = g_zhat
        .iter()
        .zip(&zhat)
        .map(|(g, zh)| (g - radial * zh) / nz)
        .collect();
    grad.add_outer(1.0, &g_z, u);
    Ok(loss)
}

/// Exact `dL/dW` of [`contrastive_loss`].
pub fn loss_gradient(batch: &[LabeledShot], projection: &ProjectionLayer, bank: &ConceptBank, tau: f64) -> Result<Matrix> {
    Ok(loss_and_gradient(batch, projection, bank, tau)?.1)
}

pub fn loss_and_gradient(
    batch: &[LabeledShot],
    projection: &ProjectionLayer,
    bank: &ConceptBank,
    tau: f64,
) -> Result<(f64, Matrix)> {
    check_batch(batch, projection, bank, tau)?;
    let d = projection.dim();
    let mut grad = Matrix::zeros(d, d);
    let mut loss = 0.0;
    for shot in batch {
        if shot.embedding.len() != d {
            return Err(Error::DimMismatch {
                expected: d,
                got: shot.embedding.len(),
            });
        }
        loss += accumulate_sample(shot, projection.weights(), bank, tau, &mut grad)?;
    }
    if !loss.is_finite() || grad.as_slice().iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("loss gradient"));
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::BadTrainConfig(m.to_string()));
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning rate must be finite and non-negative");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) || !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("betas must lie in (0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return bad("weight decay must be finite and non-negative");
        }
        Ok(())
    }
}

/// AdamW moments for one parameter matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    cfg: AdamWConfig,
    rows: usize,
    cols: usize,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, rows: usize, cols: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            rows,
            cols,
            m: vec![0.0; rows * cols],
            v: vec![0.0; rows * cols],
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// `w <- w (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps)`, decay decoupled
    /// from the moments.
    pub fn step(&mut self, weights: &mut Matrix, grad: &Matrix) -> Result<()> {
        for m in [&*weights, grad] {
            if m.rows() != self.rows || m.cols() != self.cols {
                return Err(Error::Shape(format!(
                    "optimizer holds {}x{} state, got {}x{}",
                    self.rows,
                    self.cols,
                    m.rows(),
                    m.cols()
                )));
            }
        }
        self.step += 1;
        let AdamWConfig {
            learning_rate: lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let decay = 1.0 - lr * weight_decay;
        let w = weights.as_mut_slice();
        for i in 0..w.len() {
            let g = grad.as_slice()[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            w[i] = w[i] * decay - lr * (m_hat / (v_hat.sqrt() + eps));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Temperature of the contrastive loss.
    pub loss_tau: f64,
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            epochs: 100,
            loss_tau: 0.01,
            optimizer: AdamWConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::BadTrainConfig("batch size and epochs must be positive".into()));
        }
        if !(self.loss_tau > 0.0) || !self.loss_tau.is_finite() {
            return Err(Error::NonPositiveTau(self.loss_tau));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub projection: ProjectionLayer,
    /// Summed loss over all shots before the first update.
    pub initial_loss: f64,
    /// Summed loss over all shots at the end of each epoch.
    pub loss_history: Vec<f64>,
}

/// Mini-batch AdamW over shuffled shots. The final batch of an epoch may be
/// short; the learning rate is constant.
pub fn train(shots: &[LabeledShot], bank: &ConceptBank, cfg: &TrainConfig, init: ProjectionLayer) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_batch(shots, &init, bank, cfg.loss_tau)?;
    let d = init.dim();
    let mut projection = init;
    let mut opt = AdamW::new(cfg.optimizer, d, d)?;
    let mut rng = SplitMix64::new(cfg.seed);
    let initial_loss = contrastive_loss(shots, &projection, bank, cfg.loss_tau)?;
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..shots.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size.min(shots.len()));
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for idx in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| shots[i].clone()));
            let grad = loss_gradient(&batch, &projection, bank, cfg.loss_tau)?;
            opt.step(projection.weights_mut(), &grad)?;
        }
        loss_history.push(contrastive_loss(shots, &projection, bank, cfg.loss_tau)?);
    }
    Ok(TrainOutcome {
        projection,
        initial_loss,
        loss_history,
    })
}
