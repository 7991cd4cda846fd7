//! Loading, synthesis, evaluation and reporting built on the core modules.

pub mod detections;
pub mod eval;
pub mod files;
pub mod report;
pub mod synth;

use crate::scoring::Membership;

/// One scored object: both embeddings plus ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub id: String,
    pub truth: Membership,
    /// Bank index of the true class, when known.
    pub truth_label: Option<usize>,
    pub global: Vec<f64>,
    pub regional: Vec<f64>,
}
