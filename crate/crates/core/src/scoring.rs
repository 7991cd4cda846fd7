//! Regional uncertainty scoring.
//!
//! A detection is scored by fusing its global and regional embeddings,
//! projecting the fused vector onto the unit sphere, measuring cosine
//! similarity to every concept in the bank and reducing those similarities to
//! one uncertainty value. Every score is oriented so that larger means more
//! likely out-of-distribution, and [`classify`] accepts a region as ID when
//! its uncertainty is at most the threshold.

use std::fmt;
use std::str::FromStr;

use crate::bank::ConceptBank;
use crate::encoder::ToyEncoder;
use crate::error::{Error, Result};
use crate::linalg::{axpby, cosine_sim, l2_normalize, matvec, Matrix};
use crate::raster::{background_blur, crop, BBox, Raster};

pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_BLUR_RADIUS: f64 = 1.0;

/// In-distribution or out-of-distribution, used both for ground truth and
/// for decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Membership {
    Id,
    Ood,
}

impl fmt::Display for Membership {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Membership::Id => "ID",
            Membership::Ood => "OOD",
        })
    }
}

impl FromStr for Membership {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "ID" => Ok(Membership::Id),
            "OOD" => Ok(Membership::Ood),
            other => Err(format!("expected ID or OOD, found `{other}`")),
        }
    }
}

/// The trainable square map applied after fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionLayer {
    weights: Matrix,
}

impl ProjectionLayer {
    pub fn new(weights: Matrix) -> Result<Self> {
        if !weights.is_square() {
            return Err(Error::Shape(format!(
                "projection must be square, got {}x{}",
                weights.rows(),
                weights.cols()
            )));
        }
        Ok(Self { weights })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weights: Matrix::identity(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub fn into_weights(self) -> Matrix {
        self.weights
    }

    /// `normalize(W v)`.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        l2_normalize(&matvec(&self.weights, v)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    lambda: f64,
}

impl FusionConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::BadLambda(lambda));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
        }
    }
}

/// `lambda * regional + (1 - lambda) * global`, left unnormalized.
pub fn fuse(global: &[f64], regional: &[f64], cfg: FusionConfig) -> Result<Vec<f64>> {
    axpby(cfg.lambda, regional, 1.0 - cfg.lambda, global)
}

pub fn similarities(emb: &[f64], bank: &ConceptBank) -> Result<Vec<f64>> {
    if emb.len() != bank.dim() {
        return Err(Error::DimMismatch {
            expected: bank.dim(),
            got: emb.len(),
        });
    }
    bank.vectors().iter().map(|t| cosine_sim(emb, t)).collect()
}

/// How a similarity vector is reduced to an uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreMethod {
    /// Negated sum of all similarities.
    DirectSum,
    /// Negated maximum softmax probability of `similarities / tau`.
    Mcm { tau: f64 },
    /// Negated maximum similarity.
    MaxSim,
}

impl ScoreMethod {
    pub fn mcm(tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::NonPositiveTau(tau));
        }
        Ok(ScoreMethod::Mcm { tau })
    }

    /// Parses `direct-sum`, `mcm` or `max-sim`; `tau` is only used by MCM.
    pub fn parse(name: &str, tau: f64) -> Result<Self> {
        match name {
            "direct-sum" => Ok(ScoreMethod::DirectSum),
            "mcm" => Self::mcm(tau),
            "max-sim" => Ok(ScoreMethod::MaxSim),
            other => Err(Error::Format {
                location: None,
                message: format!("unknown method `{other}`"),
            }),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScoreMethod::DirectSum => "direct-sum",
            ScoreMethod::Mcm { .. } => "mcm",
            ScoreMethod::MaxSim => "max-sim",
        }
    }

    pub fn tau(&self) -> Option<f64> {
        match self {
            ScoreMethod::Mcm { tau } => Some(*tau),
            _ => None,
        }
    }

    pub fn score(&self, sims: &[f64]) -> Result<f64> {
        match *self {
            ScoreMethod::DirectSum => score_direct_sum(sims),
            ScoreMethod::Mcm { tau } => score_mcm(sims, tau),
            ScoreMethod::MaxSim => score_max_sim(sims),
        }
    }
}

impl fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreMethod::Mcm { tau } => write!(f, "mcm(tau={tau})"),
            other => f.write_str(other.name()),
        }
    }
}

pub fn score_direct_sum(sims: &[f64]) -> Result<f64> {
    if sims.is_empty() {
        return Err(Error::EmptySims);
    }
    Ok(-sims.iter().sum::<f64>())
}

pub fn score_max_sim(sims: &[f64]) -> Result<f64> {
    let max = sims.iter().copied().reduce(f64::max).ok_or(Error::EmptySims)?;
    Ok(-max)
}

pub fn score_mcm(sims: &[f64], tau: f64) -> Result<f64> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::NonPositiveTau(tau));
    }
    if sims.len() < 2 {
        return Err(Error::TooFewConcepts {
            need: 2,
            got: sims.len(),
        });
    }
    let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // The largest softmax entry is exp(0) / sum after subtracting the max.
    let denom: f64 = sims.iter().map(|s| ((s - max) / tau).exp()).sum();
    let sigma = -1.0 / denom;
    if !sigma.is_finite() {
        return Err(Error::NonFinite("MCM score"));
    }
    Ok(sigma)
}

/// ID when `sigma <= gamma`.
pub fn classify(sigma: f64, gamma: f64) -> Membership {
    if sigma <= gamma {
        Membership::Id
    } else {
        Membership::Ood
    }
}

/// Where a record's two embeddings come from.
#[derive(Debug, Clone, Copy)]
pub enum RecordInput<'a> {
    /// Precomputed global and regional embeddings.
    Embeddings { global: &'a [f64], regional: &'a [f64] },
    /// Encode on the fly: the crop feeds the regional path, the frame with a
    /// blurred background feeds the global path.
    Raster {
        image: &'a Raster,
        bbox: BBox,
        encoder: &'a ToyEncoder,
        blur_radius: f64,
    },
}

impl RecordInput<'_> {
    /// Returns `(global, regional)` embeddings.
    pub fn embeddings(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        match *self {
            RecordInput::Embeddings { global, regional } => Ok((global.to_vec(), regional.to_vec())),
            RecordInput::Raster {
                image,
                bbox,
                encoder,
                blur_radius,
            } => {
                let regional = encoder.encode_image(&crop(image, bbox)?)?;
                let global = encoder.encode_image(&background_blur(image, bbox, blur_radius)?)?;
                Ok((global, regional))
            }
        }
    }
}

/// Fuse, project, compare against the bank and reduce.
pub fn score_embeddings(
    global: &[f64],
    regional: &[f64],
    projection: &ProjectionLayer,
    bank: &ConceptBank,
    fusion: FusionConfig,
    method: ScoreMethod,
) -> Result<f64> {
    let fused = fuse(global, regional, fusion)?;
    let emb = projection.project(&fused)?;
    method.score(&similarities(&emb, bank)?)
}

pub fn score_record(
    input: RecordInput<'_>,
    projection: &ProjectionLayer,
    bank: &ConceptBank,
    fusion: FusionConfig,
    method: ScoreMethod,
) -> Result<f64> {
    let (global, regional) = input.embeddings()?;
    score_embeddings(&global, &regional, projection, bank, fusion, method)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ToyEncoderConfig;
    use crate::rng::SplitMix64;

    fn bank_from(vectors: Vec<Vec<f64>>) -> ConceptBank {
        let n = vectors.len();
        ConceptBank::from_parts(
            (0..n).map(|i| format!("c{i}")).collect(),
            (0..n).map(|i| format!("a photo of a c{i}")).collect(),
            vectors,
        )
        .unwrap()
    }

    fn unit(rng: &mut SplitMix64, d: usize) -> Vec<f64> {
        l2_normalize(&rng.normals(d)).unwrap()
    }

    #[test]
    fn fuse_examples() {
        let v = [0.6, 0.8];
        assert_eq!(fuse(&v, &v, FusionConfig::default()).unwrap(), v.to_vec());
        let r = [0.0, 1.0];
        assert_eq!(fuse(&[1.0, 0.0], &r, FusionConfig::new(1.0).unwrap()).unwrap(), r.to_vec());
        assert_eq!(
            fuse(&[1.0, 0.0], &[0.0, 1.0], FusionConfig::new(0.5).unwrap()).unwrap(),
            vec![0.5, 0.5]
        );
        assert!(fuse(&[1.0], &[1.0, 0.0], FusionConfig::default()).is_err());
        assert!(FusionConfig::new(1.5).is_err());
        assert!(FusionConfig::new(-0.1).is_err());
    }

    #[test]
    fn project_examples() {
        let v = [0.6, 0.8];
        assert_eq!(ProjectionLayer::identity(2).project(&v).unwrap(), v.to_vec());
        let double = ProjectionLayer::new(Matrix::identity(2).scale(2.0)).unwrap();
        let p = double.project(&v).unwrap();
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
        let rot = ProjectionLayer::new(Matrix::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(rot.project(&[1.0, 0.0]).unwrap(), vec![0.0, 1.0]);
        assert!(matches!(
            ProjectionLayer::new(Matrix::zeros(2, 2)).unwrap().project(&v),
            Err(Error::ZeroVector)
        ));
        assert!(ProjectionLayer::new(Matrix::zeros(2, 3)).is_err());
        assert!(matches!(
            ProjectionLayer::identity(3).project(&v),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn similarity_examples() {
        let bank = bank_from(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        assert_eq!(similarities(&[1.0, 0.0, 0.0], &bank).unwrap(), vec![1.0, 0.0, 0.0]);
        assert!(similarities(&[1.0, 0.0], &bank).is_err());

        let antipodal = bank_from(vec![vec![0.6, 0.8], vec![-0.6, -0.8]]);
        let mut rng = SplitMix64::new(8);
        for _ in 0..10 {
            let s = similarities(&unit(&mut rng, 2), &antipodal).unwrap();
            assert_eq!(s[0], -s[1]);
        }

        let vecs: Vec<_> = (0..5).map(|_| unit(&mut rng, 12)).collect();
        let bank = bank_from(vecs.clone());
        let e = unit(&mut rng, 12);
        let s = similarities(&e, &bank).unwrap();
        for (si, t) in s.iter().zip(&vecs) {
            let dot: f64 = e.iter().zip(t).map(|(a, b)| a * b).sum();
            assert!((si - dot).abs() < 1e-12);
        }
    }

    #[test]
    fn direct_sum_examples() {
        assert!((score_direct_sum(&[0.1, 0.2, 0.3]).unwrap() + 0.6).abs() < 1e-15);
        assert_eq!(score_direct_sum(&[0.0; 4]).unwrap(), 0.0);
        assert_eq!(score_direct_sum(&[1.0; 7]).unwrap(), -7.0);
        assert!(matches!(score_direct_sum(&[]), Err(Error::EmptySims)));
    }

    #[test]
    fn mcm_examples() {
        assert_eq!(score_mcm(&[0.3; 4], 0.7).unwrap(), -0.25);
        let e = std::f64::consts::E;
        let oracle = -e / (e + 1.0);
        let got = score_mcm(&[1.0, 0.0], 1.0).unwrap();
        assert!((got - oracle).abs() < 1e-15);
        assert!((got + 0.7310585786).abs() < 1e-10);
        assert!(matches!(score_mcm(&[1.0, 0.0], 0.0), Err(Error::NonPositiveTau(_))));
        assert!(matches!(score_mcm(&[1.0, 0.0], -1.0), Err(Error::NonPositiveTau(_))));
        assert!(score_mcm(&[1.0], 1.0).is_err());
        // Stable for tiny temperatures.
        assert_eq!(score_mcm(&[0.9, 0.1, -0.2], 1e-6).unwrap(), -1.0);
    }

    #[test]
    fn max_sim_examples() {
        assert_eq!(score_max_sim(&[0.2, 0.5, 0.3]).unwrap(), -0.5);
        assert_eq!(score_max_sim(&[-0.1, -0.4]).unwrap(), 0.1);
        assert_eq!(score_max_sim(&[0.3, 0.2, 0.5]).unwrap(), -0.5);
        assert!(matches!(score_max_sim(&[]), Err(Error::EmptySims)));
    }

    #[test]
    fn classify_boundary_is_inclusive() {
        assert_eq!(classify(-0.9, -0.5), Membership::Id);
        assert_eq!(classify(-0.5, -0.5), Membership::Id);
        assert_eq!(classify(0.2, -0.5), Membership::Ood);
    }

    #[test]
    fn method_parsing() {
        assert_eq!(ScoreMethod::parse("max-sim", 1.0).unwrap(), ScoreMethod::MaxSim);
        assert_eq!(ScoreMethod::parse("mcm", 2.0).unwrap(), ScoreMethod::Mcm { tau: 2.0 });
        assert!(ScoreMethod::parse("mcm", 0.0).is_err());
        assert!(ScoreMethod::parse("energy", 1.0).is_err());
        assert_eq!("ood".parse::<Membership>().unwrap(), Membership::Ood);
    }

    #[test]
    fn import_path_composition() {
        let bank = bank_from(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let e = [1.0, 0.0, 0.0];
        let input = RecordInput::Embeddings { global: &[0.0, 1.0, 0.0], regional: &e };
        let sigma = score_record(
            input,
            &ProjectionLayer::identity(3),
            &bank,
            FusionConfig::new(1.0).unwrap(),
            ScoreMethod::MaxSim,
        )
        .unwrap();
        assert_eq!(sigma, -1.0);
    }

    #[test]
    fn fusion_weight_changes_score() {
        // Regional view matches concept 0 weakly, global view matches concept 1 strongly.
        let bank = bank_from(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        let regional = l2_normalize(&[0.5, 0.0, 1.0]).unwrap();
        let global = l2_normalize(&[0.0, 1.0, 0.1]).unwrap();
        let p = ProjectionLayer::identity(3);
        let score = |lambda| {
            let input = RecordInput::Embeddings { global: &global, regional: &regional };
            score_record(input, &p, &bank, FusionConfig::new(lambda).unwrap(), ScoreMethod::MaxSim).unwrap()
        };
        let (s0, s1) = (score(0.0), score(1.0));
        assert!((s0 + global[1]).abs() < 1e-12);
        assert!((s1 + regional[0]).abs() < 1e-12);
        assert_ne!(s0, s1);
    }

    #[test]
    fn toy_path_is_deterministic() {
        let enc = ToyEncoder::new(ToyEncoderConfig { dim: 32, seed: 5 }).unwrap();
        let mut px = Vec::new();
        for i in 0..(12 * 10) {
            px.extend_from_slice(&[(i * 7) as u8, (i * 3) as u8, (255 - i) as u8]);
        }
        let img = Raster::new(12, 10, px).unwrap();
        let bank = crate::bank::build_bank(&["car", "person"], crate::bank::DEFAULT_TEMPLATE, |p| enc.encode_text(p)).unwrap();
        let run = || {
            let input = RecordInput::Raster {
                image: &img,
                bbox: img.full_box(),
                encoder: &enc,
                blur_radius: DEFAULT_BLUR_RADIUS,
            };
            score_record(input, &ProjectionLayer::identity(32), &bank, FusionConfig::default(), ScoreMethod::MaxSim).unwrap()
        };
        let a = run();
        assert!(a.is_finite());
        assert_eq!(a, run());
    }
}
