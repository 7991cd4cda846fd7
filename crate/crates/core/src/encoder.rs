//! Deterministic stand-ins for the image and text encoders.
//!
//! These carry no visual semantics. They exist so the whole pipeline runs on
//! real pixels without a pretrained model: identical inputs always map to
//! identical unit vectors, and different inputs map to different ones.

use crate::error::{Error, Result};
use crate::linalg::{l2_normalize, matvec, Matrix};
use crate::raster::Raster;
use crate::rng::{fnv1a64, SplitMix64};

pub const HISTOGRAM_BINS: usize = 64;
pub const GRID: usize = 8;
pub const FEATURE_LEN: usize = HISTOGRAM_BINS + GRID * GRID;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyEncoderConfig {
    pub dim: usize,
    pub seed: u64,
}

impl Default for ToyEncoderConfig {
    fn default() -> Self {
        Self { dim: 256, seed: 0 }
    }
}

/// Image and text encoders sharing one configuration.
#[derive(Debug, Clone)]
pub struct ToyEncoder {
    cfg: ToyEncoderConfig,
    mixing: Matrix,
}

impl ToyEncoder {
    pub fn new(cfg: ToyEncoderConfig) -> Result<Self> {
        if cfg.dim < 8 {
            return Err(Error::Shape(format!("toy encoder dim {} < 8", cfg.dim)));
        }
        let mut rng = SplitMix64::new(cfg.seed);
        let mixing = Matrix::new(cfg.dim, FEATURE_LEN, rng.normals(cfg.dim * FEATURE_LEN))?;
        Ok(Self { cfg, mixing })
    }

    pub fn config(&self) -> ToyEncoderConfig {
        self.cfg
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    pub fn encode_image(&self, img: &Raster) -> Result<Vec<f64>> {
        let feature = image_features(img)?;
        l2_normalize(&matvec(&self.mixing, &feature)?)
    }

    pub fn encode_text(&self, prompt: &str) -> Result<Vec<f64>> {
        encode_text(self.cfg, prompt)
    }
}

/// Text embedding seeded by FNV-1a over the config seed (8 bytes, little
/// endian) followed by the prompt's UTF-8 bytes.
pub fn encode_text(cfg: ToyEncoderConfig, prompt: &str) -> Result<Vec<f64>> {
    if prompt.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    let seed = fnv1a64(cfg.seed.to_le_bytes().into_iter().chain(prompt.bytes()));
    let mut rng = SplitMix64::new(seed);
    l2_normalize(&rng.normals(cfg.dim))
}

/// 64-bin RGB histogram (2 bits per channel, summing to 1) followed by an
/// 8x8 grid of mean luminance in `[0, 1]`.
pub fn image_features(img: &Raster) -> Result<Vec<f64>> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::EmptyRaster);
    }
    let mut feature = vec![0.0; FEATURE_LEN];
    let px = img.pixels();
    for rgb in px.chunks_exact(3) {
        let bin = usize::from(rgb[0] >> 6) * 16 + usize::from(rgb[1] >> 6) * 4 + usize::from(rgb[2] >> 6);
        feature[bin] += 1.0;
    }
    let n = (w * h) as f64;
    for v in &mut feature[..HISTOGRAM_BINS] {
        *v /= n;
    }

    // Cell c spans [floor(c*n/8), floor((c+1)*n/8)), widened to one pixel
    // when the image is narrower than the grid.
    let span = |c: usize, n: usize| {
        let lo = (c * n / GRID).min(n - 1);
        let hi = ((c + 1) * n / GRID).max(lo + 1).min(n);
        lo..hi
    };
    for gy in 0..GRID {
        for gx in 0..GRID {
            let (ys, xs) = (span(gy, h), span(gx, w));
            let mut acc = 0.0;
            let mut count = 0usize;
            for y in ys {
                for x in xs.clone() {
                    let o = (y * w + x) * 3;
                    acc += luminance(px[o], px[o + 1], px[o + 2]);
                    count += 1;
                }
            }
            feature[HISTOGRAM_BINS + gy * GRID + gx] = acc / count as f64;
        }
    }
    Ok(feature)
}

fn luminance(r: u8, g: u8, b: u8) -> f64 {
    (0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)) / 255.0
}
