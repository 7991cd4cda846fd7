//! Joining detections with embedding tables, the toy image path, and writing
//! synthetic datasets to disk.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::bank::{build_bank, ConceptBank};
use crate::encoder::ToyEncoder;
use crate::error::{Error, Result};
use crate::interchange::{global_id, regional_id, EmbeddingTable, PROJECTION_ID};
use crate::linalg::Matrix;
use crate::raster::{read_ppm, Raster};
use crate::scoring::{similarities, Membership, ProjectionLayer, RecordInput};
use crate::train::LabeledShot;

use super::detections::{check_labels, record_ids, save_detections, DetectionRecord};
use super::eval::worker_pool;
use super::synth::SynthData;
use super::EvalRecord;

fn require_dim<'a>(table: &'a EmbeddingTable, id: &str, dim: usize) -> Result<&'a [f64]> {
    let v = table.require(id)?;
    if v.len() != dim {
        return Err(Error::format(id, format!("dim {} does not match the bank dim {dim}", v.len())));
    }
    Ok(v)
}

/// Resolves `<record_id>.global` and `<record_id>.regional` for every detection.
pub fn load_eval_records(
    detections: &[DetectionRecord],
    table: &EmbeddingTable,
    bank: &ConceptBank,
) -> Result<Vec<EvalRecord>> {
    check_labels(detections, bank)?;
    record_ids(detections)
        .into_iter()
        .zip(detections)
        .map(|(id, d)| {
            Ok(EvalRecord {
                global: require_dim(table, &global_id(&id), bank.dim())?.to_vec(),
                regional: require_dim(table, &regional_id(&id), bank.dim())?.to_vec(),
                truth: d.truth,
                truth_label: d.truth_label.as_deref().map(|l| bank.require_index(l)).transpose()?,
                id,
            })
        })
        .collect()
}

/// Training shots are ID detections with a `truth_label`; their regional
/// embeddings are used.
pub fn load_train_pool(
    detections: &[DetectionRecord],
    table: &EmbeddingTable,
    bank: &ConceptBank,
) -> Result<Vec<LabeledShot>> {
    check_labels(detections, bank)?;
    record_ids(detections)
        .into_iter()
        .zip(detections)
        .map(|(id, d)| {
            let label = match (d.truth, &d.truth_label) {
                (Membership::Id, Some(l)) => bank.require_index(l)?,
                _ => {
                    return Err(Error::format(
                        id.as_str(),
                        "training records must be ID and carry a truth_label",
                    ))
                }
            };
            Ok(LabeledShot {
                embedding: require_dim(table, &regional_id(&id), bank.dim())?.to_vec(),
                label,
                id,
            })
        })
        .collect()
}

/// Reads the `projection` record, or returns the identity when it is absent.
pub fn load_projection(table: &EmbeddingTable, dim: usize) -> Result<ProjectionLayer> {
    match table.get(PROJECTION_ID) {
        None => Ok(ProjectionLayer::identity(dim)),
        Some(w) if w.len() == dim * dim => ProjectionLayer::new(Matrix::new(dim, dim, w.to_vec())?),
        Some(w) => Err(Error::format(
            PROJECTION_ID,
            format!("expected {} weights for dim {dim}, found {}", dim * dim, w.len()),
        )),
    }
}

pub fn save_projection(projection: &ProjectionLayer, manifest: &Path) -> Result<()> {
    let mut t = EmbeddingTable::new();
    t.insert(PROJECTION_ID, projection.weights().as_slice().to_vec())?;
    t.write(manifest)
}

/// Image file for `image_id` under `dir`.
pub fn image_path(dir: &Path, image_id: &str) -> PathBuf {
    dir.join(format!("{image_id}.ppm"))
}

/// Encodes every detection from its image: the crop gives the regional
/// embedding, the background-blurred frame the global one.
pub fn encode_detections(
    detections: &[DetectionRecord],
    images_dir: &Path,
    encoder: &ToyEncoder,
    blur_radius: f64,
) -> Result<Vec<(String, Vec<f64>, Vec<f64>)>> {
    let mut images: HashMap<&str, Raster> = HashMap::new();
    for d in detections {
        if !images.contains_key(d.image_id.as_str()) {
            let path = image_path(images_dir, &d.image_id);
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let img = read_ppm(&bytes).map_err(|e| match e {
                Error::Format { message, .. } => Error::format(path.display().to_string(), message),
                other => other,
            })?;
            images.insert(d.image_id.as_str(), img);
        }
    }
    let ids = record_ids(detections);
    let pool = worker_pool()?;
    pool.install(|| {
        ids.into_par_iter()
            .zip(detections.par_iter())
            .map(|(id, d)| {
                let image = &images[d.image_id.as_str()];
                d.bbox.check_within(image.width(), image.height())?;
                let input = RecordInput::Raster {
                    image,
                    bbox: d.bbox,
                    encoder,
                    blur_radius,
                };
                let (g, r) = input.embeddings()?;
                Ok((id, g, r))
            })
            .collect()
    })
}

/// Bank built from the toy text encoder.
pub fn toy_bank(labels: &[impl AsRef<str>], template: &str, encoder: &ToyEncoder) -> Result<ConceptBank> {
    build_bank(labels, template, |p| encoder.encode_text(p))
}

/// Encodes detections and a bank into one table.
pub fn encode_toy_table(
    detections: &[DetectionRecord],
    images_dir: &Path,
    encoder: &ToyEncoder,
    bank: &ConceptBank,
    blur_radius: f64,
) -> Result<EmbeddingTable> {
    check_labels(detections, bank)?;
    let mut table = EmbeddingTable::new();
    bank.write_into(&mut table)?;
    for (id, g, r) in encode_detections(detections, images_dir, encoder, blur_radius)? {
        table.insert(global_id(&id), g)?;
        table.insert(regional_id(&id), r)?;
    }
    Ok(table)
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

/// Paths written by [`write_synthetic`].
#[derive(Debug, Clone)]
pub struct SynthFiles {
    pub bank: PathBuf,
    pub eval_embeddings: PathBuf,
    pub eval_detections: PathBuf,
    pub train_embeddings: PathBuf,
    pub train_detections: PathBuf,
}

impl SynthFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            bank: dir.join("bank.tsv"),
            eval_embeddings: dir.join("eval.tsv"),
            eval_detections: dir.join("eval.csv"),
            train_embeddings: dir.join("train.tsv"),
            train_detections: dir.join("train.csv"),
        }
    }
}

/// Writes a synthetic dataset as interchange files. Each sample becomes a
/// one-detection image named after the sample, so its record id is
/// `<sample>#0`. Predicted labels are the zero-shot argmax.
pub fn write_synthetic(data: &SynthData, dir: &Path) -> Result<SynthFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = SynthFiles::in_dir(dir);
    crate::bank::save_bank(&data.bank, &files.bank)?;

    let label = |i: usize| data.bank.labels()[i].clone();
    let detection = |id: &str, regional: &[f64], truth, truth_label: Option<usize>| -> Result<DetectionRecord> {
        Ok(DetectionRecord {
            image_id: id.to_string(),
            bbox: crate::raster::BBox::new(0, 0, 1, 1),
            pred_label: label(argmax(&similarities(regional, &data.bank)?)),
            truth,
            truth_label: truth_label.map(label),
        })
    };

    let mut table = EmbeddingTable::new();
    let mut dets = Vec::with_capacity(data.eval.len());
    for r in &data.eval {
        dets.push(detection(&r.id, &r.regional, r.truth, r.truth_label)?);
        let rid = format!("{}#0", r.id);
        table.insert(global_id(&rid), r.global.clone())?;
        table.insert(regional_id(&rid), r.regional.clone())?;
    }
    table.write(&files.eval_embeddings)?;
    save_detections(&dets, &files.eval_detections)?;

    let mut table = EmbeddingTable::new();
    let mut dets = Vec::with_capacity(data.train_pool.len());
    for s in &data.train_pool {
        dets.push(detection(&s.id, &s.embedding, Membership::Id, Some(s.label))?);
        table.insert(regional_id(&format!("{}#0", s.id)), s.embedding.clone())?;
    }
    table.write(&files.train_embeddings)?;
    save_detections(&dets, &files.train_detections)?;
    Ok(files)
}
