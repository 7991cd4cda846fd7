//! The in-distribution concept bank: one text embedding per known label.
//!
//! Concept order is significant. Index `i` in a bank is the index of the
//! `i`-th similarity everywhere downstream, and it is preserved through the
//! interchange format.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::interchange::{concept_id, EmbeddingTable, CONCEPT_PREFIX};
use crate::linalg::{l2_normalize, norm};

pub const DEFAULT_TEMPLATE: &str = "a photo of a {label}";
const PLACEHOLDER: &str = "{label}";

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptBank {
    labels: Vec<String>,
    prompts: Vec<String>,
    vectors: Vec<Vec<f64>>,
    dim: usize,
}

/// Substitutes `label` into a template holding exactly one `{label}`.
pub fn render_prompt(template: &str, label: &str) -> Result<String> {
    if template.matches(PLACEHOLDER).count() != 1 {
        return Err(Error::BadTemplate(template.to_string()));
    }
    Ok(template.replacen(PLACEHOLDER, label, 1))
}

impl ConceptBank {
    /// Builds a bank from parts, normalizing every vector.
    pub fn from_parts(labels: Vec<String>, prompts: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::TooFewConcepts { need: 1, got: 0 });
        }
        if prompts.len() != labels.len() || vectors.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} labels, {} prompts, {} vectors",
                labels.len(),
                prompts.len(),
                vectors.len()
            )));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::DuplicateLabel(l.clone()));
            }
        }
        let dim = vectors[0].len();
        let vectors = vectors
            .iter()
            .map(|v| {
                if v.len() != dim {
                    return Err(Error::DimMismatch { expected: dim, got: v.len() });
                }
                l2_normalize(v)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            labels,
            prompts,
            vectors,
            dim,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn require_index(&self, label: &str) -> Result<usize> {
        self.index_of(label).ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    /// Adds this bank's `concept.<label>` records and prompts to `table`.
    pub fn write_into(&self, table: &mut EmbeddingTable) -> Result<()> {
        for ((label, prompt), v) in self.labels.iter().zip(&self.prompts).zip(&self.vectors) {
            table.insert(concept_id(label), v.clone())?;
            table.set_prompt(label.as_str(), prompt.as_str())?;
        }
        Ok(())
    }

    /// Reads every `concept.<label>` record of `table`, in table order.
    /// Labels without a `#prompt` directive get the default template.
    pub fn from_table(table: &EmbeddingTable) -> Result<Self> {
        let mut labels = Vec::new();
        let mut prompts = Vec::new();
        let mut vectors: Vec<Vec<f64>> = Vec::new();
        for (id, v) in table.iter() {
            let Some(label) = id.strip_prefix(CONCEPT_PREFIX) else {
                continue;
            };
            if let Some(first) = vectors.first() {
                if first.len() != v.len() {
                    return Err(Error::DimMismatch {
                        expected: first.len(),
                        got: v.len(),
                    });
                }
            }
            if norm(v) == 0.0 {
                return Err(Error::format(id, "zero concept vector"));
            }
            let prompt = match table.prompt(label) {
                Some(p) => p.to_string(),
                None => render_prompt(DEFAULT_TEMPLATE, label)?,
            };
            labels.push(label.to_string());
            prompts.push(prompt);
            vectors.push(v.to_vec());
        }
        if labels.is_empty() {
            return Err(Error::Format {
                location: None,
                message: "no concept records found".into(),
            });
        }
        Self::from_parts(labels, prompts, vectors)
    }
}

/// Templates each label, encodes the prompt and normalizes the result.
pub fn build_bank<F>(labels: &[impl AsRef<str>], template: &str, mut text_encoder: F) -> Result<ConceptBank>
where
    F: FnMut(&str) -> Result<Vec<f64>>,
{
    render_prompt(template, "")?;
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l.as_ref()) {
            return Err(Error::DuplicateLabel(l.as_ref().to_string()));
        }
    }
    let mut prompts = Vec::with_capacity(labels.len());
    let mut vectors = Vec::with_capacity(labels.len());
    for l in labels {
        let p = render_prompt(template, l.as_ref())?;
        vectors.push(text_encoder(&p)?);
        prompts.push(p);
    }
    ConceptBank::from_parts(
        labels.iter().map(|l| l.as_ref().to_string()).collect(),
        prompts,
        vectors,
    )
}

pub fn save_bank(bank: &ConceptBank, manifest_path: &Path) -> Result<()> {
    let mut table = EmbeddingTable::new();
    bank.write_into(&mut table)?;
    table.write(manifest_path)
}

pub fn load_bank(manifest_path: &Path) -> Result<ConceptBank> {
    ConceptBank::from_table(&EmbeddingTable::read(manifest_path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{encode_text, ToyEncoderConfig};

    fn toy(p: &str) -> Result<Vec<f64>> {
        encode_text(ToyEncoderConfig { dim: 16, seed: 0 }, p)
    }

    #[test]
    fn default_prompt() {
        let bank = build_bank(&["dog"], DEFAULT_TEMPLATE, toy).unwrap();
        assert_eq!(bank.prompts(), ["a photo of a dog"]);
    }

    #[test]
    fn order_and_normalization() {
        let bank = build_bank(&["car", "bus", "truck"], DEFAULT_TEMPLATE, |p| {
            Ok(vec![p.len() as f64, 1.0, 2.0])
        })
        .unwrap();
        assert_eq!(bank.labels(), ["car", "bus", "truck"]);
        assert_eq!(bank.index_of("bus"), Some(1));
        for v in bank.vectors() {
            assert!((norm(v) - 1.0).abs() < 1e-9);
        }
        assert!(matches!(bank.require_index("cat"), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn rejects_duplicates_and_bad_templates() {
        assert!(matches!(
            build_bank(&["car", "car"], DEFAULT_TEMPLATE, toy),
            Err(Error::DuplicateLabel(l)) if l == "car"
        ));
        assert!(matches!(
            build_bank(&["a"], "photo: {label} of {label}", toy),
            Err(Error::BadTemplate(_))
        ));
        assert!(matches!(build_bank(&["a"], "no placeholder", toy), Err(Error::BadTemplate(_))));
        let empty: [&str; 0] = [];
        assert!(build_bank(&empty, DEFAULT_TEMPLATE, toy).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.tsv");
        let bank = build_bank(&["car", "person", "rider"], "a blurry photo of a {label}", toy).unwrap();
        save_bank(&bank, &path).unwrap();
        let back = load_bank(&path).unwrap();
        assert_eq!(back.labels(), bank.labels());
        assert_eq!(back.prompts(), bank.prompts());
        for (a, b) in back.vectors().iter().zip(bank.vectors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-6);
            }
            assert!((norm(a) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn mixed_dims_rejected() {
        let mut t = EmbeddingTable::new();
        t.insert(concept_id("a"), vec![1.0; 256]).unwrap();
        t.insert(concept_id("b"), vec![1.0; 512]).unwrap();
        assert!(matches!(ConceptBank::from_table(&t), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn empty_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.tsv");
        std::fs::write(&path, "").unwrap();
        std::fs::write(dir.path().join("bank.bin"), b"RUNAEMB1").unwrap();
        assert!(matches!(load_bank(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn table_without_concepts_rejected() {
        let mut t = EmbeddingTable::new();
        t.insert("r0.global", vec![1.0]).unwrap();
        assert!(matches!(ConceptBank::from_table(&t), Err(Error::Format { .. })));
    }

    #[test]
    fn missing_prompt_falls_back_to_default_template() {
        let mut t = EmbeddingTable::new();
        t.insert(concept_id("bike"), vec![0.0, 2.0]).unwrap();
        let bank = ConceptBank::from_table(&t).unwrap();
        assert_eq!(bank.prompts(), ["a photo of a bike"]);
        assert_eq!(bank.vector(0), &[0.0, 1.0]);
    }
}
