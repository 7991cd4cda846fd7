//! Embedding interchange format.
//!
//! A table of named float vectors is stored as two files:
//!
//! * a text **manifest**, one record per line: `id<TAB>offset<TAB>dim`;
//! * a binary **blob** beside it (same path, extension `.bin`) that opens with
//!   the 8-byte magic `RUNAEMB1` and holds little-endian IEEE-754 `f32`s.
//!   `offset` is the absolute byte position of a record's first float.
//!
//! Manifest lines starting with `#` are directives or comments. The only
//! directive understood is `#prompt<TAB>label<TAB>prompt text`, which carries
//! the text prompt of a concept record. Unknown `#` lines are ignored.
//!
//! Record ids follow a naming convention shared with external exporters:
//!
//! | id                        | content                                   |
//! |---------------------------|-------------------------------------------|
//! | `concept.<label>`         | text embedding of one in-distribution label |
//! | `<record_id>.global`      | embedding of the background-blurred frame |
//! | `<record_id>.regional`    | embedding of the cropped detection        |
//! | `projection`              | `dim * dim` projection weights, row-major |
//!
//! Values are widened to `f64` on load.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RUNAEMB1";
pub const CONCEPT_PREFIX: &str = "concept.";
pub const GLOBAL_SUFFIX: &str = ".global";
pub const REGIONAL_SUFFIX: &str = ".regional";
pub const PROJECTION_ID: &str = "projection";
const PROMPT_DIRECTIVE: &str = "#prompt";

pub fn concept_id(label: &str) -> String {
    format!("{CONCEPT_PREFIX}{label}")
}

pub fn global_id(record_id: &str) -> String {
    format!("{record_id}{GLOBAL_SUFFIX}")
}

pub fn regional_id(record_id: &str) -> String {
    format!("{record_id}{REGIONAL_SUFFIX}")
}

/// Companion blob path for a manifest.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Ordered table of named vectors plus concept prompts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    records: IndexMap<String, Vec<f64>>,
    prompts: IndexMap<String, String>,
}

impl EmbeddingTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let id = id.into();
        validate_id(&id).map_err(|m| Error::format(id.clone(), m))?;
        if values.is_empty() {
            return Err(Error::format(id, "empty vector"));
        }
        if values.iter().any(|v| !(*v as f32).is_finite()) {
            return Err(Error::format(id, "value not representable as a finite f32"));
        }
        if self.records.insert(id.clone(), values).is_some() {
            return Err(Error::format(id, "duplicate record id"));
        }
        Ok(())
    }

    pub fn set_prompt(&mut self, label: impl Into<String>, prompt: impl Into<String>) -> Result<()> {
        let (label, prompt) = (label.into(), prompt.into());
        validate_id(&label).map_err(|m| Error::format(label.clone(), m))?;
        if prompt.contains(['\n', '\r']) {
            return Err(Error::format(label, "prompt contains a line break"));
        }
        self.prompts.insert(label, prompt);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.records.get(id).map(Vec::as_slice)
    }

    pub fn require(&self, id: &str) -> Result<&[f64]> {
        self.get(id).ok_or_else(|| Error::MissingEmbedding(id.to_string()))
    }

    pub fn prompt(&self, label: &str) -> Option<&str> {
        self.prompts.get(label).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.records.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends every record and prompt of `other`.
    pub fn extend(&mut self, other: EmbeddingTable) -> Result<()> {
        for (id, v) in other.records {
            self.insert(id, v)?;
        }
        self.prompts.extend(other.prompts);
        Ok(())
    }

    /// Serializes to manifest text and blob bytes.
    pub fn encode(&self) -> (String, Vec<u8>) {
        let mut manifest = String::new();
        for (label, prompt) in &self.prompts {
            writeln!(manifest, "{PROMPT_DIRECTIVE}\t{label}\t{prompt}").unwrap();
        }
        let total: usize = self.records.values().map(Vec::len).sum();
        let mut blob = Vec::with_capacity(MAGIC.len() + 4 * total);
        blob.extend_from_slice(MAGIC);
        for (id, values) in &self.records {
            writeln!(manifest, "{id}\t{}\t{}", blob.len(), values.len()).unwrap();
            for v in values {
                blob.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        (manifest, blob)
    }

    /// Parses manifest text against its blob. `origin` names the manifest in
    /// error messages.
    pub fn decode(manifest: &str, blob: &[u8], origin: &str) -> Result<Self> {
        if blob.len() < MAGIC.len() || &blob[..MAGIC.len()] != MAGIC {
            return Err(Error::format(format!("{origin} (blob)"), "missing RUNAEMB1 magic"));
        }
        let mut table = Self::new();
        for (n, line) in manifest.lines().enumerate() {
            let at = || format!("{origin}:{}", n + 1);
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix(PROMPT_DIRECTIVE) {
                let mut parts = rest.strip_prefix('\t').unwrap_or("").splitn(2, '\t');
                match (parts.next(), parts.next()) {
                    (Some(label), Some(prompt)) if !label.is_empty() => {
                        table.prompts.insert(label.to_string(), prompt.to_string());
                    }
                    _ => return Err(Error::format(at(), "malformed #prompt directive")),
                }
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, offset, dim] = fields[..] else {
                return Err(Error::format(
                    at(),
                    format!("expected 3 tab-separated fields, found {}", fields.len()),
                ));
            };
            validate_id(id).map_err(|m| Error::format(at(), m))?;
            let offset: usize = offset
                .parse()
                .map_err(|_| Error::format(at(), format!("bad offset `{offset}`")))?;
            let dim: usize = dim
                .parse()
                .map_err(|_| Error::format(at(), format!("bad dim `{dim}`")))?;
            if dim == 0 {
                return Err(Error::format(at(), "dim must be positive"));
            }
            let end = dim
                .checked_mul(4)
                .and_then(|b| b.checked_add(offset))
                .filter(|&end| offset >= MAGIC.len() && end <= blob.len())
                .ok_or_else(|| {
                    Error::format(
                        at(),
                        format!("record `{id}` [{offset}, +{dim} floats) outside blob of {} bytes", blob.len()),
                    )
                })?;
            let mut values = Vec::with_capacity(dim);
            for chunk in blob[offset..end].chunks_exact(4) {
                let v = f32::from_le_bytes(chunk.try_into().unwrap());
                if !v.is_finite() {
                    return Err(Error::format(at(), format!("non-finite value in `{id}`")));
                }
                values.push(f64::from(v));
            }
            if table.records.insert(id.to_string(), values).is_some() {
                return Err(Error::format(at(), format!("duplicate record id `{id}`")));
            }
        }
        if table.records.is_empty() {
            return Err(Error::format(origin, "manifest has no records"));
        }
        Ok(table)
    }

    pub fn write(&self, manifest_path: &Path) -> Result<()> {
        let blob = blob_path(manifest_path);
        if blob == manifest_path {
            return Err(Error::format(
                manifest_path.display().to_string(),
                "manifest must not use the .bin extension",
            ));
        }
        let (text, bytes) = self.encode();
        fs::write(manifest_path, text).map_err(|e| Error::io(manifest_path, e))?;
        fs::write(&blob, bytes).map_err(|e| Error::io(&blob, e))?;
        Ok(())
    }

    pub fn read(manifest_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let blob = blob_path(manifest_path);
        let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
        Self::decode(&text, &bytes, &manifest_path.display().to_string())
    }
}

fn validate_id(id: &str) -> std::result::Result<(), &'static str> {
    if id.is_empty() {
        Err("empty record id")
    } else if id.starts_with('#') {
        Err("record id must not start with `#`")
    } else if id.contains(['\t', '\n', '\r']) {
        Err("record id contains a tab or line break")
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bit_exact_layout() {
        let mut t = EmbeddingTable::new();
        t.insert("a", vec![1.0, -2.0]).unwrap();
        t.insert("b", vec![0.5]).unwrap();
        let (manifest, blob) = t.encode();
        assert_eq!(manifest, "a\t8\t2\nb\t16\t1\n");
        let mut expected = b"RUNAEMB1".to_vec();
        for v in [1.0f32, -2.0, 0.5] {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(blob, expected);
    }

    #[test]
    fn decode_tolerates_foreign_offsets_and_comments() {
        // Records may be laid out in any order and share bytes.
        let mut blob = b"RUNAEMB1".to_vec();
        for v in [3.0f32, 4.0] {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        let manifest = "# exported by hand\nlate\t12\t1\nearly\t8\t2\n";
        let t = EmbeddingTable::decode(manifest, &blob, "m").unwrap();
        assert_eq!(t.get("late").unwrap(), &[4.0]);
        assert_eq!(t.get("early").unwrap(), &[3.0, 4.0]);
        assert_eq!(t.iter().map(|(k, _)| k).collect::<Vec<_>>(), ["late", "early"]);
    }

    #[test]
    fn decode_errors_name_the_line() {
        let blob = [b"RUNAEMB1".as_slice(), &1.0f32.to_le_bytes()].concat();
        let cases = [
            ("a\t8\n", "m:1"),
            ("a\t8\t1\na\t8\t1\n", "m:2"),
            ("a\t8\t2\n", "m:1"),
            ("a\t4\t1\n", "m:1"),
            ("a\tx\t1\n", "m:1"),
            ("ok\t8\t1\nb\t8\t0\n", "m:2"),
        ];
        for (manifest, loc) in cases {
            match EmbeddingTable::decode(manifest, &blob, "m") {
                Err(Error::Format { location: Some(l), .. }) => assert_eq!(l, loc, "{manifest:?}"),
                other => panic!("{manifest:?}: {other:?}"),
            }
        }
        assert!(EmbeddingTable::decode("", &blob, "m").is_err());
        assert!(EmbeddingTable::decode("a\t8\t1\n", b"RUNAEMB0\0\0\0\0", "m").is_err());
    }

    #[test]
    fn nan_rejected() {
        let blob = [b"RUNAEMB1".as_slice(), &f32::NAN.to_le_bytes()].concat();
        assert!(EmbeddingTable::decode("a\t8\t1\n", &blob, "m").is_err());
        let mut t = EmbeddingTable::new();
        assert!(t.insert("x", vec![f64::INFINITY]).is_err());
        assert!(t.insert("x", vec![1e300]).is_err());
    }

    #[test]
    fn prompts_round_trip() {
        let mut t = EmbeddingTable::new();
        t.insert(concept_id("dog"), vec![1.0]).unwrap();
        t.set_prompt("dog", "a photo of a dog").unwrap();
        let (m, b) = t.encode();
        let back = EmbeddingTable::decode(&m, &b, "m").unwrap();
        assert_eq!(back.prompt("dog"), Some("a photo of a dog"));
        assert_eq!(back, t);
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.tsv");
        let mut t = EmbeddingTable::new();
        t.insert("r.global", vec![0.25; 5]).unwrap();
        t.write(&path).unwrap();
        assert!(dir.path().join("emb.bin").exists());
        assert_eq!(EmbeddingTable::read(&path).unwrap(), t);
        assert!(t.write(&dir.path().join("bad.bin")).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_at_f32_precision(
            rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 1..20), 1..20)
        ) {
            let mut t = EmbeddingTable::new();
            for (i, r) in rows.iter().enumerate() {
                t.insert(format!("r{i}"), r.clone()).unwrap();
            }
            let (m, b) = t.encode();
            let back = EmbeddingTable::decode(&m, &b, "m").unwrap();
            prop_assert_eq!(back.len(), rows.len());
            for (i, r) in rows.iter().enumerate() {
                let got = back.get(&format!("r{i}")).unwrap();
                for (a, b) in r.iter().zip(got) {
                    prop_assert_eq!(*a as f32 as f64, *b);
                }
            }
        }
    }
}
