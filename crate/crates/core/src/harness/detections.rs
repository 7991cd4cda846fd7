//! Detections file: one comma-separated record per line after a header.
//!
//! ```text
//! image_id,x1,y1,x2,y2,pred_label,truth,truth_label
//! frame_0001,12,40,96,120,car,ID,car
//! frame_0001,100,8,140,60,person,OOD,
//! ```
//!
//! `truth` is `ID` or `OOD`; the `truth_label` column is optional. Boxes are
//! half-open pixel ranges. A record is addressed as `<image_id>#<k>` where
//! `k` counts that image's detections in file order, starting at zero.

use std::collections::HashMap;
use std::path::Path;

use crate::bank::ConceptBank;
use crate::error::{Error, Result};
use crate::raster::BBox;
use crate::scoring::Membership;

const HEADER: [&str; 7] = ["image_id", "x1", "y1", "x2", "y2", "pred_label", "truth"];
const TRUTH_LABEL: &str = "truth_label";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectionRecord {
    pub image_id: String,
    pub bbox: BBox,
    pub pred_label: String,
    pub truth: Membership,
    pub truth_label: Option<String>,
}

/// Stable ids `<image_id>#<k>` for each record, in input order.
pub fn record_ids(records: &[DetectionRecord]) -> Vec<String> {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    records
        .iter()
        .map(|r| {
            let k = seen.entry(r.image_id.as_str()).or_insert(0);
            let id = format!("{}#{}", r.image_id, k);
            *k += 1;
            id
        })
        .collect()
}

pub fn parse_detections(text: &str, origin: &str) -> Result<Vec<DetectionRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::format(format!("{origin}:1"), e.to_string()))?
        .clone();
    let names: Vec<&str> = header.iter().collect();
    let has_truth_label = match names.as_slice() {
        [] | [""] => return Err(Error::format(format!("{origin}:1"), "missing header line")),
        n if n == HEADER => false,
        n if n.len() == 8 && n[..7] == HEADER && n[7] == TRUTH_LABEL => true,
        _ => {
            return Err(Error::format(
                format!("{origin}:1"),
                format!("expected header `{},{TRUTH_LABEL}`, found `{}`", HEADER.join(","), names.join(",")),
            ))
        }
    };

    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::format(format!("{origin}:{line}"), e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let at = || format!("{origin}:{line}");
        let width = if has_truth_label { 7..=8 } else { 7..=7 };
        if !width.contains(&row.len()) {
            return Err(Error::format(at(), format!("expected {} fields, found {}", width.end(), row.len())));
        }
        let coord = |i: usize| -> Result<u32> {
            row[i]
                .parse()
                .map_err(|_| Error::format(at(), format!("bad {} `{}`", HEADER[i], &row[i])))
        };
        let bbox = BBox::new(coord(1)?, coord(2)?, coord(3)?, coord(4)?);
        if bbox.x1 >= bbox.x2 || bbox.y1 >= bbox.y2 {
            return Err(Error::format(at(), "empty or inverted box"));
        }
        if row[0].is_empty() || row[0].contains('#') {
            return Err(Error::format(at(), "image_id must be non-empty and free of `#`"));
        }
        if row[5].is_empty() {
            return Err(Error::format(at(), "empty pred_label"));
        }
        let truth = row[6].parse::<Membership>().map_err(|m| Error::format(at(), m))?;
        let truth_label = row.get(7).filter(|s| !s.is_empty()).map(str::to_string);
        out.push(DetectionRecord {
            image_id: row[0].to_string(),
            bbox,
            pred_label: row[5].to_string(),
            truth,
            truth_label,
        });
    }
    Ok(out)
}

pub fn format_detections(records: &[DetectionRecord]) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header: Vec<&str> = HEADER.to_vec();
    header.push(TRUTH_LABEL);
    w.write_record(&header).expect("in-memory write");
    for r in records {
        let b = r.bbox;
        let truth = r.truth.to_string();
        let (x1, y1, x2, y2) = (b.x1.to_string(), b.y1.to_string(), b.x2.to_string(), b.y2.to_string());
        w.write_record([
            r.image_id.as_str(),
            &x1,
            &y1,
            &x2,
            &y2,
            &r.pred_label,
            &truth,
            r.truth_label.as_deref().unwrap_or(""),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 fields")
}

pub fn load_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text, &path.display().to_string())
}

pub fn save_detections(records: &[DetectionRecord], path: &Path) -> Result<()> {
    std::fs::write(path, format_detections(records)).map_err(|e| Error::io(path, e))
}

/// Every predicted (and given truth) label must name a bank concept.
pub fn check_labels(records: &[DetectionRecord], bank: &ConceptBank) -> Result<()> {
    for r in records {
        bank.require_index(&r.pred_label)?;
        if let (Membership::Id, Some(l)) = (r.truth, &r.truth_label) {
            bank.require_index(l)?;
        }
    }
    Ok(())
}
