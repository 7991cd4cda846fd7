//! Encodes the committed toy frames and evaluates them, the same path as
//! `runa encode-toy` followed by `runa eval`.
//!
//! ```text
//! cargo run --example toy_pipeline
//! ```

use std::path::PathBuf;

use runa::bank::DEFAULT_TEMPLATE;
use runa::encoder::{ToyEncoder, ToyEncoderConfig};
use runa::harness::detections::load_detections;
use runa::harness::eval::{run_eval, EvalSettings};
use runa::harness::files::{encode_toy_table, load_eval_records, toy_bank};
use runa::harness::report::{format_report, format_table};
use runa::scoring::{ProjectionLayer, ScoreMethod, DEFAULT_BLUR_RADIUS};

fn main() -> runa::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy");
    let detections = load_detections(&fixtures.join("detections.csv"))?;
    let encoder = ToyEncoder::new(ToyEncoderConfig::default())?;
    let bank = toy_bank(&["apple", "leaf", "sky", "sun"], DEFAULT_TEMPLATE, &encoder)?;

    let table = encode_toy_table(&detections, &fixtures.join("images"), &encoder, &bank, DEFAULT_BLUR_RADIUS)?;
    let records = load_eval_records(&detections, &table, &bank)?;
    let projection = ProjectionLayer::identity(bank.dim());
    let reports = [ScoreMethod::DirectSum, ScoreMethod::mcm(1.0)?, ScoreMethod::MaxSim]
        .into_iter()
        .map(|m| run_eval(&records, &bank, &projection, &EvalSettings::new(m)))
        .collect::<runa::Result<Vec<_>>>()?;
    print!("{}", format_table(&reports));
    println!();
    print!("{}", format_report(&reports[2..]));
    Ok(())
}
