//! Scores the objects of one frame against a small concept bank with all
//! three reductions, then thresholds them.
//!
//! The toy text encoder carries no meaning, so this bank is built from
//! rendered color swatches instead: `build_bank` accepts any prompt encoder.
//!
//! ```text
//! cargo run --example score_regions
//! ```

use runa::bank::{build_bank, DEFAULT_TEMPLATE};
use runa::encoder::{ToyEncoder, ToyEncoderConfig};
use runa::raster::{BBox, Raster};
use runa::scoring::{
    classify, score_record, similarities, FusionConfig, ProjectionLayer, RecordInput, ScoreMethod,
    DEFAULT_BLUR_RADIUS,
};

fn main() -> runa::Result<()> {
    let encoder = ToyEncoder::new(ToyEncoderConfig { dim: 128, seed: 7 })?;
    let swatch = |prompt: &str| -> runa::Result<Vec<f64>> {
        let rgb = match prompt.rsplit(' ').next() {
            Some("red") => [220, 30, 30],
            Some("green") => [30, 200, 40],
            _ => [30, 40, 220],
        };
        encoder.encode_image(&Raster::filled(16, 16, rgb)?)
    };
    let bank = build_bank(&["red", "green", "blue"], DEFAULT_TEMPLATE, swatch)?;

    let mut frame = Raster::filled(96, 64, [90, 90, 80])?;
    let objects = [
        ("red", BBox::new(4, 8, 28, 40), [220, 30, 30]),
        ("blue", BBox::new(36, 20, 60, 56), [30, 40, 220]),
        ("white", BBox::new(68, 4, 92, 30), [245, 245, 245]),
    ];
    for (_, b, rgb) in &objects {
        for y in b.y1..b.y2 {
            for x in b.x1..b.x2 {
                frame.set_pixel(x, y, *rgb);
            }
        }
    }

    let projection = ProjectionLayer::identity(encoder.dim());
    // All objects share one frame, so only the crop path tells them apart.
    let fusion = FusionConfig::new(1.0)?;
    let methods = [ScoreMethod::DirectSum, ScoreMethod::mcm(1.0)?, ScoreMethod::MaxSim];
    println!("{:<6} {:>12} {:>12} {:>12}", "object", "direct-sum", "mcm", "max-sim");
    for (name, bbox, _) in &objects {
        let input = RecordInput::Raster {
            image: &frame,
            bbox: *bbox,
            encoder: &encoder,
            blur_radius: DEFAULT_BLUR_RADIUS,
        };
        let sigmas: Vec<f64> = methods
            .iter()
            .map(|&m| score_record(input, &projection, &bank, fusion, m))
            .collect::<runa::Result<_>>()?;
        println!("{:<6} {:>12.5} {:>12.5} {:>12.5}", name, sigmas[0], sigmas[1], sigmas[2]);

        let (_, regional) = input.embeddings()?;
        let sims = similarities(&regional, &bank)?;
        let best = (0..sims.len()).fold(0, |b, i| if sims[i] > sims[b] { i } else { b });
        let gamma = -0.99;
        println!(
            "       closest concept `{}`; max-sim at gamma={gamma}: {}",
            bank.labels()[best],
            classify(sigmas[2], gamma)
        );
    }
    Ok(())
}
