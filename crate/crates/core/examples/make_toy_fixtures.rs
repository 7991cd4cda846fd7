//! Regenerates the toy image set used by the end-to-end tests: 16 PPM frames
//! with colored objects on textured backgrounds, plus 40 detections.
//!
//! ```text
//! cargo run --example make_toy_fixtures -- [out_dir]
//! ```

use std::path::PathBuf;

use runa::harness::detections::{save_detections, DetectionRecord};
use runa::raster::{write_ppm, BBox, Raster};
use runa::rng::SplitMix64;
use runa::scoring::Membership;

pub const LABELS: [&str; 4] = ["apple", "leaf", "sky", "sun"];
const ID_COLORS: [[u8; 3]; 4] = [[210, 30, 40], [40, 170, 60], [60, 110, 220], [240, 210, 40]];
const OOD_COLORS: [[u8; 3]; 3] = [[150, 60, 200], [30, 200, 200], [120, 120, 120]];

fn main() -> runa::Result<()> {
    let out = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy"));
    let images = out.join("images");
    std::fs::create_dir_all(&images).expect("create fixture dir");

    let mut rng = SplitMix64::new(2024);
    let mut detections = Vec::new();
    for frame in 0..16u32 {
        let (w, h) = (64, 48);
        let base = [
            60 + rng.below(60) as u8,
            60 + rng.below(60) as u8,
            60 + rng.below(60) as u8,
        ];
        let mut img = Raster::filled(w, h, base)?;
        for y in 0..h {
            for x in 0..w {
                let n = rng.below(24) as u8;
                let [r, g, b] = img.pixel(x, y);
                img.set_pixel(x, y, [r.saturating_add(n), g.saturating_add(n), b.saturating_add(n)]);
            }
        }
        // Frames 0..8 hold three objects, the rest two: 8*3 + 8*2 = 40.
        let count = if frame < 8 { 3 } else { 2 };
        for slot in 0..count {
            let x1 = slot * 21 + rng.below(4) as u32;
            let y1 = rng.below(20) as u32;
            let bw = 10 + rng.below(8) as u32;
            let bh = 10 + rng.below(16) as u32;
            let bbox = BBox::new(x1, y1, (x1 + bw).min(w), (y1 + bh).min(h));
            let ood = (frame + slot) % 3 == 2;
            let (color, truth, truth_label) = if ood {
                (OOD_COLORS[rng.below(3) as usize], Membership::Ood, None)
            } else {
                let c = rng.below(4) as usize;
                (ID_COLORS[c], Membership::Id, Some(LABELS[c].to_string()))
            };
            for y in bbox.y1..bbox.y2 {
                for x in bbox.x1..bbox.x2 {
                    img.set_pixel(x, y, color);
                }
            }
            detections.push(DetectionRecord {
                image_id: format!("frame_{frame:02}"),
                bbox,
                pred_label: LABELS[rng.below(4) as usize].to_string(),
                truth,
                truth_label,
            });
        }
        let path = images.join(format!("frame_{frame:02}.ppm"));
        std::fs::write(&path, write_ppm(&img)).expect("write frame");
    }
    save_detections(&detections, &out.join("detections.csv"))?;
    println!("wrote 16 frames and {} detections to {}", detections.len(), out.display());
    Ok(())
}
