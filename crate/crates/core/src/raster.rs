//! RGB rasters, binary PPM I/O, cropping and Gaussian blur.
//!
//! The two image views fed to the encoders come from here: the regional view
//! is a [`crop`] of the detection box, the global view is the full frame with
//! everything outside the box blurred ([`background_blur`]).

use std::io::Write;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Raster {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyRaster);
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(Error::TruncatedPixelData {
                expected,
                got: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        let n = width as usize * height as usize;
        Self::new(width, height, rgb.repeat(n))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn full_box(&self) -> BBox {
        BBox {
            x1: 0,
            y1: 0,
            x2: self.width,
            y2: self.height,
        }
    }
}

/// Half-open pixel box `[x1, x2) x [y1, y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BBox {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl BBox {
    pub fn new(x1: u32, y1: u32, x2: u32, y2: u32) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> u32 {
        self.x2.saturating_sub(self.x1)
    }

    pub fn height(&self) -> u32 {
        self.y2.saturating_sub(self.y1)
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        (self.x1..self.x2).contains(&x) && (self.y1..self.y2).contains(&y)
    }

    pub fn check_within(&self, width: u32, height: u32) -> Result<()> {
        if self.x1 < self.x2 && self.y1 < self.y2 && self.x2 <= width && self.y2 <= height {
            Ok(())
        } else {
            Err(Error::BoxOutOfBounds {
                x1: self.x1,
                y1: self.y1,
                x2: self.x2,
                y2: self.y2,
                width,
                height,
            })
        }
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedHeader(format!("bad {what}")))
    }
}

/// Decodes a binary (`P6`) PPM with maxval 255.
pub fn read_ppm(bytes: &[u8]) -> Result<Raster> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(Error::MalformedHeader(format!(
            "expected magic P6, found `{magic}`"
        )));
    }
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::MalformedHeader(format!("zero size {width}x{height}")));
    }
    if maxval != 255 {
        return Err(Error::MalformedHeader(format!("maxval {maxval}, only 255 supported")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(Error::MalformedHeader("missing separator after maxval".into())),
    }
    let expected = width as usize * height as usize * 3;
    let payload = &bytes[cur.pos..];
    if payload.len() < expected {
        return Err(Error::TruncatedPixelData {
            expected,
            got: payload.len(),
        });
    }
    Raster::new(width, height, payload[..expected].to_vec())
}

pub fn write_ppm(img: &Raster) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.pixels.len() + 20);
    write!(out, "P6\n{} {}\n255\n", img.width, img.height).expect("write to Vec");
    out.extend_from_slice(&img.pixels);
    out
}

pub fn crop(img: &Raster, bbox: BBox) -> Result<Raster> {
    bbox.check_within(img.width, img.height)?;
    let row_bytes = bbox.width() as usize * 3;
    let mut pixels = Vec::with_capacity(row_bytes * bbox.height() as usize);
    for y in bbox.y1..bbox.y2 {
        let start = img.offset(bbox.x1, y);
        pixels.extend_from_slice(&img.pixels[start..start + row_bytes]);
    }
    Raster::new(bbox.width(), bbox.height(), pixels)
}

/// Normalized 1-D Gaussian taps for standard deviation `sigma`, truncated at
/// `ceil(3 sigma)` on each side. Index `r` is the centre.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::NonPositiveRadius(sigma));
    }
    let r = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-r..=r)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Separable Gaussian blur with `sigma = radius`, clamp-to-edge borders.
///
/// Both passes run in `f64`; the result is rounded to the nearest byte once.
pub fn gaussian_blur(img: &Raster, radius: f64) -> Result<Raster> {
    let kernel = gaussian_kernel(radius)?;
    let r = (kernel.len() / 2) as i64;
    let (w, h) = (img.width as i64, img.height as i64);
    let clamp = |v: i64, hi: i64| v.clamp(0, hi - 1) as usize;

    let mut horiz = vec![0.0f64; img.pixels.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (k, wk) in kernel.iter().enumerate() {
                let sx = clamp(x + k as i64 - r, w);
                let o = (y as usize * w as usize + sx) * 3;
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += wk * f64::from(img.pixels[o + c]);
                }
            }
            let o = (y as usize * w as usize + x as usize) * 3;
            horiz[o..o + 3].copy_from_slice(&acc);
        }
    }

    let mut pixels = vec![0u8; img.pixels.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (k, wk) in kernel.iter().enumerate() {
                let sy = clamp(y + k as i64 - r, h);
                let o = (sy * w as usize + x as usize) * 3;
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += wk * horiz[o + c];
                }
            }
            let o = (y as usize * w as usize + x as usize) * 3;
            for c in 0..3 {
                pixels[o + c] = acc[c].round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Raster::new(img.width, img.height, pixels)
}

/// Blurs everything outside `bbox`; pixels inside the box keep their
/// original values.
pub fn background_blur(img: &Raster, bbox: BBox, radius: f64) -> Result<Raster> {
    bbox.check_within(img.width, img.height)?;
    let mut out = gaussian_blur(img, radius)?;
    let row_bytes = bbox.width() as usize * 3;
    for y in bbox.y1..bbox.y2 {
        let o = img.offset(bbox.x1, y);
        out.pixels[o..o + row_bytes].copy_from_slice(&img.pixels[o..o + row_bytes]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn random_raster(w: u32, h: u32, seed: u64) -> Raster {
        let mut rng = SplitMix64::new(seed);
        let px = (0..w * h * 3).map(|_| rng.next_u64() as u8).collect();
        Raster::new(w, h, px).unwrap()
    }

    /// Direct 2-D convolution with the outer-product kernel, clamp-to-edge.
    fn blur_oracle(img: &Raster, sigma: f64) -> Raster {
        let k = gaussian_kernel(sigma).unwrap();
        let r = (k.len() / 2) as i64;
        let (w, h) = (img.width() as i64, img.height() as i64);
        let mut out = img.clone();
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0; 3];
                for (j, wy) in k.iter().enumerate() {
                    for (i, wx) in k.iter().enumerate() {
                        let sx = (x + i as i64 - r).clamp(0, w - 1) as u32;
                        let sy = (y + j as i64 - r).clamp(0, h - 1) as u32;
                        let p = img.pixel(sx, sy);
                        for c in 0..3 {
                            acc[c] += wx * wy * f64::from(p[c]);
                        }
                    }
                }
                let px = acc.map(|a| a.round().clamp(0.0, 255.0) as u8);
                out.set_pixel(x as u32, y as u32, px);
            }
        }
        out
    }

    #[test]
    fn ppm_round_trip_2x2() {
        let img = Raster::new(2, 2, (0..12).collect()).unwrap();
        assert_eq!(read_ppm(&write_ppm(&img)).unwrap(), img);
    }

    #[test]
    fn ppm_header_with_comments() {
        let mut bytes = b"P6\n# made by hand\n1 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3]);
        assert_eq!(read_ppm(&bytes).unwrap().pixel(0, 0), [1, 2, 3]);
    }

    #[test]
    fn ppm_rejects_ascii_variant() {
        let bytes = b"P3\n1 1\n255\n1 2 3\n";
        assert!(matches!(read_ppm(bytes), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn ppm_rejects_other_maxval() {
        let bytes = b"P6\n1 1\n65535\n\0\0\0\0\0\0";
        assert!(matches!(read_ppm(bytes), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn ppm_truncated_payload() {
        let img = random_raster(4, 4, 1);
        let bytes = write_ppm(&img);
        let header_len = bytes.len() - 48;
        let cut = &bytes[..header_len + 24];
        assert!(matches!(
            read_ppm(cut),
            Err(Error::TruncatedPixelData { expected: 48, got: 24 })
        ));
    }

    #[test]
    fn crop_examples() {
        let img = random_raster(5, 4, 2);
        assert_eq!(crop(&img, img.full_box()).unwrap(), img);
        let one = crop(&img, BBox::new(0, 0, 1, 1)).unwrap();
        assert_eq!((one.width(), one.height()), (1, 1));
        assert_eq!(one.pixel(0, 0), img.pixel(0, 0));
        assert!(matches!(
            crop(&img, BBox::new(0, 0, 6, 2)),
            Err(Error::BoxOutOfBounds { .. })
        ));
        assert!(crop(&img, BBox::new(2, 1, 2, 3)).is_err());
    }

    #[test]
    fn crop_maps_pixels() {
        let img = random_raster(7, 6, 3);
        let b = BBox::new(2, 1, 6, 5);
        let c = crop(&img, b).unwrap();
        for j in 0..c.height() {
            for i in 0..c.width() {
                assert_eq!(c.pixel(i, j), img.pixel(b.x1 + i, b.y1 + j));
            }
        }
    }

    #[test]
    fn blur_of_constant_is_constant() {
        let img = Raster::filled(9, 7, [10, 200, 77]).unwrap();
        assert_eq!(gaussian_blur(&img, 1.0).unwrap(), img);
        assert_eq!(gaussian_blur(&img, 2.5).unwrap(), img);
    }

    #[test]
    fn blur_single_white_pixel() {
        let mut img = Raster::filled(11, 11, [0, 0, 0]).unwrap();
        img.set_pixel(5, 5, [255, 255, 255]);
        let out = gaussian_blur(&img, 1.0).unwrap();
        let k = gaussian_kernel(1.0).unwrap();
        let w0 = k[k.len() / 2];
        let expected = (255.0 * w0 * w0).round() as u8;
        assert_eq!(out.pixel(5, 5), [expected; 3]);
        assert_eq!(out, blur_oracle(&img, 1.0));
    }

    #[test]
    fn blur_matches_2d_oracle_on_random() {
        for seed in 0..4 {
            let img = random_raster(13, 9, seed);
            assert_eq!(gaussian_blur(&img, 1.0).unwrap(), blur_oracle(&img, 1.0));
        }
    }

    #[test]
    fn blur_rejects_bad_radius() {
        let img = Raster::filled(2, 2, [0; 3]).unwrap();
        assert!(matches!(gaussian_blur(&img, 0.0), Err(Error::NonPositiveRadius(_))));
        assert!(gaussian_blur(&img, -1.0).is_err());
        assert!(gaussian_blur(&img, f64::NAN).is_err());
    }

    #[test]
    fn kernel_shape() {
        let k = gaussian_kernel(1.0).unwrap();
        assert_eq!(k.len(), 7);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(gaussian_kernel(0.4).unwrap().len(), 5);
    }

    #[test]
    fn background_blur_examples() {
        let img = random_raster(8, 8, 5);
        assert_eq!(background_blur(&img, img.full_box(), 1.0).unwrap(), img);
        let flat = Raster::filled(8, 8, [9, 9, 9]).unwrap();
        assert_eq!(background_blur(&flat, BBox::new(2, 2, 5, 5), 1.0).unwrap(), flat);
        assert!(background_blur(&img, BBox::new(0, 0, 9, 1), 1.0).is_err());
        assert!(background_blur(&img, BBox::new(0, 0, 2, 2), 0.0).is_err());
    }

    #[test]
    fn background_blur_keeps_box_sharp() {
        // Checkerboard background, white pixel inside the box.
        let mut img = Raster::filled(10, 10, [0; 3]).unwrap();
        for y in 0..10 {
            for x in 0..10 {
                if (x + y) % 2 == 0 {
                    img.set_pixel(x, y, [255, 0, 128]);
                }
            }
        }
        img.set_pixel(4, 4, [255, 255, 255]);
        let b = BBox::new(3, 3, 6, 6);
        let out = background_blur(&img, b, 1.0).unwrap();
        let full = blur_oracle(&img, 1.0);
        assert_eq!(out.pixel(4, 4), [255, 255, 255]);
        for y in 0..10 {
            for x in 0..10 {
                let want = if b.contains(x, y) { img.pixel(x, y) } else { full.pixel(x, y) };
                assert_eq!(out.pixel(x, y), want);
            }
        }
        assert_eq!(crop(&out, b).unwrap(), crop(&img, b).unwrap());
    }

    #[test]
    fn blur_preserves_interior_mean() {
        let mean = |r: &Raster, b: BBox, c: usize| {
            let mut s = 0.0;
            for y in b.y1..b.y2 {
                for x in b.x1..b.x2 {
                    s += f64::from(r.pixel(x, y)[c]);
                }
            }
            s / f64::from(b.width() * b.height())
        };
        let region = BBox::new(8, 8, 56, 56);
        for seed in 0..5 {
            let img = random_raster(64, 64, seed);
            let out = gaussian_blur(&img, 1.0).unwrap();
            for c in 0..3 {
                let (before, after) = (mean(&img, region, c), mean(&out, region, c));
                assert!((before - after).abs() <= 1.0, "seed {seed} channel {c}: {before} vs {after}");
            }
        }
    }

    proptest! {
        #[test]
        fn nested_crops_compose(
            seed in any::<u64>(),
            (x1, x2) in (0u32..10).prop_flat_map(|a| (Just(a), a + 1..=12)),
            (y1, y2) in (0u32..8).prop_flat_map(|a| (Just(a), a + 1..=9)),
            fx in 0.0f64..1.0, fy in 0.0f64..1.0, fw in 0.0f64..1.0, fh in 0.0f64..1.0,
        ) {
            let img = random_raster(12, 9, seed);
            let outer = BBox::new(x1, y1, x2, y2);
            let c1 = crop(&img, outer).unwrap();
            let (w, h) = (outer.width(), outer.height());
            let bx1 = ((fx * w as f64) as u32).min(w - 1);
            let by1 = ((fy * h as f64) as u32).min(h - 1);
            let bx2 = bx1 + 1 + ((fw * (w - bx1 - 1) as f64) as u32);
            let by2 = by1 + 1 + ((fh * (h - by1 - 1) as f64) as u32);
            let rel = BBox::new(bx1, by1, bx2, by2);
            let abs = BBox::new(x1 + bx1, y1 + by1, x1 + bx2, y1 + by2);
            prop_assert_eq!(crop(&c1, rel).unwrap(), crop(&img, abs).unwrap());
        }

        #[test]
        fn ppm_round_trip(w in 1u32..9, h in 1u32..9, seed in any::<u64>()) {
            let img = random_raster(w, h, seed);
            prop_assert_eq!(read_ppm(&write_ppm(&img)).unwrap(), img);
        }
    }
}
