//! Conversion of the USPS digits from their sparse text distribution
//! (`label index:value ...`, 256 pixels in `[-1, 1]`, labels 1..10 for
//! digits 0..9) to 28×28 IDX files.

use image::imageops::{resize, FilterType};
use image::GrayImage;

use super::idx::{IdxArray, IdxType};
use crate::error::{Error, Result};

pub const USPS_SIDE: u32 = 16;
pub const OUT_SIDE: u32 = 28;

/// One parsed record: digit label and 16×16 pixels as bytes.
fn parse_line(line: &str, lineno: usize) -> Result<(u8, Vec<u8>)> {
    let bad = |msg: String| Error::Plan { line: lineno, msg };
    let mut fields = line.split_whitespace();
    let label: f64 = fields
        .next()
        .ok_or_else(|| bad("missing label".into()))?
        .parse()
        .map_err(|e| bad(format!("label: {e}")))?;
    if !(1.0..=10.0).contains(&label) || label.fract() != 0.0 {
        return Err(bad(format!("label {label} outside 1..10")));
    }
    let n = (USPS_SIDE * USPS_SIDE) as usize;
    let mut pixels = vec![0u8; n];
    for f in fields {
        let (i, v) = f
            .split_once(':')
            .ok_or_else(|| bad(format!("malformed feature {f:?}")))?;
        let i: usize = i
            .parse()
            .map_err(|e| bad(format!("feature index {i:?}: {e}")))?;
        let v: f64 = v
            .parse()
            .map_err(|e| bad(format!("feature value {v:?}: {e}")))?;
        if i == 0 || i > n {
            return Err(bad(format!("feature index {i} outside 1..{n}")));
        }
        pixels[i - 1] = ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8;
    }
    Ok((label as u8 - 1, pixels))
}

/// Bilinear upscaling of a 16×16 byte image to 28×28.
pub fn upscale(pixels: &[u8]) -> Result<Vec<u8>> {
    let img = GrayImage::from_raw(USPS_SIDE, USPS_SIDE, pixels.to_vec()).ok_or_else(|| {
        Error::shape("usps", format!("expected 256 pixels, got {}", pixels.len()))
    })?;
    Ok(resize(&img, OUT_SIDE, OUT_SIDE, FilterType::Triangle).into_raw())
}

/// Parses the text file into `(images [N,28,28], labels [N])` IDX arrays.
pub fn convert_usps(text: &str) -> Result<(IdxArray, IdxArray)> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (label, pixels) = parse_line(line, i + 1)?;
        images.extend(upscale(&pixels)?.into_iter().map(f64::from));
        labels.push(label as f64);
    }
    if labels.is_empty() {
        return Err(Error::Config("USPS input holds no records".into()));
    }
    let n = labels.len();
    let side = OUT_SIDE as usize;
    Ok((
        IdxArray::new(IdxType::U8, vec![n, side, side], images)?,
        IdxArray::new(IdxType::U8, vec![n], labels)?,
    ))
}
