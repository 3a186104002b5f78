//! Binary P6 (RGB) and P5 (grayscale) rasters with maxval 255.

use std::path::Path;

use super::{BinaryMap, DataError, Result};
use crate::tensor::Tensor;

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a `3×H×W` image in `[0, 1]` as P6.
pub fn encode_ppm(img: &Tensor<f32>) -> Result<Vec<u8>> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(DataError::Invalid(format!("P6 needs a 3×H×W image, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let d = img.data();
    if d.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(DataError::Invalid("image value outside [0, 1]".into()));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    for i in 0..h * w {
        for ch in 0..3 {
            out.push(quantize(d[ch * h * w + i]));
        }
    }
    Ok(out)
}

/// Encodes a binary map as P5 with 0 and 255.
pub fn encode_pgm(map: &BinaryMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    out.extend(map.data().iter().map(|&v| if v != 0 { 255 } else { 0 }));
    out
}

/// Raster kind, width, height, and payload bytes.
pub fn decode_pnm(bytes: &[u8]) -> Result<(&'static str, usize, usize, &[u8])> {
    let (kind, channels) = match bytes.get(..2) {
        Some(b"P6") => ("P6", 3),
        Some(b"P5") => ("P5", 1),
        _ => return Err(DataError::Decode("bad magic".into())),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| DataError::Decode("malformed header".into()))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(DataError::Decode("malformed header".into()));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(DataError::Decode(format!("maxval {maxval}, only 255 is supported")));
    }
    let need = channels * w * h;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(DataError::Decode(format!("truncated payload: {} of {need} bytes", payload.len())));
    }
    Ok((kind, w, h, &payload[..need]))
}

pub fn write_image(path: impl AsRef<Path>, img: &Tensor<f32>) -> Result<()> {
    std::fs::write(path, encode_ppm(img)?)?;
    Ok(())
}

/// Reads a P6 file as a `3×H×W` image in `[0, 1]`.
pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path)?;
    let (kind, w, h, payload) = decode_pnm(&bytes)?;
    if kind != "P6" {
        return Err(DataError::Decode(format!("expected P6 image, found {kind}")));
    }
    let mut data = vec![0f32; 3 * h * w];
    for (i, px) in payload.chunks_exact(3).enumerate() {
        for ch in 0..3 {
            data[ch * h * w + i] = f32::from(px[ch]) / 255.0;
        }
    }
    Ok(Tensor::from_vec(&[3, h, w], data).expect("image shape"))
}

pub fn write_label(path: impl AsRef<Path>, map: &BinaryMap) -> Result<()> {
    std::fs::write(path, encode_pgm(map))?;
    Ok(())
}

/// Reads a P5 file; values above 127 are lane.
pub fn read_label(path: impl AsRef<Path>) -> Result<BinaryMap> {
    let bytes = std::fs::read(path)?;
    let (kind, w, h, payload) = decode_pnm(&bytes)?;
    if kind != "P5" {
        return Err(DataError::Decode(format!("expected P5 label, found {kind}")));
    }
    BinaryMap::from_vec(h, w, payload.iter().map(|&v| u8::from(v > 127)).collect())
}
