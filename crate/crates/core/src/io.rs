//! Binary tensor files and portable pixmaps.
//!
//! Tensor layout: the 8-byte magic `FPTENSR1`, three little-endian `u32`
//! dimensions `(H, W, C)`, then `H * W * C` little-endian IEEE-754 `f32`
//! values in row-major channel-last order. Nothing may follow the payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Image, Shape};

pub const TENSOR_MAGIC: &[u8; 8] = b"FPTENSR1";
pub const TENSOR_HEADER_LEN: usize = 8 + 3 * 4;

pub fn encode_tensor(map: &FeatureMap) -> Vec<u8> {
    encode_raw(map.shape(), map.data())
}

fn encode_raw(shape: Shape, data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(TENSOR_HEADER_LEN + data.len() * 4);
    out.extend_from_slice(TENSOR_MAGIC);
    for d in [shape.height, shape.width, shape.channels] {
        let d = u32::try_from(d).expect("tensor dimension exceeds u32");
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_raw(bytes: &[u8]) -> Result<(Shape, Vec<f32>)> {
    if bytes.len() < TENSOR_MAGIC.len() || &bytes[..8] != TENSOR_MAGIC {
        let offset = bytes
            .iter()
            .zip(TENSOR_MAGIC)
            .position(|(a, b)| a != b)
            .unwrap_or(bytes.len());
        return Err(Error::format(offset as u64, "bad magic, expected FPTENSR1"));
    }
    if bytes.len() < TENSOR_HEADER_LEN {
        return Err(Error::format(bytes.len() as u64, "truncated header"));
    }
    let dim = |i: usize| {
        let at = 8 + 4 * i;
        u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize
    };
    let shape = Shape::new(dim(0), dim(1), dim(2));
    let payload = &bytes[TENSOR_HEADER_LEN..];
    let expected = shape
        .height
        .checked_mul(shape.width)
        .and_then(|n| n.checked_mul(shape.channels))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(8, format!("dimensions {shape} overflow")))?;
    if payload.len() < expected {
        return Err(Error::format(
            bytes.len() as u64,
            format!(
                "truncated payload: {shape} needs {expected} bytes, found {}",
                payload.len()
            ),
        ));
    }
    if payload.len() > expected {
        return Err(Error::format(
            (TENSOR_HEADER_LEN + expected) as u64,
            "trailing bytes after payload",
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((shape, data))
}

pub fn decode_tensor(bytes: &[u8]) -> Result<FeatureMap> {
    let (shape, data) = decode_raw(bytes)?;
    if let Some(i) = data.iter().position(|v: &f32| !v.is_finite()) {
        return Err(Error::format(
            (TENSOR_HEADER_LEN + 4 * i) as u64,
            "non-finite value",
        ));
    }
    FeatureMap::new(shape, data)
}

pub fn write_tensor(map: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tensor(map)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

/// Stores a frame as a 3-channel tensor file (lossless, unlike a pixmap).
pub fn write_image_tensor(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_raw(image.shape(), image.data())).map_err(|e| Error::io(path, e))
}

pub fn read_image_tensor(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (shape, data) = decode_raw(&bytes)?;
    if shape.channels != 3 {
        return Err(Error::format(16, format!("image tensor has {} channels", shape.channels)));
    }
    Image::new(shape.height, shape.width, data)
}

/// Binary (`P6`) pixmap with 8-bit samples.
pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|v| (v * 255.0).round() as u8));
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // whitespace and comments between header tokens
        while pos < bytes.len() {
            if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(pos as u64, "truncated pixmap header"));
        }
        fields.push((start, &bytes[start..pos]));
    }
    if fields[0].1 != b"P6" {
        return Err(Error::format(0, "only binary P6 pixmaps are supported"));
    }
    let number = |i: usize| -> Result<usize> {
        let (at, raw) = fields[i];
        std::str::from_utf8(raw)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(at as u64, "invalid header number"))
    };
    let (width, height, maxval) = (number(1)?, number(2)?, number(3)?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(fields[3].0 as u64, "maxval must be in 1..=255"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = width * height * 3;
    let raster = bytes.get(pos..pos + need).ok_or_else(|| {
        Error::format(bytes.len() as u64, format!("truncated raster, need {need} bytes"))
    })?;
    let scale = maxval as f32;
    let data = raster.iter().map(|b| f32::from(*b) / scale).collect();
    Image::new(height, width, data)
}

pub fn write_ppm(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(image)).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_payload_is_sixteen_bytes() {
        let m = FeatureMap::new(Shape::new(2, 2, 1), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let bytes = encode_tensor(&m);
        assert_eq!(bytes.len(), TENSOR_HEADER_LEN + 16);
        assert_eq!(&bytes[..8], b"FPTENSR1");
        assert_eq!(&bytes[8..20], &[2, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[24..28], &1.0f32.to_le_bytes());
        assert_eq!(decode_tensor(&bytes).unwrap(), m);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let mut bytes = encode_tensor(&FeatureMap::zeros(Shape::new(1, 1, 1)));
        bytes[3] = b'X';
        match decode_tensor(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode_tensor(&FeatureMap::zeros(Shape::new(2, 2, 2)));
        let cut = &bytes[..bytes.len() - 3];
        match decode_tensor(cut) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, cut.len() as u64),
            other => panic!("expected format error, got {other:?}"),
        }
        assert!(matches!(
            decode_tensor(&bytes[..12]),
            Err(Error::Format { offset: 12, .. })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            decode_tensor(&long),
            Err(Error::Format { offset, .. }) if offset == bytes.len() as u64
        ));
    }

    #[test]
    fn ppm_round_trip_quantizes() {
        let img = Image::new(1, 2, vec![0.0, 0.5, 1.0, 0.25, 0.75, 0.1]).unwrap();
        let decoded = decode_ppm(&encode_ppm(&img)).unwrap();
        assert_eq!(decoded.shape(), img.shape());
        for (a, b) in decoded.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
        let with_comment = b"P6\n# comment\n1 1\n255\n\x00\x80\xff";
        let img = decode_ppm(with_comment).unwrap();
        assert_eq!(img.data()[2], 1.0);
        assert!(decode_ppm(b"P6\n2 2\n255\n\x00").is_err());
    }
}
