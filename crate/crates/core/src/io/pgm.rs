//! 16-bit binary PGM export with a sidecar scale file.
//!
//! Pixel `p` encodes the value `p / 65535 * scale`, where `scale` is the image
//! maximum (1 for an all-zero image). Negative values are clipped to 0.

use std::path::{Path, PathBuf};

use crate::error::{shape_err, Error, Result};
use crate::numerics::RealTensor;

pub const MAXVAL: u16 = 65535;

/// Sidecar path for an image: `name.pgm` becomes `name.scale`.
pub fn sidecar_path(pgm: &Path) -> PathBuf {
    pgm.with_extension("scale")
}

/// Encodes `[ny, nx]` magnitudes; returns the bytes and the scale.
pub fn encode_pgm(image: &RealTensor) -> Result<(Vec<u8>, f64)> {
    let s = image.shape();
    if s.len() != 2 {
        return Err(shape_err(format!("PGM export needs [ny, nx], got {:?}", s)));
    }
    image.check_finite("PGM export")?;
    let peak = image.max();
    let scale = if peak > 0.0 { peak } else { 1.0 };
    let mut out = format!("P5\n{} {}\n{}\n", s[1], s[0], MAXVAL).into_bytes();
    for &v in image.data() {
        let p = (v.max(0.0) / scale * MAXVAL as f64).round() as u16;
        out.extend_from_slice(&p.to_be_bytes());
    }
    Ok((out, scale))
}

/// Writes the image and its sidecar; returns the scale.
pub fn write_pgm(path: &Path, image: &RealTensor) -> Result<f64> {
    let (bytes, scale) = encode_pgm(image)?;
    std::fs::write(path, bytes)?;
    std::fs::write(sidecar_path(path), format!("scale {scale:e}\nmaxval {MAXVAL}\n"))?;
    Ok(scale)
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::Format("PGM header is not ASCII".into()))
}

/// Decodes a 16-bit P5 image back to values using `scale`.
pub fn decode_pgm(bytes: &[u8], scale: f64) -> Result<RealTensor> {
    let bad = |m: &str| Error::Format(format!("PGM: {m}"));
    let mut pos = 0;
    if header_token(bytes, &mut pos)? != "P5" {
        return Err(bad("not a binary graymap"));
    }
    let mut num = || -> Result<usize> { header_token(bytes, &mut pos)?.parse().map_err(|_| bad("bad header number")) };
    let (nx, ny, maxval) = (num()?, num()?, num()?);
    if maxval != MAXVAL as usize {
        return Err(bad("expected maxval 65535"));
    }
    pos += 1;
    let body = &bytes[pos.min(bytes.len())..];
    if body.len() != 2 * nx * ny {
        return Err(bad("payload size does not match header"));
    }
    let data = body
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / MAXVAL as f64 * scale)
        .collect();
    RealTensor::from_vec(&[ny, nx], data)
}

/// Reads an image written by [`write_pgm`], sidecar included.
pub fn read_pgm(path: &Path) -> Result<RealTensor> {
    let side = std::fs::read_to_string(sidecar_path(path))?;
    let scale = side
        .lines()
        .find_map(|l| l.strip_prefix("scale "))
        .and_then(|s| s.trim().parse::<f64>().ok())
        .ok_or_else(|| Error::Format(format!("{}: no scale line", sidecar_path(path).display())))?;
    decode_pgm(&std::fs::read(path)?, scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encodes_header_and_big_endian_pixels() {
        let img = RealTensor::from_vec(&[1, 3], vec![0.0, 1.0, 2.0]).unwrap();
        let (b, scale) = encode_pgm(&img).unwrap();
        assert_eq!(scale, 2.0);
        let header = b"P5\n3 1\n65535\n";
        assert_eq!(&b[..header.len()], header);
        assert_eq!(&b[header.len()..], &[0, 0, 0x80, 0x00, 0xff, 0xff]);
    }

    #[test]
    fn round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let data: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin().abs() * 3.0).collect();
        let img = RealTensor::from_vec(&[4, 5], data).unwrap();
        let scale = write_pgm(&path, &img).unwrap();
        let back = read_pgm(&path).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.5 * scale / MAXVAL as f64 + 1e-15);
        }
    }

    #[test]
    fn zero_and_negative_images() {
        let (b, scale) = encode_pgm(&RealTensor::zeros(&[2, 2])).unwrap();
        assert_eq!(scale, 1.0);
        assert!(b.ends_with(&[0; 8]));
        let neg = RealTensor::from_vec(&[1, 2], vec![-1.0, 1.0]).unwrap();
        assert_eq!(decode_pgm(&encode_pgm(&neg).unwrap().0, 1.0).unwrap().data(), &[0.0, 1.0]);
        assert!(encode_pgm(&RealTensor::zeros(&[4])).is_err());
    }
}
