//! Netpbm readers (`P2`, `P5`, `P3`, `P6`).

use std::path::Path;

use crate::error::{Error, Result};

use super::{GrayImage, RgbImage};

/// Decoded Netpbm raster, before grayscale conversion.
#[derive(Debug, Clone)]
pub enum Raster {
    Gray(GrayImage),
    Rgb(RgbImage),
}

/// A decoded image together with the bit depth it was stored at.
#[derive(Debug, Clone)]
pub struct Decoded {
    pub raster: Raster,
    pub bit_depth: u8,
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn skip_ws_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let c = self.bytes[self.pos];
            if c == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Option<u32> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()?
            .parse()
            .ok()
    }
}

/// Rescales a sample in `[0, maxval]` onto `[0, 255]`.
fn to_8bit(v: u32, maxval: u32) -> u8 {
    if maxval == 255 {
        v as u8
    } else {
        ((v as f64) * 255.0 / maxval as f64)
            .round()
            .clamp(0.0, 255.0) as u8
    }
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<Decoded> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(bad(path, "not a Netpbm file"));
    }
    let kind = bytes[1];
    let channels = match kind {
        b'2' | b'5' => 1,
        b'3' | b'6' => 3,
        _ => {
            return Err(bad(
                path,
                format!("unsupported Netpbm variant P{}", kind as char),
            ))
        }
    };
    let mut h = Header { bytes, pos: 2 };
    let cols = h.number().ok_or_else(|| bad(path, "missing width"))? as usize;
    let rows = h.number().ok_or_else(|| bad(path, "missing height"))? as usize;
    let maxval = h.number().ok_or_else(|| bad(path, "missing maxval"))?;
    if cols == 0 || rows == 0 {
        return Err(bad(path, "zero-sized image"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(bad(path, format!("invalid maxval {maxval}")));
    }
    let bit_depth = if maxval < 256 { 8 } else { 16 };
    let count = rows * cols * channels;
    let mut samples = Vec::with_capacity(count);

    if kind == b'5' || kind == b'6' {
        // exactly one whitespace byte separates the header from the raster
        let start = h.pos + 1;
        let width = if bit_depth == 8 { 1 } else { 2 };
        let end = start + count * width;
        if end > bytes.len() {
            return Err(bad(path, "truncated raster"));
        }
        let raster = &bytes[start..end];
        if width == 1 {
            samples.extend(raster.iter().map(|&b| b as u32));
        } else {
            samples.extend(
                raster
                    .chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32),
            );
        }
    } else {
        for _ in 0..count {
            samples.push(
                h.number()
                    .ok_or_else(|| bad(path, "truncated ASCII raster"))?,
            );
        }
    }
    if let Some(v) = samples.iter().find(|&&v| v > maxval) {
        return Err(bad(path, format!("sample {v} exceeds maxval {maxval}")));
    }
    let data: Vec<u8> = samples.into_iter().map(|v| to_8bit(v, maxval)).collect();
    let raster = if channels == 1 {
        Raster::Gray(GrayImage::new(rows, cols, data)?)
    } else {
        Raster::Rgb(RgbImage::new(rows, cols, data)?)
    };
    Ok(Decoded { raster, bit_depth })
}

/// Encodes an 8-bit binary PGM (`P5`).
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.cols(), img.rows()).into_bytes();
    out.extend_from_slice(img.as_slice());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_pgm_with_comment() {
        let mut bytes = b"P5\n# made by hand\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 255, 0]);
        let d = decode(Path::new("x.pgm"), &bytes).unwrap();
        assert_eq!(d.bit_depth, 8);
        match d.raster {
            Raster::Gray(g) => assert_eq!(g.as_slice(), &[0, 255, 255, 0]),
            _ => panic!("expected gray"),
        }
    }

    #[test]
    fn ascii_pgm_and_sixteen_bit() {
        let d = decode(Path::new("a.pgm"), b"P2 2 1 15 0 15").unwrap();
        match d.raster {
            Raster::Gray(g) => assert_eq!(g.as_slice(), &[0, 255]),
            _ => panic!(),
        }
        let mut b16 = b"P5 1 1 65535\n".to_vec();
        b16.extend_from_slice(&[0xff, 0xff]);
        let d = decode(Path::new("b.pgm"), &b16).unwrap();
        assert_eq!(d.bit_depth, 16);
    }

    #[test]
    fn truncated_is_rejected() {
        let bytes = b"P5\n4 4\n255\n\x00\x01".to_vec();
        let err = decode(Path::new("t.pgm"), &bytes).unwrap_err();
        assert!(err.to_string().contains("t.pgm"));
    }

    #[test]
    fn encode_then_decode() {
        let img = GrayImage::new(2, 3, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let d = decode(Path::new("e.pgm"), &encode_pgm(&img)).unwrap();
        match d.raster {
            Raster::Gray(g) => assert_eq!(g, img),
            _ => panic!(),
        }
    }
}
