//! Binary PGM (P5, 8-bit) and FGRD float-grid codecs.
//!
//! FGRD layout: `FGRD\n`, then `v1 <height> <width>\n` with plain decimal
//! dimensions (no sign, no leading zeros), then `height * width`
//! little-endian IEEE-754 binary32 values in row-major order, and nothing
//! else. The decoder accepts exactly the byte strings the encoder produces.

use super::Image;
use crate::error::{Error, Result};

const FGRD_MAGIC: &[u8] = b"FGRD\n";
const PGM_MAGIC: &[u8] = b"P5";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Fgrd,
}

impl ImageFormat {
    pub fn sniff(bytes: &[u8]) -> Option<Self> {
        if bytes.starts_with(FGRD_MAGIC) {
            Some(ImageFormat::Fgrd)
        } else if bytes.starts_with(PGM_MAGIC) {
            Some(ImageFormat::Pgm)
        } else {
            None
        }
    }
}

/// Decodes a P5 graymap or an FGRD grid, chosen by magic bytes. 8-bit data
/// comes back as raw integer levels.
pub fn load_image(bytes: &[u8]) -> Result<Image> {
    match ImageFormat::sniff(bytes) {
        Some(ImageFormat::Fgrd) => load_fgrd(bytes),
        Some(ImageFormat::Pgm) => load_pgm(bytes),
        None => Err(Error::format(0, "unrecognized magic (expected \"P5\" or \"FGRD\\n\")")),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, lit: &[u8], what: &str) -> Result<()> {
        if self.bytes[self.pos..].starts_with(lit) {
            self.pos += lit.len();
            Ok(())
        } else {
            Err(Error::format(self.pos, format!("expected {what}")))
        }
    }

    /// Skips PGM header whitespace and `#` comments; requires at least one
    /// whitespace byte or comment.
    fn skip_pgm_separator(&mut self) -> Result<()> {
        let start = self.pos;
        loop {
            match self.peek() {
                Some(b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c) => self.pos += 1,
                Some(b'#') => {
                    while let Some(c) = self.peek() {
                        self.pos += 1;
                        if c == b'\n' || c == b'\r' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        if self.pos == start {
            return Err(Error::format(self.pos, "expected whitespace"));
        }
        Ok(())
    }

    /// Parses an unsigned decimal. With `canonical`, leading zeros are
    /// rejected.
    fn decimal(&mut self, what: &str, canonical: bool) -> Result<usize> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        let digits = &self.bytes[start..self.pos];
        if digits.is_empty() {
            return Err(Error::format(start, format!("expected {what}")));
        }
        if canonical && digits.len() > 1 && digits[0] == b'0' {
            return Err(Error::format(start, format!("{what} has leading zeros")));
        }
        let mut value: usize = 0;
        for &d in digits {
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add((d - b'0') as usize))
                .ok_or_else(|| Error::format(start, format!("{what} overflows")))?;
        }
        Ok(value)
    }
}

fn payload_len(height: usize, width: usize, bytes_per_value: usize, offset: usize) -> Result<usize> {
    height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(bytes_per_value))
        .ok_or_else(|| Error::format(offset, "image dimensions overflow"))
}

pub fn load_pgm(bytes: &[u8]) -> Result<Image> {
    let mut cur = Cursor { bytes, pos: 0 };
    cur.expect(PGM_MAGIC, "\"P5\" magic")?;
    cur.skip_pgm_separator()?;
    let width = cur.decimal("width", false)?;
    cur.skip_pgm_separator()?;
    let height = cur.decimal("height", false)?;
    cur.skip_pgm_separator()?;
    let maxval_at = cur.pos;
    let maxval = cur.decimal("maxval", false)?;
    if width == 0 || height == 0 {
        return Err(Error::format(maxval_at, "zero image dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(maxval_at, format!("unsupported maxval {maxval} (8-bit only)")));
    }
    match cur.peek() {
        Some(b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c) => cur.pos += 1,
        _ => return Err(Error::format(cur.pos, "expected single whitespace after maxval")),
    }
    let need = payload_len(height, width, 1, cur.pos)?;
    let rest = &bytes[cur.pos..];
    if rest.len() < need {
        return Err(Error::format(
            bytes.len(),
            format!("truncated payload: need {need} bytes, have {}", rest.len()),
        ));
    }
    if rest.len() > need {
        return Err(Error::format(cur.pos + need, "trailing bytes after payload"));
    }
    if let Some(k) = rest.iter().position(|&v| v as usize > maxval) {
        return Err(Error::format(cur.pos + k, format!("sample {} exceeds maxval {maxval}", rest[k])));
    }
    Image::new(height, width, rest.iter().map(|&v| v as f64).collect())
}

/// Encodes integer levels in [0, 255] as a P5 graymap with maxval 255.
pub fn save_pgm(image: &Image) -> Result<Vec<u8>> {
    let header = format!("P5\n{} {}\n255\n", image.width(), image.height());
    let mut out = Vec::with_capacity(header.len() + image.len());
    out.extend_from_slice(header.as_bytes());
    for (k, &v) in image.values().iter().enumerate() {
        if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
            return Err(Error::domain(format!(
                "PGM output needs integer levels in [0,255], found {v} at index {k}"
            )));
        }
        out.push(v as u8);
    }
    Ok(out)
}

pub fn load_fgrd(bytes: &[u8]) -> Result<Image> {
    let mut cur = Cursor { bytes, pos: 0 };
    cur.expect(FGRD_MAGIC, "\"FGRD\\n\" magic")?;
    cur.expect(b"v1 ", "version \"v1 \"")?;
    let height = cur.decimal("height", true)?;
    cur.expect(b" ", "space")?;
    let width = cur.decimal("width", true)?;
    cur.expect(b"\n", "newline after header")?;
    if height == 0 || width == 0 {
        return Err(Error::format(cur.pos - 1, "zero image dimension"));
    }
    let need = payload_len(height, width, 4, cur.pos)?;
    let rest = &bytes[cur.pos..];
    if rest.len() < need {
        return Err(Error::format(
            bytes.len(),
            format!("truncated payload: need {need} bytes, have {}", rest.len()),
        ));
    }
    if rest.len() > need {
        return Err(Error::format(cur.pos + need, "trailing bytes after payload"));
    }
    let mut values = Vec::with_capacity(height * width);
    for (k, chunk) in rest.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::format(cur.pos + 4 * k, format!("non-finite value {v}")));
        }
        values.push(v as f64);
    }
    Image::new(height, width, values)
}

/// Encodes as FGRD. Values are narrowed to binary32.
pub fn save_fgrd(image: &Image) -> Vec<u8> {
    let header = format!("FGRD\nv1 {} {}\n", image.height(), image.width());
    let mut out = Vec::with_capacity(header.len() + 4 * image.len());
    out.extend_from_slice(header.as_bytes());
    for &v in image.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}
