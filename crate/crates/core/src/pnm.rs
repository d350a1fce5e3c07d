//! Netpbm I/O: PGM (P2/P5) images and PBM (P4) masks.

use crate::error::{Error, Result};
use crate::grid::Image;
use crate::solver::Mask;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Pgm {
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn magic(&mut self) -> Result<[u8; 2]> {
        if self.bytes.len() < 2 {
            return Err(self.err("stream too short for magic number"));
        }
        let m = [self.bytes[0], self.bytes[1]];
        self.pos = 2;
        Ok(m)
    }

    /// Skips whitespace and `#` comments.
    fn skip_blank(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn uint(&mut self, what: &str) -> Result<u32> {
        self.skip_blank();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            self.pos = start;
            return Err(if start >= self.bytes.len() {
                self.err(format!("unexpected end of stream reading {what}"))
            } else {
                self.err(format!("expected decimal {what}"))
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Pgm {
                offset: start,
                reason: format!("{what} out of range"),
            })
    }

    /// Consumes the single whitespace byte separating the header from a raster.
    fn raster_separator(&mut self) -> Result<()> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => {
                self.pos += 1;
                Ok(())
            }
            Some(_) => Err(self.err("expected whitespace before raster")),
            None => Err(self.err("truncated payload: missing raster")),
        }
    }
}

/// Parses a P2 or P5 greymap, normalising samples by `maxval`.
pub fn load_pgm(bytes: &[u8]) -> Result<Image> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.magic()?;
    let ascii = match &magic {
        b"P2" => true,
        b"P5" => false,
        _ => {
            return Err(Error::Pgm {
                offset: 0,
                reason: format!("unsupported magic {:?}", String::from_utf8_lossy(&magic)),
            })
        }
    };
    let width = cur.uint("width")? as usize;
    let height = cur.uint("height")? as usize;
    let maxval_at = cur.pos;
    let maxval = cur.uint("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Pgm {
            offset: maxval_at,
            reason: format!("zero dimension {width}x{height}"),
        });
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Pgm {
            offset: maxval_at,
            reason: format!("maxval {maxval} outside 1..=65535"),
        });
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| cur.err("image dimensions overflow"))?;
    let scale = 1.0 / maxval as f64;
    let mut data = Vec::with_capacity(n);

    if ascii {
        for _ in 0..n {
            let at = cur.pos;
            let v = cur.uint("sample").map_err(|e| match e {
                Error::Pgm { offset, reason } if offset >= bytes.len() => Error::Pgm {
                    offset,
                    reason: format!("truncated payload: {reason}"),
                },
                other => other,
            })?;
            if v > maxval {
                return Err(Error::Pgm {
                    offset: at,
                    reason: format!("sample {v} exceeds maxval {maxval}"),
                });
            }
            data.push(v as f64 * scale);
        }
    } else {
        cur.raster_separator()?;
        let bps = if maxval < 256 { 1 } else { 2 };
        let need = n * bps;
        let avail = bytes.len() - cur.pos;
        if avail < need {
            return Err(Error::Pgm {
                offset: bytes.len(),
                reason: format!("truncated payload: need {need} raster bytes, found {avail}"),
            });
        }
        let raster = &bytes[cur.pos..cur.pos + need];
        for (k, chunk) in raster.chunks_exact(bps).enumerate() {
            let v = if bps == 1 {
                chunk[0] as u32
            } else {
                u16::from_be_bytes([chunk[0], chunk[1]]) as u32
            };
            if v > maxval {
                return Err(Error::Pgm {
                    offset: cur.pos + k * bps,
                    reason: format!("sample {v} exceeds maxval {maxval}"),
                });
            }
            data.push(v as f64 * scale);
        }
    }
    Image::new(width, height, data)
}

/// Quantises `v` in `[0, 1]` to `0..=maxval`, rounding half up.
pub fn quantize(v: f64, maxval: u32) -> u32 {
    let q = (v.clamp(0.0, 1.0) * maxval as f64 + 0.5).floor();
    (q as u32).min(maxval)
}

/// Writes a binary P5 greymap.
pub fn save_pgm(img: &Image, maxval: u32) -> Result<Vec<u8>> {
    if !(1..=65535).contains(&maxval) {
        return Err(Error::InvalidParameter(format!(
            "maxval {maxval} outside 1..=65535"
        )));
    }
    let mut out = format!("P5\n{} {}\n{}\n", img.width(), img.height(), maxval).into_bytes();
    let wide = maxval > 255;
    out.reserve(img.len() * if wide { 2 } else { 1 });
    for &v in img.data() {
        let q = quantize(v, maxval);
        if wide {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    Ok(out)
}

/// Writes a mask as packed PBM (P4); set pixels are black (bit 1).
pub fn save_pbm(mask: &Mask) -> Vec<u8> {
    let (w, h) = (mask.width(), mask.height());
    let mut out = format!("P4\n{w} {h}\n").into_bytes();
    let row_bytes = w.div_ceil(8);
    for row in mask.bits().chunks(w) {
        let mut packed = vec![0u8; row_bytes];
        for (c, &b) in row.iter().enumerate() {
            if b {
                packed[c / 8] |= 0x80 >> (c % 8);
            }
        }
        out.extend_from_slice(&packed);
    }
    debug_assert_eq!(out.len() - format!("P4\n{w} {h}\n").len(), row_bytes * h);
    out
}

/// Parses a packed PBM (P4) written by [`save_pbm`] or any conforming encoder.
pub fn load_pbm(bytes: &[u8]) -> Result<Mask> {
    let mut cur = Cursor::new(bytes);
    if &cur.magic()? != b"P4" {
        return Err(Error::Pgm {
            offset: 0,
            reason: "expected P4 magic".into(),
        });
    }
    let width = cur.uint("width")? as usize;
    let height = cur.uint("height")? as usize;
    if width == 0 || height == 0 {
        return Err(cur.err(format!("zero dimension {width}x{height}")));
    }
    cur.raster_separator()?;
    let row_bytes = width.div_ceil(8);
    let need = row_bytes * height;
    let raster = bytes
        .get(cur.pos..cur.pos + need)
        .ok_or_else(|| Error::Pgm {
            offset: bytes.len(),
            reason: format!(
                "truncated payload: need {need} raster bytes, found {}",
                bytes.len() - cur.pos
            ),
        })?;
    let mut bits = Vec::with_capacity(width * height);
    for row in raster.chunks_exact(row_bytes) {
        for c in 0..width {
            bits.push(row[c / 8] & (0x80 >> (c % 8)) != 0);
        }
    }
    Mask::new(width, height, bits)
}
