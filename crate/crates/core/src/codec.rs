//! PIC1 compressed images: a pixel mask, the quantised values stored on it,
//! and enough header to reconstruct the rest by diffusion inpainting.
//!
//! Byte layout (integers little-endian):
//!
//! | bytes      | content                                   |
//! |------------|-------------------------------------------|
//! | 4          | magic `PIC1`                              |
//! | 1          | format version (1)                        |
//! | 1          | method tag                                |
//! | 1          | reconstruction right-hand side mode       |
//! | 4 + 4      | width, height (u32)                       |
//! | 8          | reconstruction alpha (f64)                |
//! | ceil(N/8)  | mask bits, row-major, MSB first           |
//! | count      | one u8 per set mask bit, row-major order  |

use std::fmt;
use std::str::FromStr;

use crate::criterion::{adjoint_keep_score, h1_criterion, CostMode, CriterionField};
use crate::error::{DecodeError, Error, Result};
use crate::grid::{Field, GridGeometry, Image};
use crate::pnm::quantize;
use crate::select::{select_halftone, select_threshold, Budget};
use crate::solver::{
    solve_laplace_masked, solve_masked_from, solve_masked_with_stats, Mask, SolveParams,
};

pub const MAGIC: &[u8; 4] = b"PIC1";
pub const FORMAT_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 4 + 1 + 1 + 1 + 4 + 4 + 8;

/// Criterion + selection strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Adjoint keep-score, hard threshold.
    AdjT,
    /// Adjoint keep-score, halftoned.
    AdjH,
    /// `|lap f|`, hard threshold.
    H1T,
    /// `|lap f|`, halftoned.
    H1H,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::AdjT, Method::AdjH, Method::H1T, Method::H1H];

    pub fn tag(self) -> u8 {
        match self {
            Method::AdjT => 0,
            Method::AdjH => 1,
            Method::H1T => 2,
            Method::H1H => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.tag() == tag)
    }

    pub fn is_adjoint(self) -> bool {
        matches!(self, Method::AdjT | Method::AdjH)
    }

    pub fn is_halftone(self) -> bool {
        matches!(self, Method::AdjH | Method::H1H)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::AdjT => "adj-t",
            Method::AdjH => "adj-h",
            Method::H1T => "h1-t",
            Method::H1H => "h1-h",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown method {s:?} (expected adj-t, adj-h, h1-t or h1-h)"
                ))
            })
    }
}

/// Right-hand side used off the mask at decode time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ReconRhsMode {
    /// `-alpha lap u + u = 0`.
    #[default]
    HomogeneousZero,
    /// `-alpha lap u + u = nearest stored value`.
    NnExtend,
    /// `lap u = 0`; alpha is ignored.
    Harmonic,
}

impl ReconRhsMode {
    pub const ALL: [ReconRhsMode; 3] = [
        ReconRhsMode::HomogeneousZero,
        ReconRhsMode::NnExtend,
        ReconRhsMode::Harmonic,
    ];

    pub fn tag(self) -> u8 {
        match self {
            ReconRhsMode::HomogeneousZero => 0,
            ReconRhsMode::NnExtend => 1,
            ReconRhsMode::Harmonic => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            ReconRhsMode::HomogeneousZero => "zero",
            ReconRhsMode::NnExtend => "nn",
            ReconRhsMode::Harmonic => "harmonic",
        }
    }
}

impl fmt::Display for ReconRhsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReconRhsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown rhs mode {s:?} (expected zero, nn or harmonic)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedImage {
    pub width: usize,
    pub height: usize,
    pub alpha_recon: f64,
    pub method: Method,
    pub rhs_mode: ReconRhsMode,
    pub mask: Mask,
    /// 8-bit samples for the set mask bits, row-major.
    pub values: Vec<u8>,
}

impl CompressedImage {
    pub fn validate(&self) -> Result<()> {
        if self.mask.width() != self.width || self.mask.height() != self.height {
            return Err(Error::InvalidParameter(
                "mask dimensions disagree with header".into(),
            ));
        }
        if self.values.len() != self.mask.count() {
            return Err(Error::InvalidParameter(format!(
                "{} stored values for {} mask pixels",
                self.values.len(),
                self.mask.count()
            )));
        }
        if self.rhs_mode != ReconRhsMode::Harmonic && !(self.alpha_recon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "reconstruction alpha must be positive, got {}",
                self.alpha_recon
            )));
        }
        if u32::try_from(self.width).is_err() || u32::try_from(self.height).is_err() {
            return Err(Error::InvalidParameter("dimensions exceed u32".into()));
        }
        Ok(())
    }

    /// Stored values expanded to a full field (zero off the mask).
    pub fn dirichlet_field(&self) -> Field {
        let mut data = vec![0.0; self.width * self.height];
        for (i, &q) in self.mask.indices().iter().zip(&self.values) {
            data[*i] = q as f64 / 255.0;
        }
        Field::new(self.width, self.height, data).expect("validated dimensions")
    }
}

/// Criterion used by `method` on `f` at diffusion weight `params.alpha`.
pub fn method_criterion(
    f: &Image,
    method: Method,
    mode: CostMode,
    params: &SolveParams,
    geom: &GridGeometry,
) -> Result<CriterionField> {
    if method.is_adjoint() {
        adjoint_keep_score(f, mode, params, geom)
    } else {
        h1_criterion(f, geom)
    }
}

/// Mask selected by `method` on `f`.
pub fn select_mask(
    f: &Image,
    method: Method,
    mode: CostMode,
    budget: Budget,
    params: &SolveParams,
) -> Result<Mask> {
    let geom = f.geometry()?;
    let crit = method_criterion(f, method, mode, params, &geom)?;
    Ok(if method.is_halftone() {
        select_halftone(&crit, budget)
    } else {
        select_threshold(&crit, budget)
    })
}

/// Stores the quantised samples of `f` on a precomputed mask.
pub fn encode_with_mask(
    f: &Image,
    mask: Mask,
    method: Method,
    alpha_recon: f64,
    rhs_mode: ReconRhsMode,
) -> Result<CompressedImage> {
    let values = mask
        .indices()
        .iter()
        .map(|&i| quantize(f.data()[i], 255) as u8)
        .collect();
    let c = CompressedImage {
        width: f.width(),
        height: f.height(),
        alpha_recon,
        method,
        rhs_mode,
        mask,
        values,
    };
    c.validate()?;
    Ok(c)
}

/// Selects a mask on `f_input` at diffusion weight `alpha_select` and stores
/// the quantised samples there. The same alpha is embedded for decoding.
pub fn compress(
    f_input: &Image,
    method: Method,
    mode: CostMode,
    budget: Budget,
    alpha_select: f64,
    rhs_mode: ReconRhsMode,
    params: &SolveParams,
) -> Result<CompressedImage> {
    if !(alpha_select > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "selection alpha must be positive, got {alpha_select}"
        )));
    }
    let params = params.with_alpha(alpha_select);
    let mask = select_mask(f_input, method, mode, budget, &params)?;
    encode_with_mask(f_input, mask, method, alpha_select, rhs_mode)
}

/// For every pixel, the value of the nearest mask pixel (Euclidean distance,
/// ties to the smaller row-major index).
pub fn nearest_extension(mask: &Mask, values: &Field) -> Result<Field> {
    let (w, h) = (mask.width(), mask.height());
    if mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    let bits = mask.bits();
    let mut out = vec![0.0; w * h];
    for (p, o) in out.iter_mut().enumerate() {
        if bits[p] {
            *o = values.data()[p];
            continue;
        }
        let (pc, pr) = ((p % w) as isize, (p / w) as isize);
        let mut best: Option<(isize, usize)> = None;
        let mut ring = 1isize;
        loop {
            if let Some((d2, _)) = best {
                // Every pixel on ring r is at distance >= r.
                if ring * ring > d2 {
                    break;
                }
            }
            if ring > w.max(h) as isize {
                break;
            }
            for dr in -ring..=ring {
                let row = pr + dr;
                if row < 0 || row >= h as isize {
                    continue;
                }
                let step = if dr.abs() == ring { 1 } else { 2 * ring };
                let mut dc = -ring;
                while dc <= ring {
                    let col = pc + dc;
                    if col >= 0 && col < w as isize {
                        let q = row as usize * w + col as usize;
                        if bits[q] {
                            let d2 = dr * dr + dc * dc;
                            let better = match best {
                                None => true,
                                Some((bd, bq)) => d2 < bd || (d2 == bd && q < bq),
                            };
                            if better {
                                best = Some((d2, q));
                            }
                        }
                    }
                    dc += step;
                }
            }
            ring += 1;
        }
        let (_, q) = best.expect("mask is non-empty");
        *o = values.data()[q];
    }
    Field::new(w, h, out)
}

/// Reconstructs the image with the mode stored in `c`.
pub fn decompress(c: &CompressedImage, params: &SolveParams) -> Result<Image> {
    decompress_with(c, c.rhs_mode, params)
}

/// Reconstructs the image, overriding the embedded right-hand side mode.
pub fn decompress_with(
    c: &CompressedImage,
    rhs_mode: ReconRhsMode,
    params: &SolveParams,
) -> Result<Image> {
    c.validate()?;
    if c.values.is_empty() {
        return Err(Error::EmptyMask);
    }
    let dirichlet = c.dirichlet_field();
    reconstruct(&c.mask, &dirichlet, rhs_mode, c.alpha_recon, params).map(|u| {
        let mut img = Image::from_field_clamped(&u);
        // Stored pixels are reproduced exactly, independent of solver round-off.
        img = Image::new(
            img.width(),
            img.height(),
            img.data()
                .iter()
                .zip(c.mask.bits())
                .zip(dirichlet.data())
                .map(|((&v, &k), &d)| if k { d } else { v })
                .collect(),
        )
        .expect("clamped data stays in range");
        img
    })
}

/// Inpaints from `dirichlet` on `mask` under the given right-hand side mode.
pub fn reconstruct(
    mask: &Mask,
    dirichlet: &Field,
    rhs_mode: ReconRhsMode,
    alpha: f64,
    params: &SolveParams,
) -> Result<Field> {
    let geom = GridGeometry::unit_square(mask.width(), mask.height())?;
    if mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    let params = params.with_alpha(alpha);
    let (u, _) = match rhs_mode {
        ReconRhsMode::HomogeneousZero => {
            let rhs = Field::zeros(mask.width(), mask.height());
            solve_masked_with_stats(&rhs, mask, dirichlet, &params, &geom)?
        }
        // The nearest-neighbour extension doubles as the initial guess, so
        // constant data is reproduced without iterating.
        ReconRhsMode::NnExtend => {
            let rhs = nearest_extension(mask, dirichlet)?;
            solve_masked_from(&rhs, mask, dirichlet, &rhs, &params, &geom)?
        }
        ReconRhsMode::Harmonic => {
            let guess = nearest_extension(mask, dirichlet)?;
            solve_laplace_masked(mask, dirichlet, Some(&guess), &params, &geom)?
        }
    };
    Ok(u)
}

pub fn encoded_len(width: usize, height: usize, stored: usize) -> usize {
    HEADER_LEN + (width * height).div_ceil(8) + stored
}

pub fn encode_bytes(c: &CompressedImage) -> Result<Vec<u8>> {
    c.validate()?;
    let n = c.width * c.height;
    let mut out = Vec::with_capacity(encoded_len(c.width, c.height, c.values.len()));
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.push(c.method.tag());
    out.push(c.rhs_mode.tag());
    out.extend_from_slice(&(c.width as u32).to_le_bytes());
    out.extend_from_slice(&(c.height as u32).to_le_bytes());
    out.extend_from_slice(&c.alpha_recon.to_le_bytes());
    let mut packed = vec![0u8; n.div_ceil(8)];
    for (i, &b) in c.mask.bits().iter().enumerate() {
        if b {
            packed[i / 8] |= 0x80 >> (i % 8);
        }
    }
    out.extend_from_slice(&packed);
    out.extend_from_slice(&c.values);
    Ok(out)
}

pub fn decode_bytes(bytes: &[u8]) -> std::result::Result<CompressedImage, DecodeError> {
    if bytes.len() < 4 {
        return Err(DecodeError::Length {
            expected: HEADER_LEN,
            got: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("length checked");
    if &magic != MAGIC {
        return Err(DecodeError::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(DecodeError::Length {
            expected: HEADER_LEN,
            got: bytes.len(),
        });
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(DecodeError::Version(bytes[4]));
    }
    let method = Method::from_tag(bytes[5]).ok_or(DecodeError::UnknownTag {
        field: "method",
        value: bytes[5],
    })?;
    let rhs_mode = ReconRhsMode::from_tag(bytes[6]).ok_or(DecodeError::UnknownTag {
        field: "rhs_mode",
        value: bytes[6],
    })?;
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("in header"));
    let width = u32_at(7) as usize;
    let height = u32_at(11) as usize;
    let alpha_recon = f64::from_le_bytes(bytes[15..23].try_into().expect("in header"));
    if width == 0 || height == 0 {
        return Err(DecodeError::Header(format!(
            "zero dimension {width}x{height}"
        )));
    }
    if rhs_mode != ReconRhsMode::Harmonic && !(alpha_recon > 0.0) {
        return Err(DecodeError::Header(format!(
            "reconstruction alpha must be positive, got {alpha_recon}"
        )));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| DecodeError::Header("dimensions overflow".into()))?;
    let mask_len = n.div_ceil(8);
    let mask_bytes = bytes
        .get(HEADER_LEN..HEADER_LEN + mask_len)
        .ok_or(DecodeError::Length {
            expected: HEADER_LEN + mask_len,
            got: bytes.len(),
        })?;
    let bits: Vec<bool> = (0..n)
        .map(|i| mask_bytes[i / 8] & (0x80 >> (i % 8)) != 0)
        .collect();
    if n % 8 != 0 && mask_bytes[mask_len - 1] & (0xff >> (n % 8)) != 0 {
        return Err(DecodeError::Header("padding bits set in mask".into()));
    }
    let stored = bits.iter().filter(|&&b| b).count();
    let expected = HEADER_LEN + mask_len + stored;
    if bytes.len() != expected {
        return Err(DecodeError::Length {
            expected,
            got: bytes.len(),
        });
    }
    Ok(CompressedImage {
        width,
        height,
        alpha_recon,
        method,
        rhs_mode,
        mask: Mask::new(width, height, bits).expect("bit count matches"),
        values: bytes[HEADER_LEN + mask_len..].to_vec(),
    })
}
