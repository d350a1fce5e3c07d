//! Noise models, Lp errors, and the alpha-search / table harness used to
//! compare selection methods.
//!
//! All randomness comes from xoshiro256++ seeded with `NoiseSpec::seed`;
//! Gaussian samples use the Box-Muller transform. Given the same inputs, the
//! harness output is byte-identical on every platform and thread count.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand_xoshiro::rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;

use crate::codec::{compress, decompress_with, Method, ReconRhsMode};
use crate::criterion::CostMode;
use crate::error::{Error, Result};
use crate::grid::Image;
use crate::select::Budget;
use crate::solver::{Mask, SolveParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    None,
    SaltPepper { salt: f64, pepper: f64 },
    Gaussian { sigma: f64 },
}

impl NoiseKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseKind::None => Ok(()),
            NoiseKind::SaltPepper { salt, pepper } => {
                if !(0.0..=1.0).contains(&salt)
                    || !(0.0..=1.0).contains(&pepper)
                    || salt + pepper > 1.0
                {
                    return Err(Error::InvalidParameter(format!(
                        "salt/pepper probabilities ({salt}, {pepper}) must be in [0,1] and sum to at most 1"
                    )));
                }
                Ok(())
            }
            NoiseKind::Gaussian { sigma } => {
                if !(sigma >= 0.0) || !sigma.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "gaussian deviation must be non-negative, got {sigma}"
                    )));
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseKind::None => f.write_str("none"),
            NoiseKind::SaltPepper { salt, pepper } => write!(f, "sp:{salt},{pepper}"),
            NoiseKind::Gaussian { sigma } => write!(f, "gauss:{sigma}"),
        }
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    /// Accepts `none`, `sp:<salt>,<pepper>` and `gauss:<sigma>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::InvalidParameter(format!(
                "bad noise spec {s:?} (expected none, sp:<salt>,<pepper> or gauss:<sigma>)"
            ))
        };
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        let kind = if s == "none" {
            NoiseKind::None
        } else if let Some(rest) = s.strip_prefix("sp:") {
            let (a, b) = rest.split_once(',').ok_or_else(bad)?;
            NoiseKind::SaltPepper {
                salt: num(a)?,
                pepper: num(b)?,
            }
        } else if let Some(rest) = s.strip_prefix("gauss:") {
            NoiseKind::Gaussian { sigma: num(rest)? }
        } else {
            return Err(bad());
        };
        kind.validate()?;
        Ok(kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, seed: u64) -> Self {
        Self { kind, seed }
    }

    pub fn apply(&self, img: &Image) -> Result<Image> {
        match self.kind {
            NoiseKind::None => Ok(img.clone()),
            NoiseKind::SaltPepper { .. } => add_salt_pepper(img, self),
            NoiseKind::Gaussian { .. } => add_gaussian(img, self),
        }
    }
}

fn unit_f64(rng: &mut Xoshiro256PlusPlus) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Each pixel independently becomes 1 with probability `salt`, 0 with
/// probability `pepper`, and is left alone otherwise.
pub fn add_salt_pepper(img: &Image, spec: &NoiseSpec) -> Result<Image> {
    let NoiseKind::SaltPepper { salt, pepper } = spec.kind else {
        return Err(Error::InvalidParameter(format!(
            "expected salt-and-pepper noise, got {}",
            spec.kind
        )));
    };
    spec.kind.validate()?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);
    let data = img
        .data()
        .iter()
        .map(|&v| {
            let u = unit_f64(&mut rng);
            if u < salt {
                1.0
            } else if u < salt + pepper {
                0.0
            } else {
                v
            }
        })
        .collect();
    Image::new(img.width(), img.height(), data)
}

/// Adds i.i.d. `N(0, sigma^2)` samples and clamps to `[0, 1]`.
pub fn add_gaussian(img: &Image, spec: &NoiseSpec) -> Result<Image> {
    let NoiseKind::Gaussian { sigma } = spec.kind else {
        return Err(Error::InvalidParameter(format!(
            "expected gaussian noise, got {}",
            spec.kind
        )));
    };
    spec.kind.validate()?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);
    let mut spare: Option<f64> = None;
    let mut normal = move || {
        if let Some(z) = spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the logarithm finite.
        let u1 = 1.0 - unit_f64(&mut rng);
        let u2 = unit_f64(&mut rng);
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        spare = Some(radius * angle.sin());
        radius * angle.cos()
    };
    let data = img
        .data()
        .iter()
        .map(|&v| (v + sigma * normal()).clamp(0.0, 1.0))
        .collect();
    Image::new(img.width(), img.height(), data)
}

/// Pixels whose value differs between `clean` and `noisy`.
pub fn corruption_mask(clean: &Image, noisy: &Image) -> Result<Mask> {
    check_same(clean, noisy)?;
    let bits = clean
        .data()
        .iter()
        .zip(noisy.data())
        .map(|(a, b)| a != b)
        .collect();
    Mask::new(clean.width(), clean.height(), bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LpNorm {
    L1,
    L2,
}

impl LpNorm {
    pub fn for_cost(mode: CostMode) -> Self {
        match mode {
            CostMode::L2 => LpNorm::L2,
            CostMode::L1Regularized { .. } => LpNorm::L1,
        }
    }
}

fn check_same(a: &Image, b: &Image) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::DimensionMismatch {
            expected_w: a.width(),
            expected_h: a.height(),
            got_w: b.width(),
            got_h: b.height(),
        });
    }
    Ok(())
}

/// Unweighted pixel-sum Lp distance on `[0, 1]` intensities.
pub fn lp_error(f: &Image, u: &Image, p: LpNorm) -> Result<f64> {
    check_same(f, u)?;
    let diffs = f.data().iter().zip(u.data()).map(|(a, b)| a - b);
    Ok(match p {
        LpNorm::L1 => diffs.map(f64::abs).sum(),
        LpNorm::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
    })
}

/// `count` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let ratio = (hi / lo).ln();
            (0..count)
                .map(|k| {
                    if k + 1 == count {
                        hi
                    } else {
                        lo * (ratio * k as f64 / (count - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

/// 40 log-spaced weights covering `[0.01, 5.5]`.
pub fn default_alpha_grid() -> Vec<f64> {
    log_grid(0.01, 5.5, 40)
}

/// What one harness cell compresses and how it is scored.
#[derive(Debug, Clone, Copy)]
pub struct CellSpec {
    pub method: Method,
    pub mode: CostMode,
    pub budget: Budget,
    pub rhs_mode: ReconRhsMode,
}

/// Error of compressing `f_input` at one alpha and decoding at the same alpha.
pub fn evaluate_alpha(
    f_clean: &Image,
    f_input: &Image,
    cell: &CellSpec,
    alpha: f64,
    params: &SolveParams,
) -> Result<f64> {
    let c = compress(
        f_input,
        cell.method,
        cell.mode,
        cell.budget,
        alpha,
        cell.rhs_mode,
        params,
    )?;
    let u = decompress_with(&c, cell.rhs_mode, params)?;
    lp_error(f_clean, &u, LpNorm::for_cost(cell.mode))
}

/// Returns `(alpha, error)` minimising the Lp error against `f_clean`; ties
/// go to the smaller alpha.
pub fn alpha_search(
    f_clean: &Image,
    f_input: &Image,
    cell: &CellSpec,
    alpha_grid: &[f64],
    params: &SolveParams,
) -> Result<(f64, f64)> {
    if alpha_grid.is_empty() {
        return Err(Error::InvalidParameter("alpha grid is empty".into()));
    }
    if let Some(a) = alpha_grid.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "alpha grid values must be positive, got {a}"
        )));
    }
    let errors = alpha_grid
        .par_iter()
        .map(|&a| evaluate_alpha(f_clean, f_input, cell, a, params).map(|e| (a, e)))
        .collect::<Result<Vec<_>>>()?;
    Ok(errors
        .into_iter()
        .min_by(|x, y| x.1.total_cmp(&y.1).then(x.0.total_cmp(&y.0)))
        .expect("grid is non-empty"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub noise: String,
    pub method: Method,
    pub budget: f64,
    pub alpha: f64,
    pub error: f64,
    pub rhs_mode: ReconRhsMode,
}

/// Harness configuration shared by every row of a table.
#[derive(Debug, Clone)]
pub struct TableConfig {
    pub noises: Vec<NoiseSpec>,
    pub methods: Vec<Method>,
    pub budgets: Vec<Budget>,
    pub mode: CostMode,
    pub alpha_grid: Vec<f64>,
    pub rhs_mode: ReconRhsMode,
    pub params: SolveParams,
}

/// Evaluates the full noise x budget x method cross product.
///
/// Rows come out noise-major, then budget, then method, whatever order the
/// parallel workers finish in.
pub fn run_table(f_clean: &Image, cfg: &TableConfig) -> Result<Vec<ExperimentRow>> {
    let noisy = cfg
        .noises
        .iter()
        .map(|n| n.apply(f_clean))
        .collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::new();
    for (ni, noise) in cfg.noises.iter().enumerate() {
        for &budget in &cfg.budgets {
            for &method in &cfg.methods {
                cells.push((ni, noise, budget, method));
            }
        }
    }
    cells
        .par_iter()
        .map(|&(ni, noise, budget, method)| {
            let cell = CellSpec {
                method,
                mode: cfg.mode,
                budget,
                rhs_mode: cfg.rhs_mode,
            };
            let (alpha, error) =
                alpha_search(f_clean, &noisy[ni], &cell, &cfg.alpha_grid, &cfg.params)?;
            Ok(ExperimentRow {
                noise: noise.kind.to_string(),
                method,
                budget: budget.fraction(),
                alpha,
                error,
                rhs_mode: cfg.rhs_mode,
            })
        })
        .collect()
}

/// `%g`-style formatting with six significant digits.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim(mantissa))
    }
}

pub const CSV_HEADER: [&str; 5] = ["noise", "method", "budget", "alpha", "error"];

pub fn write_csv<W: Write>(rows: &[ExperimentRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.noise.clone(),
            r.method.to_string(),
            format_sig6(r.budget),
            format_sig6(r.alpha),
            format_sig6(r.error),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(rows: &[ExperimentRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}
