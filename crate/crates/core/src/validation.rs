//! Independent checks of the criterion's mathematics.
//!
//! * Modified Bessel functions `K0`, `K1` and the radial fundamental solution
//!   `E(r) = K0(r / sqrt(alpha)) / (2 pi)` of `-alpha lap + id` in the plane.
//! * A brute-force oracle that inserts one pixel into the mask, reconstructs,
//!   and measures the exact change of the cost. Its ranking of pixels is
//!   compared against the adjoint keep-score.

use std::f64::consts::PI;

use rand_xoshiro::rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;

use crate::codec::{reconstruct, ReconRhsMode};
use crate::criterion::{g_value, masked_keep_score, CostMode, CriterionField};
use crate::error::{Error, Result};
use crate::grid::{apply_helmholtz, Field, GridGeometry, Image};
use crate::select::{select_halftone, Budget};
use crate::solver::{solve_masked, Mask, SolveParams};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Upper end of the power-series branch.
pub const BESSEL_SERIES_MAX: f64 = 2.0;
/// Lower end of the asymptotic-expansion branch. Between the two switch
/// points Steed's continued fraction is used.
pub const BESSEL_ASYMPTOTIC_MIN: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesselEval {
    pub z: f64,
    pub k0: f64,
    pub k1: f64,
}

fn check_z(z: f64) -> Result<()> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::Domain(format!("K0/K1 need finite z > 0, got {z}")));
    }
    Ok(())
}

fn bessel_k_series(z: f64) -> (f64, f64) {
    let y = 0.25 * z * z;
    let log_term = (0.5 * z).ln() + EULER_GAMMA;

    // K0 = -(ln(z/2) + gamma) I0 + sum y^k / (k!)^2 H_k
    // K1 = 1/z + ln(z/2) I1 - (z/4) sum [psi(k+1) + psi(k+2)] y^k / (k! (k+1)!)
    let mut t0 = 1.0; // y^k / (k!)^2
    let mut t1 = 1.0; // y^k / (k! (k+1)!)
    let mut harmonic = 0.0;
    let mut i0 = 0.0;
    let mut i1_sum = 0.0;
    let mut k0_sum = 0.0;
    let mut k1_sum = 0.0;
    for k in 0..200 {
        let kf = k as f64;
        if k > 0 {
            harmonic += 1.0 / kf;
            t0 *= y / (kf * kf);
            t1 *= y / (kf * (kf + 1.0));
        }
        let psi_k1 = -EULER_GAMMA + harmonic;
        let psi_k2 = psi_k1 + 1.0 / (kf + 1.0);
        i0 += t0;
        i1_sum += t1;
        k0_sum += t0 * harmonic;
        k1_sum += t1 * (psi_k1 + psi_k2);
        if t0 < 1e-18 * i0 && t1 < 1e-18 * i1_sum {
            break;
        }
    }
    let i1 = 0.5 * z * i1_sum;
    let k0 = -log_term * i0 + k0_sum;
    let k1 = 1.0 / z + (0.5 * z).ln() * i1 - 0.25 * z * k1_sum;
    (k0, k1)
}

/// Steed's method on the second continued fraction for `K0`, `K1`.
fn bessel_k_continued_fraction(z: f64) -> (f64, f64) {
    let mut b = 2.0 * (1.0 + z);
    let mut d = 1.0 / b;
    let mut h = d;
    let mut delh = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let a1 = 0.25;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 1..10_000 {
        let fi = i as f64;
        a -= 2.0 * fi;
        c = -a * c / (fi + 1.0);
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh *= b * d - 1.0;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < 1e-17 {
            break;
        }
    }
    h *= a1;
    let k0 = (PI / (2.0 * z)).sqrt() * (-z).exp() / s;
    let k1 = k0 * (z + 0.5 - h) / z;
    (k0, k1)
}

/// Large-argument expansion `K_nu(z) ~ sqrt(pi / 2z) e^-z sum a_k(nu) / z^k`,
/// truncated before the terms start growing.
fn bessel_k_asymptotic(z: f64) -> (f64, f64) {
    let series = |nu: f64| {
        let mu = 4.0 * nu * nu;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..60 {
            let odd = (2 * k - 1) as f64;
            let next = term * (mu - odd * odd) / (k as f64 * 8.0 * z);
            if next.abs() >= term.abs() {
                break;
            }
            term = next;
            sum += term;
            if term.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        sum
    };
    let pre = (PI / (2.0 * z)).sqrt() * (-z).exp();
    (pre * series(0.0), pre * series(1.0))
}

/// `K0(z)` and `K1(z)` for `z > 0`.
pub fn bessel_k(z: f64) -> Result<BesselEval> {
    check_z(z)?;
    let (k0, k1) = if z <= BESSEL_SERIES_MAX {
        bessel_k_series(z)
    } else if z < BESSEL_ASYMPTOTIC_MIN {
        bessel_k_continued_fraction(z)
    } else {
        bessel_k_asymptotic(z)
    };
    Ok(BesselEval { z, k0, k1 })
}

/// `K_nu(z) = int_0^inf exp(-z cosh t) cosh(nu t) dt` by the trapezoidal rule.
///
/// The integrand is analytic and decays doubly exponentially, so the
/// trapezoidal rule converges geometrically in the step; this is an
/// independent reference for [`bessel_k`].
pub fn bessel_k_quadrature(nu: f64, z: f64) -> Result<f64> {
    check_z(z)?;
    let step = 1.0 / 64.0;
    let integrand = |t: f64| (-z * t.cosh()).exp() * (nu * t).cosh();
    let mut sum = 0.5 * integrand(0.0);
    let mut k = 1;
    loop {
        let t = k as f64 * step;
        let v = integrand(t);
        sum += v;
        if v < 1e-20 * sum && z * t.cosh() > 1.0 {
            break;
        }
        k += 1;
    }
    Ok(sum * step)
}

/// Radial fundamental solution of `-alpha lap + id` in the plane.
pub fn fundamental_solution(r: f64, alpha: f64) -> Result<f64> {
    if !(r > 0.0) || !(alpha > 0.0) {
        return Err(Error::Domain(format!(
            "fundamental solution needs r > 0 and alpha > 0, got r={r}, alpha={alpha}"
        )));
    }
    Ok(bessel_k(r / alpha.sqrt())?.k0 / (2.0 * PI))
}

/// `1 / E(1) = 2 pi / K0(alpha^-1/2)`, the positive factor relating the cost
/// variation to `v0 w0`.
pub fn expansion_constant(alpha: f64) -> Result<f64> {
    Ok(1.0 / fundamental_solution(1.0, alpha)?)
}

/// Maximum of `|(-alpha lap_h + id) E|` over cells with
/// `r_inner <= r <= r_outer` on an `n x n` grid of the square centred at the
/// origin. `E` solves the homogeneous equation there, so this is pure
/// truncation error.
pub fn fundamental_residual(alpha: f64, n: usize, r_inner: f64, r_outer: f64) -> Result<f64> {
    let geom = GridGeometry::unit_square(n, n)?;
    let h = geom.spacing();
    let coord = |i: usize| (i as f64 + 0.5) * h - 0.5;
    let data: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (coord(i % n), coord(i / n));
            fundamental_solution((x * x + y * y).sqrt(), alpha)
        })
        .collect::<Result<_>>()?;
    let e = Field::new(n, n, data)?;
    let res = apply_helmholtz(&e, alpha, &geom)?;
    Ok((0..n * n)
        .into_par_iter()
        .filter_map(|i| {
            let (x, y) = (coord(i % n), coord(i / n));
            let r = (x * x + y * y).sqrt();
            (r_inner..=r_outer)
                .contains(&r)
                .then(|| res.data()[i].abs())
        })
        .reduce(|| 0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementStudy {
    pub sizes: Vec<usize>,
    pub residuals: Vec<f64>,
    /// `log2` of successive residual ratios.
    pub orders: Vec<f64>,
}

pub fn fundamental_refinement(alpha: f64, sizes: &[usize]) -> Result<RefinementStudy> {
    let residuals = sizes
        .iter()
        .map(|&n| fundamental_residual(alpha, n, 0.1, 0.4))
        .collect::<Result<Vec<_>>>()?;
    let orders = sizes
        .windows(2)
        .zip(residuals.windows(2))
        .map(|(s, r)| (r[0] / r[1]).ln() / (s[1] as f64 / s[0] as f64).ln())
        .collect();
    Ok(RefinementStudy {
        sizes: sizes.to_vec(),
        residuals,
        orders,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BesselSweep {
    pub points: usize,
    pub max_rel_err_k0: f64,
    pub max_rel_err_k1: f64,
    pub positive_decreasing: bool,
}

/// Compares [`bessel_k`] with the quadrature reference on a log grid over
/// `[1e-3, 50]` and checks positivity, monotonicity and `K1 > K0`.
pub fn bessel_sweep(points: usize) -> Result<BesselSweep> {
    let zs: Vec<f64> = (0..points)
        .map(|k| 1e-3 * (50.0f64 / 1e-3).powf(k as f64 / (points - 1).max(1) as f64))
        .collect();
    let evals = zs
        .par_iter()
        .map(|&z| {
            let b = bessel_k(z)?;
            let q0 = bessel_k_quadrature(0.0, z)?;
            let q1 = bessel_k_quadrature(1.0, z)?;
            Ok((b, ((b.k0 - q0) / q0).abs(), ((b.k1 - q1) / q1).abs()))
        })
        .collect::<Result<Vec<_>>>()?;
    let positive_decreasing = evals.iter().all(|(b, _, _)| b.k0 > 0.0 && b.k1 > b.k0)
        && evals
            .windows(2)
            .all(|w| w[1].0.k0 < w[0].0.k0 && w[1].0.k1 < w[0].0.k1);
    Ok(BesselSweep {
        points,
        max_rel_err_k0: evals.iter().map(|e| e.1).fold(0.0, f64::max),
        max_rel_err_k1: evals.iter().map(|e| e.2).fold(0.0, f64::max),
        positive_decreasing,
    })
}

/// Inpainting problem whose cost the oracle differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceProblem {
    /// `u - alpha lap u = f` off the mask, `u = f` on it: the problem whose
    /// topological expansion yields the keep-score.
    Model,
    /// The decoder's reconstruction with exact (unquantised) mask data.
    Decoder(ReconRhsMode),
}

fn reconstruct_reference(
    f: &Image,
    mask: &Mask,
    alpha: f64,
    reference: ReferenceProblem,
    params: &SolveParams,
) -> Result<Field> {
    let ff = f.to_field();
    match reference {
        ReferenceProblem::Model => {
            let geom = f.geometry()?;
            solve_masked(&ff, mask, &ff, &params.with_alpha(alpha), &geom)
        }
        ReferenceProblem::Decoder(mode) => reconstruct(mask, &ff, mode, alpha, params),
    }
}

/// `sum g(u_K - f)` for the reconstruction from `mask`.
pub fn reconstruction_cost(
    f: &Image,
    mask: &Mask,
    mode: CostMode,
    alpha: f64,
    reference: ReferenceProblem,
    params: &SolveParams,
) -> Result<f64> {
    let u = reconstruct_reference(f, mask, alpha, reference, params)?;
    Ok(u.data()
        .iter()
        .zip(f.data())
        .map(|(u, f)| g_value(u - f, mode))
        .sum())
}

/// Exact cost change `J(K + x0) - J(K)` from adding pixel `x0` to the mask.
pub fn brute_force_delta_j(
    f: &Image,
    mask: &Mask,
    x0: usize,
    mode: CostMode,
    alpha: f64,
    reference: ReferenceProblem,
    params: &SolveParams,
) -> Result<f64> {
    let base = reconstruction_cost(f, mask, mode, alpha, reference, params)?;
    delta_j_from_base(f, mask, x0, base, mode, alpha, reference, params)
}

#[allow(clippy::too_many_arguments)]
fn delta_j_from_base(
    f: &Image,
    mask: &Mask,
    x0: usize,
    base: f64,
    mode: CostMode,
    alpha: f64,
    reference: ReferenceProblem,
    params: &SolveParams,
) -> Result<f64> {
    if x0 >= mask.len() {
        return Err(Error::InvalidParameter(format!(
            "pixel {x0} outside the grid"
        )));
    }
    if mask.get(x0) {
        return Err(Error::InvalidParameter(format!(
            "pixel {x0} is already in the mask"
        )));
    }
    let mut grown = mask.clone();
    grown.set(x0, true);
    Ok(reconstruction_cost(f, &grown, mode, alpha, reference, params)? - base)
}

/// Agreement between the oracle and a keep-score on a pixel sample.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub pixels: Vec<usize>,
    /// Exact cost change for each sampled pixel.
    pub delta_j: Vec<f64>,
    /// Keep-score for each sampled pixel.
    pub keep_scores: Vec<f64>,
    /// Spearman correlation of keep-score with `-delta_j`; `None` when degenerate.
    pub spearman: Option<f64>,
    /// Overlap of the top `k = n / 5` pixels under both orderings.
    pub top_k_overlap: Option<f64>,
    pub top_k: usize,
    /// Either ranking is constant, so no correlation is defined.
    pub degenerate: bool,
}

impl OracleReport {
    pub fn from_scores(pixels: Vec<usize>, delta_j: Vec<f64>, keep_scores: Vec<f64>) -> Self {
        let n = pixels.len();
        let top_k = (n / 5).max(1);
        let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
        let degenerate = n < 2 || constant(&delta_j) || constant(&keep_scores);
        let gain: Vec<f64> = delta_j.iter().map(|d| -d).collect();
        let (spearman, top_k_overlap) = if degenerate {
            (None, None)
        } else {
            (
                Some(spearman(&keep_scores, &gain)),
                Some(top_k_overlap(&keep_scores, &gain, top_k)),
            )
        };
        Self {
            pixels,
            delta_j,
            keep_scores,
            spearman,
            top_k_overlap,
            top_k,
            degenerate,
        }
    }

    /// Cost change at the sampled pixel with the largest keep-score.
    pub fn best_pixel_delta_j(&self) -> Option<f64> {
        let best = (0..self.pixels.len()).min_by(|&a, &b| {
            self.keep_scores[b]
                .total_cmp(&self.keep_scores[a])
                .then(self.pixels[a].cmp(&self.pixels[b]))
        })?;
        Some(self.delta_j[best])
    }
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

fn top_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

pub fn top_k_overlap(a: &[f64], b: &[f64], k: usize) -> f64 {
    let ta = top_indices(a, k);
    let tb = top_indices(b, k);
    ta.iter().filter(|i| tb.contains(i)).count() as f64 / k as f64
}

/// Stratified sample of `count` pixels outside `mask`: free pixels are sorted
/// by criterion, cut into `count` equal strata, and one pixel is drawn from
/// each.
pub fn stratified_sample(
    criterion: &CriterionField,
    mask: &Mask,
    count: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let values = criterion.values.data();
    let mut free: Vec<usize> = (0..values.len()).filter(|&i| !mask.get(i)).collect();
    if count == 0 || count > free.len() {
        return Err(Error::InvalidParameter(format!(
            "cannot draw {count} samples from {} free pixels",
            free.len()
        )));
    }
    free.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    Ok((0..count)
        .map(|s| {
            let lo = s * free.len() / count;
            let hi = (s + 1) * free.len() / count;
            free[lo + (rng.next_u64() % (hi - lo) as u64) as usize]
        })
        .collect())
}

/// Oracle cost changes for `pixels`, evaluated in parallel and reported in
/// input order.
pub fn oracle_delta_j(
    f: &Image,
    mask: &Mask,
    pixels: &[usize],
    mode: CostMode,
    alpha: f64,
    reference: ReferenceProblem,
    params: &SolveParams,
) -> Result<Vec<f64>> {
    let base = reconstruction_cost(f, mask, mode, alpha, reference, params)?;
    pixels
        .par_iter()
        .map(|&x0| delta_j_from_base(f, mask, x0, base, mode, alpha, reference, params))
        .collect()
}

/// Compares the adjoint keep-score of `f` with the oracle on `sample`.
///
/// The keep-score is taken relative to `mask` (see
/// [`masked_keep_score`]); for an empty mask it is the hole-free `-v0 w0`.
pub fn rank_agreement(
    f: &Image,
    mask: &Mask,
    mode: CostMode,
    alpha: f64,
    reference: ReferenceProblem,
    params: &SolveParams,
    sample: &[usize],
) -> Result<OracleReport> {
    if sample.len() < 10 {
        return Err(Error::InvalidParameter(format!(
            "rank agreement needs at least 10 samples, got {}",
            sample.len()
        )));
    }
    let geom = f.geometry()?;
    let crit = masked_keep_score(f, mask, mode, &params.with_alpha(alpha), &geom)?;
    rank_agreement_with(f, mask, &crit, mode, alpha, reference, params, sample)
}

/// As [`rank_agreement`] with a caller-supplied keep-score.
#[allow(clippy::too_many_arguments)]
pub fn rank_agreement_with(
    f: &Image,
    mask: &Mask,
    keep: &CriterionField,
    mode: CostMode,
    alpha: f64,
    reference: ReferenceProblem,
    params: &SolveParams,
    sample: &[usize],
) -> Result<OracleReport> {
    let delta_j = oracle_delta_j(f, mask, sample, mode, alpha, reference, params)?;
    let keep_scores = sample.iter().map(|&i| keep.values.data()[i]).collect();
    Ok(OracleReport::from_scores(
        sample.to_vec(),
        delta_j,
        keep_scores,
    ))
}

/// Outcome of [`ranking_study`].
#[derive(Debug, Clone, PartialEq)]
pub struct RankingStudy {
    pub seed_mask: Mask,
    pub report: OracleReport,
    /// Free pixel with the largest keep-score relative to the seed mask.
    pub best_pixel: usize,
    /// Oracle cost change from adding `best_pixel` to the seed mask.
    pub best_delta_j: f64,
}

/// Full ranking check on one image.
///
/// A seed mask of `seed_fraction` is halftoned from the hole-free keep-score
/// (or left empty when `seed_fraction` is zero). The keep-score relative to
/// that mask is then compared with the oracle on `samples` stratified pixels,
/// and the globally best free pixel is checked for a cost decrease.
#[allow(clippy::too_many_arguments)]
pub fn ranking_study(
    f: &Image,
    seed_fraction: f64,
    mode: CostMode,
    alpha: f64,
    reference: ReferenceProblem,
    params: &SolveParams,
    samples: usize,
    seed: u64,
) -> Result<RankingStudy> {
    let geom = f.geometry()?;
    let params = params.with_alpha(alpha);
    let seed_mask = if seed_fraction == 0.0 {
        Mask::empty(f.width(), f.height())
    } else {
        let hole_free =
            masked_keep_score(f, &Mask::empty(f.width(), f.height()), mode, &params, &geom)?;
        select_halftone(&hole_free, Budget::new(seed_fraction)?)
    };
    let keep = masked_keep_score(f, &seed_mask, mode, &params, &geom)?;
    let sample = stratified_sample(&keep, &seed_mask, samples, seed)?;
    let report = rank_agreement_with(
        f, &seed_mask, &keep, mode, alpha, reference, &params, &sample,
    )?;
    let values = keep.values.data();
    let best_pixel = (0..values.len())
        .filter(|&i| !seed_mask.get(i))
        .min_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)))
        .ok_or(Error::InvalidParameter(
            "seed mask leaves no free pixel".into(),
        ))?;
    let best_delta_j =
        brute_force_delta_j(f, &seed_mask, best_pixel, mode, alpha, reference, &params)?;
    Ok(RankingStudy {
        seed_mask,
        report,
        best_pixel,
        best_delta_j,
    })
}
