//! Matrix-free preconditioned conjugate gradients for `-alpha * lap(v) + v = h`
//! on the whole grid (Neumann) or on the pixels outside a Dirichlet mask.
//!
//! Mask pixels are eliminated from the unknowns: their values move to the
//! right-hand side and the remaining free-pixel block of the operator is a
//! principal submatrix of an SPD matrix, hence SPD itself.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{neighbor_count, stencil_into, Field, GridGeometry};

/// Chunk length for partial dot products. The reduction tree depends only on
/// this constant, never on the thread count.
const DOT_CHUNK: usize = 2048;

pub const DEFAULT_REL_TOL: f64 = 1e-8;

/// Parameters of an elliptic solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveParams {
    /// Diffusion weight of `-alpha * lap + id`.
    pub alpha: f64,
    /// Target for `||A v - h|| / ||h||`.
    pub rel_tol: f64,
    /// Iteration cap; `None` picks [`SolveParams::default_max_iter`] for the grid.
    pub max_iter: Option<usize>,
}

impl SolveParams {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            rel_tol: DEFAULT_REL_TOL,
            max_iter: None,
        }
    }

    pub fn with_alpha(self, alpha: f64) -> Self {
        Self { alpha, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "alpha must be finite and non-negative, got {}",
                self.alpha
            )));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "rel_tol must lie in (0, 1), got {}",
                self.rel_tol
            )));
        }
        if self.max_iter == Some(0) {
            return Err(Error::InvalidParameter(
                "max_iter must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Iteration cap used when `max_iter` is `None`.
    ///
    /// Unpreconditioned CG needs on the order of `sqrt(cond)` sweeps and the
    /// condition number of `id - alpha * lap` grows like `8 alpha / h^2`, so
    /// the cap scales with both the grid size and `sqrt(alpha) / h`.
    pub fn default_max_iter(&self, geom: &GridGeometry) -> usize {
        let side = geom.width().max(geom.height());
        let sqrt_cond = (1.0 + 8.0 * self.alpha / (geom.spacing() * geom.spacing())).sqrt();
        (10 * side).max((20.0 * sqrt_cond).ceil() as usize)
    }

    fn resolved_max_iter(&self, geom: &GridGeometry) -> usize {
        self.max_iter.unwrap_or_else(|| self.default_max_iter(geom))
    }
}

impl Default for SolveParams {
    fn default() -> Self {
        Self::new(1.0)
    }
}

/// Set of stored pixels (`true` = pixel kept as Dirichlet data).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "mask has {} bits, expected {}x{}",
                bits.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_indices(width: usize, height: usize, indices: &[usize]) -> Result<Self> {
        let mut m = Self::empty(width, height);
        for &i in indices {
            if i >= m.bits.len() {
                return Err(Error::InvalidParameter(format!(
                    "pixel index {i} outside {width}x{height} mask"
                )));
            }
            m.bits[i] = true;
        }
        Ok(m)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, value: bool) {
        self.bits[i] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Fraction of pixels in the mask.
    pub fn density(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.count() as f64 / self.bits.len() as f64
    }

    /// Row-major indices of the set pixels.
    pub fn indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }
}

/// Convergence record of a solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// `||b - A x|| / ||b||` over the free pixels, recomputed from scratch at exit.
    pub rel_residual: f64,
}

/// Zeroth-order coefficient of the operator: Helmholtz keeps it, the harmonic
/// (pure Laplace) limit drops it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Operator {
    Helmholtz,
    Laplace,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let partials: Vec<f64> = a
        .par_chunks(DOT_CHUNK)
        .zip(b.par_chunks(DOT_CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    partials.iter().sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct System<'a> {
    width: usize,
    height: usize,
    diag: f64,
    coupling: f64,
    fixed: Option<&'a [bool]>,
}

impl System<'_> {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        stencil_into(x, out, self.width, self.height, self.diag, self.coupling);
        if let Some(fixed) = self.fixed {
            out.par_iter_mut()
                .zip(fixed.par_iter())
                .for_each(|(o, &k)| {
                    if k {
                        *o = 0.0;
                    }
                });
        }
    }

    fn inv_diagonal(&self) -> Vec<f64> {
        (0..self.width * self.height)
            .map(|i| {
                if self.fixed.is_some_and(|f| f[i]) {
                    0.0
                } else {
                    let d = self.diag
                        + self.coupling * neighbor_count(i, self.width, self.height) as f64;
                    if d > 0.0 {
                        1.0 / d
                    } else {
                        // Isolated pixel on a 1x1 grid with the Laplace operator.
                        0.0
                    }
                }
            })
            .collect()
    }
}

/// Jacobi-preconditioned CG starting from `x0` (zero when absent). `b` and
/// `x0` must vanish on fixed pixels; the returned iterate does too.
fn pcg(
    sys: &System,
    b: &[f64],
    x0: Option<Vec<f64>>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = b.len();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        let x = vec![0.0; n];
        return Ok((
            x,
            SolveStats {
                iterations: 0,
                rel_residual: 0.0,
            },
        ));
    }
    let inv_diag = sys.inv_diagonal();
    let target = rel_tol * b_norm;

    let (mut x, mut r) = match x0 {
        Some(x) => {
            let mut ax = vec![0.0; n];
            sys.apply(&x, &mut ax);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, axi)| bi - axi).collect();
            let r_norm = norm(&r);
            if r_norm <= target {
                return Ok((
                    x,
                    SolveStats {
                        iterations: 0,
                        rel_residual: r_norm / b_norm,
                    },
                ));
            }
            (x, r)
        }
        None => (vec![0.0; n], b.to_vec()),
    };
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut iterations = 0;

    loop {
        if iterations >= max_iter {
            let mut res = vec![0.0; n];
            sys.apply(&x, &mut res);
            let true_norm = res
                .iter()
                .zip(b)
                .map(|(ax, bi)| (bi - ax) * (bi - ax))
                .sum::<f64>()
                .sqrt();
            return Err(Error::NoConvergence {
                iterations,
                residual: true_norm / b_norm,
            });
        }
        sys.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            // Operator not positive definite on this subspace (singular Laplace block).
            return Err(Error::NoConvergence {
                iterations,
                residual: norm(&r) / b_norm,
            });
        }
        let step = rz / pap;
        x.par_iter_mut()
            .zip(r.par_iter_mut())
            .zip(p.par_iter().zip(ap.par_iter()))
            .for_each(|((xi, ri), (pi, api))| {
                *xi += step * pi;
                *ri -= step * api;
            });
        iterations += 1;

        if norm(&r) <= target {
            // The recursive residual drifts; confirm against the true one and
            // restart from it if the drift matters.
            let mut ax = vec![0.0; n];
            sys.apply(&x, &mut ax);
            r.par_iter_mut()
                .zip(b.par_iter().zip(ax.par_iter()))
                .for_each(|(ri, (bi, axi))| *ri = bi - axi);
            let true_norm = norm(&r);
            if true_norm <= target {
                return Ok((
                    x,
                    SolveStats {
                        iterations,
                        rel_residual: true_norm / b_norm,
                    },
                ));
            }
            z.par_iter_mut()
                .zip(r.par_iter().zip(inv_diag.par_iter()))
                .for_each(|(zi, (ri, di))| *zi = ri * di);
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
            continue;
        }

        z.par_iter_mut()
            .zip(r.par_iter().zip(inv_diag.par_iter()))
            .for_each(|(zi, (ri, di))| *zi = ri * di);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        p.par_iter_mut()
            .zip(z.par_iter())
            .for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
}

/// Shared masked solver. `guess` seeds CG on the free pixels.
pub(crate) fn solve_masked_with(
    op: Operator,
    rhs: &Field,
    mask: &Mask,
    dirichlet: &Field,
    guess: Option<&Field>,
    params: &SolveParams,
    geom: &GridGeometry,
) -> Result<(Field, SolveStats)> {
    params.validate()?;
    let (w, h) = (geom.width(), geom.height());
    geom.check(rhs.width(), rhs.height())?;
    geom.check(mask.width(), mask.height())?;
    geom.check(dirichlet.width(), dirichlet.height())?;
    if let Some(g) = guess {
        geom.check(g.width(), g.height())?;
    }

    let inv_h2 = 1.0 / (geom.spacing() * geom.spacing());
    let (diag, coupling) = match op {
        Operator::Helmholtz => (1.0, params.alpha * inv_h2),
        Operator::Laplace => (0.0, inv_h2),
    };
    let any_fixed = mask.bits().iter().any(|&b| b);
    if op == Operator::Laplace && !any_fixed {
        return Err(Error::EmptyMask);
    }
    let sys = System {
        width: w,
        height: h,
        diag,
        coupling,
        fixed: any_fixed.then_some(mask.bits()),
    };

    // Move the Dirichlet data to the right-hand side: b_F = rhs_F - A_FK d_K.
    let mut b = rhs.data().to_vec();
    if any_fixed {
        let lifted: Vec<f64> = dirichlet
            .data()
            .iter()
            .zip(mask.bits())
            .map(|(&d, &k)| if k { d } else { 0.0 })
            .collect();
        let mut a_lift = vec![0.0; lifted.len()];
        stencil_into(&lifted, &mut a_lift, w, h, 0.0, coupling);
        for ((bi, &k), al) in b.iter_mut().zip(mask.bits()).zip(&a_lift) {
            *bi = if k { 0.0 } else { *bi - al };
        }
    }

    let x0 = guess.map(|g| {
        g.data()
            .iter()
            .zip(mask.bits())
            .map(|(&v, &k)| if k { 0.0 } else { v })
            .collect()
    });
    let (mut x, stats) = pcg(&sys, &b, x0, params.rel_tol, params.resolved_max_iter(geom))?;
    for ((xi, &k), &d) in x.iter_mut().zip(mask.bits()).zip(dirichlet.data()) {
        if k {
            *xi = d;
        }
    }
    Ok((Field::new(w, h, x)?, stats))
}

/// Solves `-alpha * lap(v) + v = h` with homogeneous Neumann boundary.
pub fn solve_neumann(h: &Field, params: &SolveParams, geom: &GridGeometry) -> Result<Field> {
    solve_neumann_with_stats(h, params, geom).map(|(v, _)| v)
}

pub fn solve_neumann_with_stats(
    h: &Field,
    params: &SolveParams,
    geom: &GridGeometry,
) -> Result<(Field, SolveStats)> {
    let empty = Mask::empty(geom.width(), geom.height());
    let zeros = Field::zeros(geom.width(), geom.height());
    solve_masked_with(Operator::Helmholtz, h, &empty, &zeros, None, params, geom)
}

/// Solves `-alpha * lap(u) + u = rhs` on pixels outside `mask`, with
/// `u = dirichlet` on the mask and Neumann on the outer boundary.
pub fn solve_masked(
    rhs: &Field,
    mask: &Mask,
    dirichlet: &Field,
    params: &SolveParams,
    geom: &GridGeometry,
) -> Result<Field> {
    solve_masked_with_stats(rhs, mask, dirichlet, params, geom).map(|(u, _)| u)
}

pub fn solve_masked_with_stats(
    rhs: &Field,
    mask: &Mask,
    dirichlet: &Field,
    params: &SolveParams,
    geom: &GridGeometry,
) -> Result<(Field, SolveStats)> {
    solve_masked_with(
        Operator::Helmholtz,
        rhs,
        mask,
        dirichlet,
        None,
        params,
        geom,
    )
}

/// As [`solve_masked_with_stats`], with CG started from `guess` on the free
/// pixels. The result depends on the guess only within the solver tolerance.
pub fn solve_masked_from(
    rhs: &Field,
    mask: &Mask,
    dirichlet: &Field,
    guess: &Field,
    params: &SolveParams,
    geom: &GridGeometry,
) -> Result<(Field, SolveStats)> {
    solve_masked_with(
        Operator::Helmholtz,
        rhs,
        mask,
        dirichlet,
        Some(guess),
        params,
        geom,
    )
}

/// Harmonic inpainting: `lap(u) = 0` off the mask, `u = dirichlet` on it.
/// CG starts from `guess` on the free pixels when one is given.
pub fn solve_laplace_masked(
    mask: &Mask,
    dirichlet: &Field,
    guess: Option<&Field>,
    params: &SolveParams,
    geom: &GridGeometry,
) -> Result<(Field, SolveStats)> {
    let zeros = Field::zeros(geom.width(), geom.height());
    solve_masked_with(
        Operator::Laplace,
        &zeros,
        mask,
        dirichlet,
        guess,
        params,
        geom,
    )
}
