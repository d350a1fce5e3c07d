//! Pixel-selection criteria.
//!
//! The adjoint criterion pairs the hole-free primal state `v0`, solving
//! `-alpha lap v0 + v0 = alpha lap f`, with the adjoint state `w0`, solving
//! `-alpha lap w0 + w0 = -g'(v0)`. Inserting a small Dirichlet hole at `x`
//! changes the cost by a positive multiple of `v0(x) w0(x)`, so `-v0 w0` is
//! the keep-score: larger means storing the pixel lowers the cost more.

use crate::error::{Error, Result};
use crate::grid::{laplacian, Field, GridGeometry, Image};
use crate::solver::{solve_masked, solve_neumann, Mask, SolveParams};

/// Default regularisation of the L1 cost.
pub const DEFAULT_EPS_REG: f64 = 1e-4;

/// Pointwise cost `g(s)` applied to the residual `s = u - f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostMode {
    /// `g(s) = s^2 / 2`.
    L2,
    /// `g(s) = sqrt(s^2 + eps)`, a smooth stand-in for `|s|`.
    L1Regularized { eps: f64 },
}

impl CostMode {
    pub fn l1(eps: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "L1 regularisation must be positive, got {eps}"
            )));
        }
        Ok(Self::L1Regularized { eps })
    }

    /// Lipschitz constant of `g'`.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            CostMode::L2 => 1.0,
            CostMode::L1Regularized { eps } => 1.0 / eps.sqrt(),
        }
    }

    /// Exponent `p` of the Lp error this cost approximates.
    pub fn p(&self) -> u8 {
        match self {
            CostMode::L2 => 2,
            CostMode::L1Regularized { .. } => 1,
        }
    }
}

pub fn g_value(s: f64, mode: CostMode) -> f64 {
    match mode {
        CostMode::L2 => 0.5 * s * s,
        CostMode::L1Regularized { eps } => (s * s + eps).sqrt(),
    }
}

/// Derivative of [`g_value`] in `s`.
pub fn g_s(s: f64, mode: CostMode) -> f64 {
    match mode {
        CostMode::L2 => s,
        CostMode::L1Regularized { eps } => s / (s * s + eps).sqrt(),
    }
}

/// Which rule produced a criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriterionKind {
    Adjoint,
    H1,
}

/// One score per pixel; larger means more important to keep.
#[derive(Debug, Clone, PartialEq)]
pub struct CriterionField {
    pub values: Field,
    pub kind: CriterionKind,
}

impl CriterionField {
    pub fn new(values: Field, kind: CriterionKind) -> Result<Self> {
        if let Some(i) = values.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "criterion value at pixel {i} is not finite"
            )));
        }
        Ok(Self { values, kind })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.scale(factor),
            kind: self.kind,
        }
    }
}

/// `v0 = A^{-1} (alpha lap f)` with Neumann boundary.
pub fn primal_state(f_noisy: &Image, params: &SolveParams, geom: &GridGeometry) -> Result<Field> {
    let rhs = laplacian(&f_noisy.to_field(), geom)?.scale(params.alpha);
    solve_neumann(&rhs, params, geom)
}

/// `w0 = A^{-1} (-g'(v0))` with Neumann boundary.
pub fn adjoint_state(
    v0: &Field,
    mode: CostMode,
    params: &SolveParams,
    geom: &GridGeometry,
) -> Result<Field> {
    let rhs = v0.map(move |v| -g_s(v, mode));
    solve_neumann(&rhs, params, geom)
}

/// Keep-score `-v0 * w0`.
///
/// The asymptotic constant `1 / E(1)` is positive and therefore left out; it
/// is available from [`crate::validation::expansion_constant`].
pub fn adj_criterion(v0: &Field, w0: &Field) -> Result<CriterionField> {
    if v0.width() != w0.width() || v0.height() != w0.height() {
        return Err(Error::DimensionMismatch {
            expected_w: v0.width(),
            expected_h: v0.height(),
            got_w: w0.width(),
            got_h: w0.height(),
        });
    }
    let data = v0
        .data()
        .iter()
        .zip(w0.data())
        // `0 - vw` rather than `-(vw)` keeps zero products at +0.
        .map(|(v, w)| 0.0 - v * w)
        .collect();
    CriterionField::new(
        Field::new(v0.width(), v0.height(), data)?,
        CriterionKind::Adjoint,
    )
}

/// Full adjoint pipeline: primal state, adjoint state, keep-score.
pub fn adjoint_keep_score(
    f_noisy: &Image,
    mode: CostMode,
    params: &SolveParams,
    geom: &GridGeometry,
) -> Result<CriterionField> {
    let v0 = primal_state(f_noisy, params, geom)?;
    let w0 = adjoint_state(&v0, mode, params, geom)?;
    adj_criterion(&v0, &w0)
}

/// Keep-score for growing an existing mask `K`.
///
/// The primal and adjoint states are solved on the pixels outside `K` with
/// zero Dirichlet data on `K`; stored pixels score zero. With an empty mask
/// this is exactly [`adjoint_keep_score`].
pub fn masked_keep_score(
    f_noisy: &Image,
    mask: &Mask,
    mode: CostMode,
    params: &SolveParams,
    geom: &GridGeometry,
) -> Result<CriterionField> {
    let zeros = Field::zeros(geom.width(), geom.height());
    let rhs = laplacian(&f_noisy.to_field(), geom)?.scale(params.alpha);
    let v = solve_masked(&rhs, mask, &zeros, params, geom)?;
    let w = solve_masked(&v.map(move |x| -g_s(x, mode)), mask, &zeros, params, geom)?;
    adj_criterion(&v, &w)
}

/// Baseline criterion `|lap f|`.
pub fn h1_criterion(f_noisy: &Image, geom: &GridGeometry) -> Result<CriterionField> {
    let lap = laplacian(&f_noisy.to_field(), geom)?;
    CriterionField::new(lap.map(f64::abs), CriterionKind::H1)
}
