//! PDE-based image compression: choose the pixels to store with an
//! adjoint-state topological gradient, then reconstruct the rest by linear
//! diffusion inpainting.
//!
//! Module map:
//!
//! * [`grid`], [`pnm`]: pixel grids, Neumann Laplacian, PGM/PBM I/O.
//! * [`solver`]: matrix-free CG for `-alpha lap u + u = h`, optionally with a
//!   Dirichlet mask.
//! * [`criterion`]: primal/adjoint states and the keep-score `-v0 w0`, plus
//!   the `|lap f|` baseline.
//! * [`select`]: thresholding and error-diffusion halftoning with exact budgets.
//! * [`codec`]: the PIC1 container, compression and reconstruction.
//! * [`experiment`]: noise models, Lp errors, alpha search, result tables.
//! * [`validation`]: Bessel functions, the fundamental solution and a
//!   brute-force oracle for the cost variation.

// Parameters are validated with `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec;
pub mod criterion;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod pnm;
pub mod select;
pub mod solver;
pub mod synth;
pub mod validation;

pub use codec::{CompressedImage, Method, ReconRhsMode};
pub use criterion::{CostMode, CriterionField, CriterionKind};
pub use error::{DecodeError, Error, Result};
pub use grid::{Field, GridGeometry, Image};
pub use select::Budget;
pub use solver::{Mask, SolveParams};
