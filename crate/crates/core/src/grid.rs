//! Pixel grids and the discrete operators defined on them.
//!
//! The domain is the unit square sampled at cell centres, so the grid step is
//! `1 / max(width, height)`. Homogeneous Neumann conditions are imposed by
//! face-centred reflection: the ghost cell outside pixel 0 carries the value
//! of pixel 0, so a missing neighbour simply contributes nothing to the
//! stencil. The resulting matrix is symmetric and its columns sum to zero.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows per rayon task. Fixed so the work split never depends on the pool size.
const ROWS_PER_TASK: usize = 8;

/// Discretisation of the unit square by a `width x height` cell grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    width: usize,
    height: usize,
    h: f64,
}

impl GridGeometry {
    pub fn unit_square(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "grid dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(Self {
            width,
            height,
            h: 1.0 / width.max(height) as f64,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid step `h`.
    pub fn spacing(&self) -> f64 {
        self.h
    }

    /// Cell-centre coordinates of pixel `(col, row)` in the unit square.
    pub fn center(&self, col: usize, row: usize) -> (f64, f64) {
        ((col as f64 + 0.5) * self.h, (row as f64 + 0.5) * self.h)
    }

    pub(crate) fn check(&self, width: usize, height: usize) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::DimensionMismatch {
                expected_w: self.width,
                expected_h: self.height,
                got_w: width,
                got_h: height,
            });
        }
        Ok(())
    }
}

/// Real-valued pixel grid without range constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "field data has {} entries, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(col, row));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync + Send) -> Field {
        Field {
            width: self.width,
            height: self.height,
            data: self.data.par_iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: f64) -> Field {
        self.map(|v| v * factor)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Grey-level image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "image data has {} entries, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter(format!(
                "intensity {} at pixel {} is outside [0, 1]",
                data[i], i
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    /// Builds an image from a generator, clamping every sample to `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, f: impl FnMut(usize, usize) -> f64) -> Self {
        Self::from_field_clamped(&Field::from_fn(width, height, f))
    }

    pub fn from_field_clamped(field: &Field) -> Self {
        Self {
            width: field.width,
            height: field.height,
            data: field
                .data
                .iter()
                .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
                .collect(),
        }
    }

    pub fn to_field(&self) -> Field {
        Field {
            width: self.width,
            height: self.height,
            data: self.data.clone(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn geometry(&self) -> Result<GridGeometry> {
        GridGeometry::unit_square(self.width, self.height)
    }
}

/// `out_i = diag * x_i + coupling * sum_{j in N(i)} (x_i - x_j)` where `N(i)`
/// are the in-grid 4-neighbours of pixel `i`.
///
/// Every stencil in the crate goes through this kernel. Each output entry is
/// computed with a fixed operation order, so results are bitwise independent
/// of how rows are split across threads.
pub(crate) fn stencil_into(
    x: &[f64],
    out: &mut [f64],
    width: usize,
    height: usize,
    diag: f64,
    coupling: f64,
) {
    debug_assert_eq!(x.len(), width * height);
    debug_assert_eq!(out.len(), width * height);
    out.par_chunks_mut(width)
        .with_min_len(ROWS_PER_TASK)
        .enumerate()
        .for_each(|(row, out_row)| {
            let base = row * width;
            for (col, o) in out_row.iter_mut().enumerate() {
                let i = base + col;
                let xi = x[i];
                let mut acc = 0.0;
                if col > 0 {
                    acc += xi - x[i - 1];
                }
                if col + 1 < width {
                    acc += xi - x[i + 1];
                }
                if row > 0 {
                    acc += xi - x[i - width];
                }
                if row + 1 < height {
                    acc += xi - x[i + width];
                }
                *o = diag * xi + coupling * acc;
            }
        });
}

/// Number of in-grid 4-neighbours of pixel `i`.
pub(crate) fn neighbor_count(i: usize, width: usize, height: usize) -> usize {
    let (col, row) = (i % width, i / width);
    usize::from(col > 0)
        + usize::from(col + 1 < width)
        + usize::from(row > 0)
        + usize::from(row + 1 < height)
}

/// Five-point Laplacian with homogeneous Neumann boundary.
pub fn laplacian(f: &Field, geom: &GridGeometry) -> Result<Field> {
    geom.check(f.width, f.height)?;
    let inv_h2 = 1.0 / (geom.h * geom.h);
    let mut out = vec![0.0; f.len()];
    stencil_into(&f.data, &mut out, f.width, f.height, 0.0, -inv_h2);
    Field::new(f.width, f.height, out)
}

/// Applies `A v = v - alpha * laplacian(v)`.
pub fn apply_helmholtz(v: &Field, alpha: f64, geom: &GridGeometry) -> Result<Field> {
    geom.check(v.width, v.height)?;
    if !(alpha >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must be non-negative, got {alpha}"
        )));
    }
    let coupling = alpha / (geom.h * geom.h);
    let mut out = vec![0.0; v.len()];
    stencil_into(&v.data, &mut out, v.width, v.height, 1.0, coupling);
    Field::new(v.width, v.height, out)
}
