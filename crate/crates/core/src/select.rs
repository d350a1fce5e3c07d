//! Turning a criterion field into a mask of exactly the budgeted size.

use std::cmp::Ordering;

use crate::criterion::CriterionField;
use crate::error::{Error, Result};
use crate::solver::Mask;

const SCALE_ROUNDS: usize = 50;
const SCALE_TOL: f64 = 1e-6;
const CALIBRATION_ROUNDS: usize = 40;

/// Fraction of pixels that may be stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    fraction: f64,
}

impl Budget {
    pub fn new(fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "budget fraction must lie in (0, 1], got {fraction}"
            )));
        }
        Ok(Self { fraction })
    }

    pub fn fraction(&self) -> f64 {
        self.fraction
    }

    /// `round(fraction * n)`, kept within `1..=n`.
    pub fn target_count(&self, n: usize) -> usize {
        ((self.fraction * n as f64).round() as usize).clamp(1, n.max(1))
    }
}

/// Descending by value, ascending by index on ties.
fn keep_order(values: &[f64], a: usize, b: usize) -> Ordering {
    values[b]
        .partial_cmp(&values[a])
        .unwrap_or(Ordering::Equal)
        .then(a.cmp(&b))
}

/// Keeps the `target_count` pixels with the largest criterion values.
pub fn select_threshold(s: &CriterionField, budget: Budget) -> Mask {
    let (w, h) = (s.values.width(), s.values.height());
    let values = s.values.data();
    let k = budget.target_count(values.len());
    let mut order: Vec<usize> = (0..values.len()).collect();
    if k < order.len() {
        order.select_nth_unstable_by(k, |&a, &b| keep_order(values, a, b));
    }
    let mut mask = Mask::empty(w, h);
    for &i in &order[..k] {
        mask.set(i, true);
    }
    mask
}

/// Density field in `[0, 1]` with mean close to `fraction`.
fn density_field(values: &[f64], fraction: f64) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let normalized: Vec<f64> = if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![1.0; values.len()]
    };

    let n = normalized.len() as f64;
    let mean_of = |scale: f64| normalized.iter().map(|v| (v * scale).min(1.0)).sum::<f64>() / n;
    let base_mean = normalized.iter().sum::<f64>() / n;
    let mut scale = fraction / base_mean;
    for _ in 0..SCALE_ROUNDS {
        let m = mean_of(scale);
        if (m - fraction).abs() <= SCALE_TOL || m == 0.0 {
            break;
        }
        let next = scale * fraction / m;
        if next == scale {
            break;
        }
        scale = next;
    }
    normalized.iter().map(|v| (v * scale).min(1.0)).collect()
}

/// Floyd-Steinberg error diffusion with serpentine scan, threshold 1/2.
///
/// Also returns the value each pixel held when it was thresholded.
fn error_diffusion(density: &[f64], width: usize, height: usize) -> (Vec<bool>, Vec<f64>) {
    let mut buf = density.to_vec();
    let mut out = vec![false; density.len()];
    for row in 0..height {
        let forward = row % 2 == 0;
        for step in 0..width {
            let col = if forward { step } else { width - 1 - step };
            let i = row * width + col;
            let on = buf[i] >= 0.5;
            out[i] = on;
            let err = buf[i] - if on { 1.0 } else { 0.0 };
            let ahead = if forward {
                col.checked_add(1).filter(|&c| c < width)
            } else {
                col.checked_sub(1)
            };
            let behind = if forward {
                col.checked_sub(1)
            } else {
                col.checked_add(1).filter(|&c| c < width)
            };
            if let Some(c) = ahead {
                buf[row * width + c] += err * 7.0 / 16.0;
            }
            if row + 1 < height {
                let below = (row + 1) * width;
                if let Some(c) = behind {
                    buf[below + c] += err * 3.0 / 16.0;
                }
                buf[below + col] += err * 5.0 / 16.0;
                if let Some(c) = ahead {
                    buf[below + c] += err * 1.0 / 16.0;
                }
            }
        }
    }
    (out, buf)
}

/// Error diffusion of `density * t`, with `t` bisected so the number of
/// selected pixels lands as close to `k` as possible. Error leaving the image
/// at the right and bottom edges makes the raw count undershoot; correcting
/// that here keeps the final repair small.
fn calibrated_diffusion(
    density: &[f64],
    width: usize,
    height: usize,
    k: usize,
) -> (Vec<bool>, Vec<f64>) {
    let run = |t: f64| {
        let scaled: Vec<f64> = density.iter().map(|d| (d * t).min(1.0)).collect();
        let (bits, diffused) = error_diffusion(&scaled, width, height);
        let count = bits.iter().filter(|&&b| b).count();
        (count, bits, diffused)
    };
    let gap = |c: usize| c.abs_diff(k);
    let mut best = run(1.0);
    let (mut lo, mut hi) = (0.0, 1.0);
    if best.0 < k {
        // Grow the bracket until the count reaches k (or saturates).
        lo = 1.0;
        hi = 2.0;
        for _ in 0..CALIBRATION_ROUNDS {
            let trial = run(hi);
            let enough = trial.0 >= k;
            if gap(trial.0) < gap(best.0) {
                best = trial;
            }
            if enough {
                break;
            }
            lo = hi;
            hi *= 2.0;
        }
    }
    for _ in 0..CALIBRATION_ROUNDS {
        if gap(best.0) == 0 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let trial = run(mid);
        if trial.0 < k {
            lo = mid;
        } else {
            hi = mid;
        }
        if gap(trial.0) < gap(best.0) {
            best = trial;
        }
    }
    (best.1, best.2)
}

/// Error-diffusion halftoning of the criterion, then exact budget repair.
///
/// The density is rescaled first so diffusion alone selects close to the
/// target count. Over budget, the selected pixels with the smallest criterion
/// are dropped; under budget, the unselected pixels with the largest
/// criterion are added.
/// Pixels with equal criterion are ordered by their diffused value at
/// threshold time (pixels that nearly flipped go first), then by index as in
/// [`select_threshold`]. On flat criteria this keeps the repair from
/// clustering at the top-left corner.
pub fn select_halftone(s: &CriterionField, budget: Budget) -> Mask {
    let (w, h) = (s.values.width(), s.values.height());
    let values = s.values.data();
    let k = budget.target_count(values.len());
    if k == values.len() {
        return Mask::full(w, h);
    }
    let density = density_field(values, budget.fraction());
    let (mut bits, diffused) = calibrated_diffusion(&density, w, h, k);
    let repair_order = |a: usize, b: usize| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(Ordering::Equal)
            .then(diffused[b].total_cmp(&diffused[a]))
            .then(a.cmp(&b))
    };

    let selected = bits.iter().filter(|&&b| b).count();
    match selected.cmp(&k) {
        Ordering::Greater => {
            let mut chosen: Vec<usize> = (0..bits.len()).filter(|&i| bits[i]).collect();
            chosen.sort_unstable_by(|&a, &b| repair_order(a, b));
            for &i in &chosen[k..] {
                bits[i] = false;
            }
        }
        Ordering::Less => {
            let mut rest: Vec<usize> = (0..bits.len()).filter(|&i| !bits[i]).collect();
            rest.sort_unstable_by(|&a, &b| repair_order(a, b));
            for &i in &rest[..k - selected] {
                bits[i] = true;
            }
        }
        Ordering::Equal => {}
    }
    Mask::new(w, h, bits).expect("dimensions come from the criterion field")
}

pub fn mask_density(mask: &Mask) -> f64 {
    mask.density()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criterion::CriterionKind;
    use crate::grid::Field;

    fn crit(w: usize, h: usize, data: Vec<f64>) -> CriterionField {
        CriterionField::new(Field::new(w, h, data).unwrap(), CriterionKind::Adjoint).unwrap()
    }

    #[test]
    fn budget_bounds() {
        assert!(Budget::new(0.0).is_err());
        assert!(Budget::new(1.5).is_err());
        assert!(Budget::new(f64::NAN).is_err());
        let b = Budget::new(0.1).unwrap();
        assert_eq!(b.target_count(100), 10);
        assert_eq!(b.target_count(4), 1);
        assert_eq!(Budget::new(0.001).unwrap().target_count(10), 1);
        assert_eq!(Budget::new(1.0).unwrap().target_count(7), 7);
    }

    #[test]
    fn threshold_examples() {
        let m = select_threshold(
            &crit(2, 2, vec![4.0, 1.0, 3.0, 2.0]),
            Budget::new(0.5).unwrap(),
        );
        assert_eq!(m.bits(), &[true, false, true, false]);

        let m = select_threshold(&crit(4, 4, vec![0.5; 16]), Budget::new(0.25).unwrap());
        assert_eq!(m.indices(), vec![0, 1, 2, 3]);

        let m = select_threshold(&crit(3, 3, vec![0.0; 9]), Budget::new(1.0).unwrap());
        assert_eq!(m, Mask::full(3, 3));
    }

    #[test]
    fn halftone_full_budget() {
        let c = crit(4, 3, (0..12).map(|i| i as f64).collect());
        assert_eq!(
            select_halftone(&c, Budget::new(1.0).unwrap()),
            Mask::full(4, 3)
        );
    }

    #[test]
    fn halftone_uniform_field_is_dispersed() {
        let c = crit(16, 16, vec![0.3; 256]);
        let m = select_halftone(&c, Budget::new(0.25).unwrap());
        assert_eq!(m.count(), 64);
        for r in 0..15 {
            for col in 0..15 {
                let i = r * 16 + col;
                let n = [i, i + 1, i + 16, i + 17]
                    .iter()
                    .filter(|&&j| m.get(j))
                    .count();
                assert!(n <= 2, "window at ({col},{r}) holds {n}");
            }
        }
    }

    #[test]
    fn halftone_constant_field_is_even_per_tile() {
        for fraction in [0.1, 0.25, 0.4] {
            let c = crit(32, 32, vec![1.5; 1024]);
            let m = select_halftone(&c, Budget::new(fraction).unwrap());
            assert_eq!(m, select_halftone(&c, Budget::new(fraction).unwrap()));
            for tr in 0..8 {
                for tc in 0..8 {
                    let n = (0..16)
                        .filter(|k| m.get((tr * 4 + k / 4) * 32 + tc * 4 + k % 4))
                        .count();
                    assert!(
                        (n as f64 - 16.0 * fraction).abs() <= 2.0,
                        "tile ({tc},{tr}) holds {n} at {fraction}"
                    );
                }
            }
        }
    }

    #[test]
    fn halftone_follows_the_field() {
        let c = crit(
            16,
            16,
            (0..256)
                .map(|i| if i % 16 < 8 { 1.0 } else { 0.0 })
                .collect(),
        );
        let m = select_halftone(&c, Budget::new(0.5).unwrap());
        assert_eq!(m.count(), 128);
        let left = m.indices().iter().filter(|&&i| i % 16 < 8).count();
        assert!(left as f64 >= 0.9 * 128.0, "{left} of 128 on the left");
    }

    #[test]
    fn halftone_handles_negative_criteria() {
        let data: Vec<f64> = (0..100).map(|i| ((i * 37) % 17) as f64 - 9.0).collect();
        let m = select_halftone(&crit(10, 10, data), Budget::new(0.1).unwrap());
        assert_eq!(m.count(), 10);
    }

    #[test]
    fn density_examples() {
        assert_eq!(mask_density(&Mask::empty(4, 3)), 0.0);
        assert_eq!(mask_density(&Mask::full(4, 3)), 1.0);
        assert_eq!(
            mask_density(&Mask::from_indices(4, 3, &[1, 2, 3]).unwrap()),
            0.25
        );
    }
}
