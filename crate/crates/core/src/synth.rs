//! Deterministic synthetic test images on the unit square.

use crate::grid::Image;

fn sample(n: usize, f: impl Fn(f64, f64) -> f64) -> Image {
    let h = 1.0 / n as f64;
    Image::from_fn(n, n, |c, r| f((c as f64 + 0.5) * h, (r as f64 + 0.5) * h))
}

/// Gaussian bump on a flat background.
pub fn smooth_bump(n: usize) -> Image {
    sample(n, |x, y| {
        let d2 = (x - 0.45).powi(2) + (y - 0.55).powi(2);
        0.2 + 0.6 * (-d2 / (2.0 * 0.15 * 0.15)).exp()
    })
}

/// Slanted step edge over a gentle vertical gradient.
pub fn step_edge(n: usize) -> Image {
    sample(n, |x, y| {
        let base = 0.3 + 0.1 * y;
        if x + 0.3 * y > 0.6 {
            base + 0.4
        } else {
            base
        }
    })
}

/// [`smooth_bump`] with one saturated pixel at `(n/4, n/3)`.
pub fn bump_with_outlier(n: usize) -> Image {
    let img = smooth_bump(n);
    let target = (n / 3) * n + n / 4;
    let data = img
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if i == target { 1.0 } else { v })
        .collect();
    Image::new(n, n, data).expect("values stay in range")
}

/// Index of the saturated pixel in [`bump_with_outlier`].
pub fn outlier_index(n: usize) -> usize {
    (n / 3) * n + n / 4
}

/// Shaded background with a disc and a rectangle; intensities stay inside
/// `[0.1, 0.9]` so impulse noise always changes a pixel.
pub fn piecewise_smooth(n: usize) -> Image {
    sample(n, |x, y| {
        let mut v = 0.25 + 0.2 * x + 0.1 * (3.0 * y).sin();
        if (x - 0.35).powi(2) + (y - 0.4).powi(2) < 0.2f64.powi(2) {
            v = 0.75 - 0.15 * ((x - 0.35).powi(2) + (y - 0.4).powi(2)) / 0.04;
        }
        if (0.6..0.85).contains(&x) && (0.55..0.8).contains(&y) {
            v = 0.15 + 0.2 * y;
        }
        v.clamp(0.1, 0.9)
    })
}
