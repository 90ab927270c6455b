//! Reference computations that share no code path with the main modules:
//! closed-form Gaussian quantities, a directly evaluated schedule product, an
//! exact minimum cover, and the scalar affine recursion that the exact-score
//! sampler reduces to on Gaussian targets.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, SQRT_2};
// inherent on f64 only with std
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::schedule::{Coefficient, ScheduleParams};

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

pub fn gaussian_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt())
}

/// `TV(N(a, σ²), N(b, σ²)) = 2Φ(|a − b| / 2σ) − 1`.
pub fn equal_variance_tv(shift: f64, sigma: f64) -> f64 {
    2.0 * normal_cdf(shift.abs() / (2.0 * sigma)) - 1.0
}

/// `ᾱ_t` as a plain product, with every `β_s` evaluated from its closed form.
pub fn alpha_bar_direct(params: ScheduleParams, t: usize) -> f64 {
    let steps = params.steps as f64;
    let beta1 = steps.powf(-params.c0);
    let r = params.c1 * steps.ln() / steps;
    (1..=t)
        .map(|s| {
            if s == 1 {
                1.0 - beta1
            } else {
                1.0 - r * (beta1 * (1.0 + r).powi(s as i32 - 1)).min(1.0)
            }
        })
        .product()
}

/// Size of a smallest cover of `points` by closed `ε`-balls centred at points
/// of the set, by branch and bound. Exponential in the worst case; meant for
/// clouds of at most a few hundred points.
pub fn min_cover_size(points: &[Vector], epsilon: f64) -> usize {
    let n = points.len();
    if n == 0 {
        return 0;
    }
    let words = n.div_ceil(64);
    let balls: Vec<Vec<u64>> = (0..n)
        .map(|c| {
            let mut set = vec![0u64; words];
            for (i, p) in points.iter().enumerate() {
                if (p - &points[c]).norm() <= epsilon {
                    set[i / 64] |= 1 << (i % 64);
                }
            }
            set
        })
        .collect();
    let largest = balls.iter().map(|b| popcount(b)).max().unwrap_or(1);
    let mut uncovered = vec![!0u64; words];
    if n % 64 != 0 {
        uncovered[words - 1] = (1u64 << (n % 64)) - 1;
    }
    // every point alone is a valid (bad) cover
    let mut best = n;
    search(&balls, &mut uncovered, 0, largest, &mut best);
    best
}

fn popcount(set: &[u64]) -> usize {
    set.iter().map(|w| w.count_ones() as usize).sum()
}

fn search(balls: &[Vec<u64>], uncovered: &mut Vec<u64>, used: usize, largest: usize, best: &mut usize) {
    let remaining = popcount(uncovered);
    if remaining == 0 {
        *best = (*best).min(used);
        return;
    }
    if used + remaining.div_ceil(largest) >= *best {
        return;
    }
    // some ball must contain the first uncovered point
    let (w, word) = uncovered.iter().enumerate().find(|(_, w)| **w != 0).expect("nonempty");
    let first = w * 64 + word.trailing_zeros() as usize;
    let mut options: Vec<(usize, usize)> = balls
        .iter()
        .enumerate()
        .filter(|(_, b)| b[first / 64] >> (first % 64) & 1 == 1)
        .map(|(c, b)| (b.iter().zip(uncovered.iter()).map(|(x, u)| (x & u).count_ones() as usize).sum(), c))
        .collect();
    options.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, c) in options {
        let saved = uncovered.clone();
        for (u, b) in uncovered.iter_mut().zip(&balls[c]) {
            *u &= !b;
        }
        search(balls, uncovered, used + 1, largest, best);
        *uncovered = saved;
    }
}

/// `Y_1 = gain · Y_T + shift · m` along one eigendirection of a Gaussian
/// target with variance `λ` and mean coordinate `m`, under exact scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarAffine {
    pub gain: f64,
    pub shift: f64,
}

/// Composes the exact-score reverse steps `t = T, …, 2` for a scalar Gaussian
/// direction with variance `variance`. Every quantity is recomputed from the
/// closed-form schedule.
pub fn scalar_affine(params: ScheduleParams, variance: f64, choice: Coefficient) -> ScalarAffine {
    let mut gain = 1.0;
    let mut shift = 0.0;
    for t in (2..=params.steps).rev() {
        let ab = alpha_bar_direct(params, t);
        let alpha = ab / alpha_bar_direct(params, t - 1);
        let eta = match choice {
            Coefficient::Star => 1.0 - ab - ((1.0 - ab) * (alpha - ab)).sqrt(),
            Coefficient::Simple => (1.0 - alpha) / 2.0,
        };
        let v = ab * variance + 1.0 - ab;
        let a = (1.0 - eta / v) / alpha.sqrt();
        let c = eta * ab.sqrt() / (v * alpha.sqrt());
        gain *= a;
        shift = a * shift + c;
    }
    ScalarAffine { gain, shift }
}

/// Law of `Y_1` for a Gaussian target `N(μ, U diag(λ) Uᵀ)` (orthonormal `U`,
/// zero variance off its range) started from `Y_T ~ N(0, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianEndpoint {
    pub mean: Vector,
    pub covariance: Matrix,
}

pub fn gaussian_endpoint(
    params: ScheduleParams,
    mean: &Vector,
    basis: &Matrix,
    eigenvalues: &[f64],
    choice: Coefficient,
) -> Result<GaussianEndpoint> {
    let d = mean.len();
    if basis.nrows() != d || basis.ncols() != eigenvalues.len() {
        return Err(Error::DimensionMismatch { expected: d, found: basis.nrows() });
    }
    let off = scalar_affine(params, 0.0, choice);
    let projector = basis * basis.transpose();
    let complement = Matrix::identity(d, d) - &projector;
    let mut out_mean = &complement * mean * off.shift;
    let mut covariance = complement * (off.gain * off.gain);
    for (j, &lambda) in eigenvalues.iter().enumerate() {
        let dir = basis.column(j);
        let map = scalar_affine(params, lambda, choice);
        out_mean += dir * (dir.dot(mean) * map.shift);
        covariance += dir * dir.transpose() * (map.gain * map.gain);
    }
    Ok(GaussianEndpoint { mean: out_mean, covariance })
}

impl GaussianEndpoint {
    pub fn log_density(&self, y: &Vector) -> Option<f64> {
        let chol = self.covariance.clone().cholesky()?;
        let d = y.len() as f64;
        let z = chol.l().solve_lower_triangular(&(y - &self.mean))?;
        let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
        Some(-0.5 * (d * (2.0 * PI).ln() + log_det + z.norm_squared()))
    }
}
