//! Total-variation estimation, log-log rate fits, and the convergence bound.

use alloc::vec::Vec;
// inherent on f64 only with std
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{least_squares, mean_and_stderr};
use crate::sampler::TrajectoryBatch;
use crate::schedule::Schedule;
use crate::targets::{MixtureTarget, NoiseLevel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_used: usize,
    pub n_flagged: usize,
}

impl TvEstimate {
    /// Values within two standard errors of zero are noise-dominated and are
    /// left out of rate fits.
    pub fn below_resolution(&self) -> bool {
        self.value < 2.0 * self.stderr
    }
}

/// `TV(p_{X_t}, p_{Y_t})` estimated on the generated side:
///
/// ```text
/// TV = E_{Y ~ p_Y}[ max(0, 1 − p_X(Y) / p_Y(Y)) ]
/// ```
///
/// using the batch's tracked `log p_Y` and the closed-form target marginal at
/// the batch's step. Flagged points are excluded and counted.
pub fn tv_monte_carlo(batch: &TrajectoryBatch, target: &MixtureTarget, schedule: &Schedule) -> Result<TvEstimate> {
    let t = batch.t();
    if t < 1 || t > schedule.steps() {
        return Err(Error::StepOutOfRange { t, min: 1, max: schedule.steps() });
    }
    if batch.dim() != target.dim() {
        return Err(Error::DimensionMismatch { expected: target.dim(), found: batch.dim() });
    }
    let level = NoiseLevel::at_step(schedule, t);
    let integrand: Vec<f64> = batch
        .points()
        .iter()
        .zip(batch.log_density())
        .zip(batch.flagged())
        .filter(|(_, &flag)| !flag)
        .map(|((y, &log_q), _)| {
            let log_p = target.log_marginal_at(level, y);
            (1.0 - (log_p - log_q).exp()).max(0.0)
        })
        .collect();
    let n_flagged = batch.len() - integrand.len();
    if integrand.is_empty() {
        return Err(Error::AllPointsFlagged);
    }
    let (value, stderr) = mean_and_stderr(&integrand);
    Ok(TvEstimate { value, stderr, n_used: integrand.len(), n_flagged })
}

/// Grid for [`tv_quadrature_1d`]: trapezoid on `[lo, hi]`, interval count
/// doubled until successive values differ by less than `tol`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub initial_intervals: usize,
    pub tol: f64,
    pub max_refinements: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { lo: -30.0, hi: 30.0, initial_intervals: 1024, tol: 1e-6, max_refinements: 14 }
    }
}

/// `½ ∫ |a − b|` on a one-dimensional grid.
pub fn tv_quadrature_1d<A, B>(density_a: A, density_b: B, grid: GridSpec) -> Result<f64>
where
    A: Fn(f64) -> f64,
    B: Fn(f64) -> f64,
{
    if !(grid.hi > grid.lo) || grid.initial_intervals == 0 || !(grid.tol > 0.0) {
        return Err(Error::InvalidParams("grid needs hi > lo, intervals ≥ 1, tol > 0".into()));
    }
    let f = |x: f64| 0.5 * (density_a(x) - density_b(x)).abs();
    let mut n = grid.initial_intervals;
    let mut h = (grid.hi - grid.lo) / n as f64;
    let interior: f64 = (1..n).map(|i| f(grid.lo + i as f64 * h)).sum();
    let mut sum = 0.5 * (f(grid.lo) + f(grid.hi)) + interior;
    let mut current = sum * h;
    let mut last_change = f64::INFINITY;
    for _ in 0..grid.max_refinements {
        // new nodes sit at the midpoints of the current intervals
        let mids: f64 = (0..n).map(|i| f(grid.lo + (i as f64 + 0.5) * h)).sum();
        sum += mids;
        n *= 2;
        h *= 0.5;
        let next = sum * h;
        last_change = (next - current).abs();
        current = next;
        if last_change < grid.tol {
            return Ok(current);
        }
    }
    Err(Error::NonConvergentGrid { last_change })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: Vec<(f64, f64)>,
}

/// Least squares of `log tv` on `log T`.
pub fn rate_fit(points: &[(f64, f64)]) -> Result<RateFit> {
    if let Some(&(t, tv)) = points.iter().find(|&&(t, tv)| !(tv > 0.0 && tv.is_finite() && t > 0.0)) {
        return Err(Error::DegenerateInput(alloc::format!(
            "rate fit needs positive values, got T = {t}, tv = {tv}"
        )));
    }
    let mut distinct: Vec<f64> = points.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::DegenerateInput(alloc::format!(
            "rate fit needs ≥ 3 distinct T, got {}",
            distinct.len()
        )));
    }
    let xy: Vec<(f64, f64)> = points.iter().map(|&(t, tv)| (t.ln(), tv.ln())).collect();
    let (slope, intercept, r_squared) = least_squares(&xy);
    Ok(RateFit { slope, intercept, r_squared, points: points.to_vec() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundValue {
    pub value: f64,
    /// `c (k + log d) log³T / T`.
    pub structure_term: f64,
    /// `c (ε_score + ε_Jacobi) log T`.
    pub error_term: f64,
    /// The bound exceeds one and says nothing about a TV distance.
    pub vacuous: bool,
}

/// `c (k + log d) log³T / T + c (ε_score + ε_Jacobi) log T`.
///
/// Inputs are assumed nonnegative with `T ≥ 2` and `d ≥ 1`.
pub fn theorem_bound(k: f64, d: usize, steps: usize, eps_score: f64, eps_jacobi: f64, c: f64) -> BoundValue {
    let log_t = (steps as f64).ln();
    let structure_term = c * (k + (d as f64).ln()) * log_t.powi(3) / steps as f64;
    let error_term = c * (eps_score + eps_jacobi) * log_t;
    let value = structure_term + error_term;
    BoundValue { value, structure_term, error_term, vacuous: value > 1.0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Vector;
    use crate::schedule::ScheduleParams;
    use crate::validation::oracle::{gaussian_pdf, normal_cdf};
    use alloc::vec;

    fn schedule(steps: usize) -> Schedule {
        Schedule::build(ScheduleParams::with_defaults(steps).unwrap()).unwrap()
    }

    #[test]
    fn identical_laws_give_zero() {
        let s = schedule(20);
        let t = MixtureTarget::isotropic(Vector::from_vec(vec![0.3]), 0.8);
        let pts = crate::sampler::forward_sample(&t, &s, 1, 500, 2).unwrap();
        let lp = pts.iter().map(|y| t.log_marginal_at(NoiseLevel::at_step(&s, 1), y)).collect();
        let batch = TrajectoryBatch::from_parts(1, pts, lp).unwrap();
        let est = tv_monte_carlo(&batch, &t, &s).unwrap();
        assert_eq!((est.value, est.stderr, est.n_used, est.n_flagged), (0.0, 0.0, 500, 0));
    }

    #[test]
    fn disjoint_laws_give_one() {
        let s = schedule(20);
        let t = MixtureTarget::point_mass(Vector::zeros(1));
        // points 100 noise-sd away from the target, claimed density ~ O(1)
        let pts = vec![Vector::from_element(1, 5.0); 10];
        let batch = TrajectoryBatch::from_parts(1, pts, vec![0.0; 10]).unwrap();
        let est = tv_monte_carlo(&batch, &t, &s).unwrap();
        assert!((est.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_flagged_is_an_error() {
        let s = schedule(20);
        let t = MixtureTarget::point_mass(Vector::zeros(1));
        let batch = TrajectoryBatch::from_parts(1, vec![Vector::zeros(1)], vec![f64::NAN]).unwrap();
        assert_eq!(tv_monte_carlo(&batch, &t, &s), Err(Error::AllPointsFlagged));
    }

    #[test]
    fn quadrature_shifted_gaussians_against_cdf_oracle() {
        let tv = tv_quadrature_1d(|x| gaussian_pdf(x, 0.0, 1.0), |x| gaussian_pdf(x, 0.5, 1.0), GridSpec::default())
            .unwrap();
        let closed = 2.0 * normal_cdf(0.25) - 1.0;
        assert!((tv - 0.197_413).abs() < 1e-6, "{tv}");
        assert!((tv - closed).abs() < 1e-6);
    }

    #[test]
    fn quadrature_scale_pair_regression() {
        // closed form via the two crossing points ±sqrt(8 ln2 / 3), evaluated
        // in 40-digit arithmetic before the build
        let tv = tv_quadrature_1d(|x| gaussian_pdf(x, 0.0, 1.0), |x| gaussian_pdf(x, 0.0, 2.0), GridSpec::default())
            .unwrap();
        assert!((tv - 0.322_674_568_834_768_66).abs() < 1e-6, "{tv}");
        assert_eq!(
            tv_quadrature_1d(|x| gaussian_pdf(x, 0.0, 1.0), |x| gaussian_pdf(x, 0.0, 1.0), GridSpec::default()).unwrap(),
            0.0
        );
    }

    #[test]
    fn quadrature_reports_non_convergence() {
        let grid = GridSpec { initial_intervals: 4, max_refinements: 1, tol: 1e-12, ..GridSpec::default() };
        let r = tv_quadrature_1d(|x| gaussian_pdf(x, 0.0, 1.0), |_| 0.0, grid);
        assert!(matches!(r, Err(Error::NonConvergentGrid { .. })));
    }

    #[test]
    fn rate_fit_examples() {
        let fit = rate_fit(&[(100.0, 0.01), (200.0, 0.005), (400.0, 0.0025)]).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12 && (fit.r_squared - 1.0).abs() < 1e-12);
        let flat = rate_fit(&[(100.0, 0.3), (200.0, 0.3), (400.0, 0.3)]).unwrap();
        assert_eq!(flat.slope, 0.0);
        assert!(rate_fit(&[(100.0, 0.3), (200.0, 0.0), (400.0, 0.3)]).is_err());
        assert!(rate_fit(&[(100.0, 0.3), (100.0, 0.2), (400.0, 0.3)]).is_err());
    }

    #[test]
    fn rate_fit_on_polylog_curve() {
        let ts: Vec<f64> = vec![50.0, 100.0, 200.0, 400.0, 800.0, 1600.0];
        let pts: Vec<(f64, f64)> = ts.iter().map(|&t| (t, 4.0 * t.ln().powi(3) / t)).collect();
        let fit = rate_fit(&pts).unwrap();
        // the polylog factor flattens the slope to about −1 + 3/ln T
        assert!((fit.slope + 0.45430160600155156).abs() < 1e-12, "{}", fit.slope);
        assert!((fit.r_squared - 0.9877598929549329).abs() < 1e-9, "{}", fit.r_squared);
    }

    #[test]
    fn bound_examples() {
        let b = theorem_bound(4.0, 32, 1000, 0.0, 0.0, 1.0);
        assert!((b.value - 2.4606).abs() < 1e-3, "{}", b.value);
        assert!(b.vacuous);
        let b8 = theorem_bound(8.0, 32, 1000, 0.0, 0.0, 1.0);
        let ratio = (8.0 + 32f64.ln()) / (4.0 + 32f64.ln());
        assert!((b8.value / b.value - ratio).abs() < 1e-12);
        let b2 = theorem_bound(4.0, 32, 2000, 0.0, 0.0, 1.0);
        let expect = (2000f64.ln().powi(3) / 1000f64.ln().powi(3)) / 2.0;
        assert!((b2.value / b.value - expect).abs() < 1e-12);
        let with_err = theorem_bound(4.0, 32, 1000, 0.1, 0.2, 1.0);
        assert!((with_err.error_term - 0.3 * 1000f64.ln()).abs() < 1e-12);
    }
}
