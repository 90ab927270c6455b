//! Randomized trials of every check, summarised one row per check.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
// inherent on f64 only with std
#[allow(unused_imports)]
use num_traits::Float;

use super::{check_jacobian_identity_at, check_logdet, default_step, finite_diff_jacobian, jacobian_identity, CheckResult};
use crate::error::Result;
use crate::linalg::{max_abs, spectral_norm, Matrix, Vector};
use crate::rng::{derive_seed, ids, standard_normal_vec, stream, StreamRng};
use crate::schedule::{validate_schedule, Schedule, ScheduleParams};
use crate::targets::{MixtureTarget, NoiseLevel};

/// `‖s − s_via_posterior_mean‖ ≤ TWEEDIE_TOL (1 + ‖s‖)`.
pub const TWEEDIE_TOL: f64 = 1e-10;
/// Entrywise asymmetry of the score Jacobian, relative to its largest entry.
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub seed: u64,
    pub logdet_trials: usize,
    pub identity_trials: usize,
    /// Tolerance of the Jacobian identity, relative to the cancelling terms.
    pub identity_tol: f64,
    pub fd_trials: usize,
    pub steps_grid: Vec<usize>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 0,
            logdet_trials: 10_000,
            identity_trials: 1_000,
            identity_tol: 1e-6,
            fd_trials: 200,
            steps_grid: vec![50, 100, 200, 400, 800],
        }
    }
}

/// Aggregate over the trials of one check. `min_slack` is the tightest margin
/// seen (negative when some trial failed).
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRow {
    pub check: String,
    pub trials: usize,
    pub failures: usize,
    pub min_slack: f64,
    /// Context of the first failing trial, enough to replay it.
    pub first_failure: Option<String>,
}

impl SuiteRow {
    fn new(check: &str) -> Self {
        SuiteRow { check: check.into(), trials: 0, failures: 0, min_slack: f64::INFINITY, first_failure: None }
    }

    fn record(&mut self, result: &CheckResult, replay: &str) {
        self.trials += 1;
        if result.measured_slack < self.min_slack || result.measured_slack.is_nan() {
            self.min_slack = result.measured_slack;
        }
        if !result.passed {
            self.failures += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(format!("{replay} {}", result.context));
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

pub fn all_passed(rows: &[SuiteRow]) -> bool {
    rows.iter().all(SuiteRow::passed)
}

pub fn run_suite(config: &SuiteConfig) -> Result<Vec<SuiteRow>> {
    let mut rows = vec![logdet_rows(config)];
    rows.extend(schedule_rows(config)?);
    rows.extend(target_rows(config)?);
    Ok(rows)
}

fn trial_rng(seed: u64, check: u64, trial: usize) -> StreamRng {
    stream(derive_seed(derive_seed(seed, check), trial as u64), ids::TRIALS)
}

fn logdet_rows(config: &SuiteConfig) -> SuiteRow {
    let mut row = SuiteRow::new("logdet_lower_bound");
    for trial in 0..config.logdet_trials {
        let mut rng = trial_rng(config.seed, 1, trial);
        let d = rng.random_range(1..=8);
        let mut a = Matrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        if rng.random_bool(0.5) {
            a = &a + a.transpose();
        }
        let norm = spectral_norm(&a);
        if norm > 0.0 {
            a *= 0.25 * rng.random::<f64>() / norm;
        }
        let replay = format!("seed={} trial={trial}", config.seed);
        match check_logdet(&a) {
            Ok(r) => row.record(&r, &replay),
            Err(e) => row.record(&CheckResult::new("logdet_lower_bound", false, f64::NAN, format!("{e}")), &replay),
        }
    }
    row
}

fn schedule_rows(config: &SuiteConfig) -> Result<Vec<SuiteRow>> {
    let names = ["alpha_lower_bound", "step_ratio_bound", "coefficient_sandwich"];
    let mut rows: Vec<SuiteRow> = names.iter().map(|n| SuiteRow::new(&format!("schedule_{n}"))).collect();
    for &steps in &config.steps_grid {
        let schedule = Schedule::build(ScheduleParams::with_defaults(steps)?)?;
        let report = validate_schedule(&schedule);
        for (row, name) in rows.iter_mut().zip(names) {
            if let Some(c) = report.check(name) {
                row.record(c, &format!("T={steps}"));
            }
        }
    }
    Ok(rows)
}

/// A random analytic target of one of the supported families.
pub fn random_target(rng: &mut StreamRng) -> Result<MixtureTarget> {
    let d = rng.random_range(1..=6);
    let family = rng.random_range(0..5);
    let mean = |rng: &mut StreamRng| standard_normal_vec(rng, d);
    Ok(match family {
        0 => MixtureTarget::point_mass(mean(rng)),
        1 => MixtureTarget::isotropic(mean(rng), rng.random_range(0.05..2.0)),
        2 => {
            let k = rng.random_range(1..=d);
            let m = mean(rng);
            MixtureTarget::rank_k_gaussian(d, k, rng.random_range(0.2..2.0), m, rng.random())?
        }
        3 => {
            let n = rng.random_range(2..=8);
            let pts: Vec<Vector> = (0..n).map(|_| mean(rng)).collect();
            MixtureTarget::point_cloud(&pts)?
        }
        _ => {
            let m = rng.random_range(2..=4);
            let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let parts = raw
                .iter()
                .map(|w| {
                    let rank = rng.random_range(0..=d);
                    let factor = Matrix::from_fn(d, rank, |_, _| 0.6 * rng.sample::<f64, _>(rand_distr::StandardNormal));
                    (w / total, mean(rng) * 1.5, factor)
                })
                .collect();
            MixtureTarget::new(d, parts)?
        }
    })
}

/// A query drawn from the forward marginal at `t`.
fn forward_query(rng: &mut StreamRng, target: &MixtureTarget, schedule: &Schedule, t: usize) -> Vector {
    let x0 = target.sample_with(rng, 1).pop().expect("one sample");
    let z = standard_normal_vec(rng, target.dim());
    x0 * schedule.alpha_bar(t).sqrt() + z * schedule.one_minus_alpha_bar(t).sqrt()
}

fn target_rows(config: &SuiteConfig) -> Result<Vec<SuiteRow>> {
    let mut identity = SuiteRow::new("jacobian_identity");
    let mut sign = SuiteRow::new("identity_trace_nonnegative");
    let mut tweedie = SuiteRow::new("tweedie_consistency");
    let mut symmetry = SuiteRow::new("jacobian_symmetry");
    let mut fd = SuiteRow::new("jacobian_finite_difference");
    let grid = if config.steps_grid.is_empty() { vec![100] } else { config.steps_grid.clone() };
    let schedules: Vec<Schedule> = grid
        .iter()
        .map(|&s| ScheduleParams::with_defaults(s).and_then(Schedule::build))
        .collect::<Result<_>>()?;

    for trial in 0..config.identity_trials.max(config.fd_trials) {
        let mut rng = trial_rng(config.seed, 2, trial);
        let target = random_target(&mut rng)?;
        let schedule = &schedules[rng.random_range(0..schedules.len())];
        let t = rng.random_range(2..=schedule.steps());
        let x = forward_query(&mut rng, &target, schedule, t);
        let replay = format!("seed={} trial={trial} T={}", config.seed, schedule.steps());
        let level = NoiseLevel::at_step(schedule, t);
        let (s, jac) = target.score_and_jacobian_at(level, &x);

        if trial < config.identity_trials {
            identity.record(&check_jacobian_identity_at(&target, schedule, t, &x, config.identity_tol)?, &replay);
            let id = jacobian_identity(&target, schedule, t, &x)?;
            sign.record(
                &CheckResult::new("identity_trace_nonnegative", id.rhs_trace >= 0.0, id.rhs_trace, format!("t={t}")),
                &replay,
            );

            let via_mean = target.score_via_posterior_mean_at(level, &x);
            let bound = TWEEDIE_TOL * (1.0 + s.norm());
            let err = (&via_mean - &s).norm();
            tweedie.record(&CheckResult::new("tweedie_consistency", err <= bound, bound - err, format!("t={t}")), &replay);

            let bound = SYMMETRY_TOL * max_abs(&jac).max(1.0);
            let asym = max_abs(&(&jac - jac.transpose()));
            symmetry.record(&CheckResult::new("jacobian_symmetry", asym <= bound, bound - asym, format!("t={t}")), &replay);
        }
        if trial < config.fd_trials {
            let numeric = finite_diff_jacobian(|y| target.score_at(level, y), &x, default_step(&x));
            let err = max_abs(&(&numeric - &jac)) / max_abs(&jac).max(1.0);
            // truncation grows with curvature, which is largest at small noise
            let tol = 1e-5 / level.one_minus_alpha_bar.min(1.0);
            fd.record(&CheckResult::new("jacobian_finite_difference", err <= tol, tol - err, format!("t={t}")), &replay);
        }
    }
    Ok(vec![identity, sign, tweedie, symmetry, fd])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes_and_is_reproducible() {
        let config = SuiteConfig {
            seed: 3,
            logdet_trials: 300,
            identity_trials: 100,
            fd_trials: 30,
            steps_grid: vec![50, 200],
            ..SuiteConfig::default()
        };
        let rows = run_suite(&config).unwrap();
        for r in &rows {
            assert!(r.passed(), "{r:?}");
            assert!(r.trials > 0, "{}", r.check);
        }
        assert_eq!(rows, run_suite(&config).unwrap());
    }
}
