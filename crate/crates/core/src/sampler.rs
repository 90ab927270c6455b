//! Forward-process simulation and the probability flow ODE reverse sampler.
//!
//! A reverse step maps every point through
//!
//! ```text
//! y ↦ (y + η_t s_t(y)) / √α_t
//! ```
//!
//! and updates its log-density by the change of variables
//! `log p_{Y_{t−1}}(y') = log p_{Y_t}(y) − log|det(I + η_t J_{s_t}(y))| + (d/2) log α_t`.
//! Starting from the exact standard-normal density at `t = T`, the batch
//! therefore carries the exact density of the sampler's own output law.

use alloc::vec::Vec;
// inherent on f64 only with std
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{log_abs_det, Matrix, Vector};
use crate::rng::{ids, standard_normal_vec, stream};
use crate::schedule::{Coefficient, Schedule};
use crate::score_models::ScoreField;
use crate::targets::MixtureTarget;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// `ln(1e-300)`: smaller step-Jacobian determinants flag the point.
const LOG_DET_FLOOR: f64 = -690.775_527_898_213_7;

/// `n` draws of `X_t = √ᾱ_t X_0 + √(1 − ᾱ_t) W`.
pub fn forward_sample(
    target: &MixtureTarget,
    schedule: &Schedule,
    t: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<Vector>> {
    if t < 1 || t > schedule.steps() {
        return Err(Error::StepOutOfRange { t, min: 1, max: schedule.steps() });
    }
    let signal = schedule.alpha_bar(t).sqrt();
    let noise = schedule.one_minus_alpha_bar(t).sqrt();
    let mut noise_rng = stream(seed, ids::FORWARD_NOISE);
    let d = target.dim();
    Ok(target
        .sample_data(n, seed)
        .into_iter()
        .map(|x0| x0 * signal + standard_normal_vec(&mut noise_rng, d) * noise)
        .collect())
}

/// Reverse-process states at a common step, with tracked log-densities.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    t: usize,
    dim: usize,
    points: Vec<Vector>,
    log_density: Vec<f64>,
    log_det_sum: Vec<f64>,
    flagged: Vec<bool>,
}

impl TrajectoryBatch {
    /// Batch from externally produced points and log-densities. Non-finite
    /// log-densities are marked as flagged.
    pub fn from_parts(t: usize, points: Vec<Vector>, log_density: Vec<f64>) -> Result<Self> {
        if points.len() != log_density.len() {
            return Err(Error::DimensionMismatch { expected: points.len(), found: log_density.len() });
        }
        let dim = points.first().map_or(0, |p| p.len());
        if let Some(p) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: p.len() });
        }
        let flagged = log_density.iter().map(|l| !l.is_finite()).collect();
        let n = points.len();
        Ok(TrajectoryBatch { t, dim, points, log_density, log_det_sum: alloc::vec![0.0; n], flagged })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector] {
        &self.points
    }

    pub fn log_density(&self) -> &[f64] {
        &self.log_density
    }

    /// Running sum of `log|det(I + η_s J_{s_s})|` over the steps taken.
    pub fn log_det_sum(&self) -> &[f64] {
        &self.log_det_sum
    }

    pub fn flagged(&self) -> &[bool] {
        &self.flagged
    }

    pub fn flagged_count(&self) -> usize {
        self.flagged.iter().filter(|&&f| f).count()
    }

    /// Splits into `parts` contiguous partitions (the last may be shorter).
    pub fn partition(&self, parts: usize) -> Vec<TrajectoryBatch> {
        let parts = parts.max(1);
        let chunk = self.len().div_ceil(parts).max(1);
        (0..self.len())
            .step_by(chunk)
            .map(|start| {
                let end = (start + chunk).min(self.len());
                TrajectoryBatch {
                    t: self.t,
                    dim: self.dim,
                    points: self.points[start..end].to_vec(),
                    log_density: self.log_density[start..end].to_vec(),
                    log_det_sum: self.log_det_sum[start..end].to_vec(),
                    flagged: self.flagged[start..end].to_vec(),
                }
            })
            .collect()
    }

    /// Concatenates partitions produced by [`partition`](Self::partition).
    pub fn merge(parts: Vec<TrajectoryBatch>) -> Result<Self> {
        let mut iter = parts.into_iter();
        let mut out = iter
            .next()
            .ok_or_else(|| Error::InvalidParams("cannot merge zero partitions".into()))?;
        for p in iter {
            if p.t != out.t || p.dim != out.dim {
                return Err(Error::InvalidParams("partitions at different steps or dimensions".into()));
            }
            out.points.extend(p.points);
            out.log_density.extend(p.log_density);
            out.log_det_sum.extend(p.log_det_sum);
            out.flagged.extend(p.flagged);
        }
        Ok(out)
    }
}

/// `Y_T ~ N(0, I_d)` with exact log-densities.
pub fn init_reverse(schedule: &Schedule, d: usize, n: usize, seed: u64) -> Result<TrajectoryBatch> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidParams("need n ≥ 1 and d ≥ 1".into()));
    }
    let mut rng = stream(seed, ids::REVERSE_INIT);
    let points: Vec<Vector> = (0..n).map(|_| standard_normal_vec(&mut rng, d)).collect();
    let log_density = points
        .iter()
        .map(|y| -0.5 * (d as f64 * LN_2PI + y.norm_squared()))
        .collect();
    Ok(TrajectoryBatch {
        t: schedule.steps(),
        dim: d,
        points,
        log_density,
        log_det_sum: alloc::vec![0.0; n],
        flagged: alloc::vec![false; n],
    })
}

/// Per-step summary emitted by [`run_reverse`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    /// Step the batch moved away from (`t → t − 1`).
    pub t: usize,
    pub mean_abs_log_det: f64,
    /// Points newly flagged at this step.
    pub flagged: usize,
}

/// One step `t → t − 1`.
pub fn reverse_step<F: ScoreField>(
    batch: TrajectoryBatch,
    field: &F,
    schedule: &Schedule,
    choice: Coefficient,
) -> Result<TrajectoryBatch> {
    reverse_step_with_diagnostics(batch, field, schedule, choice).map(|(b, _)| b)
}

fn reverse_step_with_diagnostics<F: ScoreField>(
    mut batch: TrajectoryBatch,
    field: &F,
    schedule: &Schedule,
    choice: Coefficient,
) -> Result<(TrajectoryBatch, StepDiagnostics)> {
    let t = batch.t;
    if t < 2 || t > schedule.steps() {
        return Err(Error::StepOutOfRange { t, min: 2, max: schedule.steps() });
    }
    if field.dim() != batch.dim {
        return Err(Error::DimensionMismatch { expected: batch.dim, found: field.dim() });
    }
    let eta = schedule.coefficient(t, choice)?;
    let alpha = schedule.alpha(t);
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let volume = 0.5 * batch.dim as f64 * alpha.ln();

    let mut abs_sum = 0.0;
    let mut newly_flagged = 0;
    for i in 0..batch.points.len() {
        let (s, jac) = field.eval_with_jacobian(t, &batch.points[i]);
        let step_jac = step_matrix(jac, eta);
        let y = &mut batch.points[i];
        y.axpy(eta, &s, 1.0);
        *y *= inv_sqrt_alpha;
        match log_abs_det(step_jac) {
            Some(ld) if ld >= LOG_DET_FLOOR => {
                batch.log_density[i] += volume - ld;
                batch.log_det_sum[i] += ld;
                abs_sum += ld.abs();
            }
            _ => {
                if !batch.flagged[i] {
                    newly_flagged += 1;
                }
                batch.flagged[i] = true;
                batch.log_density[i] = f64::NAN;
            }
        }
    }
    batch.t = t - 1;
    let diag = StepDiagnostics {
        t,
        mean_abs_log_det: abs_sum / batch.points.len().max(1) as f64,
        flagged: newly_flagged,
    };
    Ok((batch, diag))
}

/// `I + η J`.
fn step_matrix(mut jac: Matrix, eta: f64) -> Matrix {
    jac *= eta;
    for j in 0..jac.nrows() {
        jac[(j, j)] += 1.0;
    }
    jac
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReverseRun {
    /// Batch at `t = 1`.
    pub batch: TrajectoryBatch,
    /// One entry per step, `t = T` first.
    pub diagnostics: Vec<StepDiagnostics>,
}

impl ReverseRun {
    pub fn flagged_count(&self) -> usize {
        self.batch.flagged_count()
    }
}

/// Runs `t = T, …, 2` from a fresh `N(0, I)` batch.
pub fn run_reverse<F: ScoreField>(
    schedule: &Schedule,
    d: usize,
    field: &F,
    n: usize,
    seed: u64,
    choice: Coefficient,
) -> Result<ReverseRun> {
    run_reverse_with(schedule, d, field, n, seed, choice, |_| {})
}

/// [`run_reverse`] with an observer called on the initial batch and after
/// every step.
pub fn run_reverse_with<F: ScoreField, O: FnMut(&TrajectoryBatch)>(
    schedule: &Schedule,
    d: usize,
    field: &F,
    n: usize,
    seed: u64,
    choice: Coefficient,
    observer: O,
) -> Result<ReverseRun> {
    let batch = init_reverse(schedule, d, n, seed)?;
    continue_reverse(batch, schedule, field, choice, observer)
}

/// Runs an existing batch down to `t = 1`.
pub fn continue_reverse<F: ScoreField, O: FnMut(&TrajectoryBatch)>(
    mut batch: TrajectoryBatch,
    schedule: &Schedule,
    field: &F,
    choice: Coefficient,
    mut observer: O,
) -> Result<ReverseRun> {
    if field.steps() != schedule.steps() {
        return Err(Error::InvalidParams(alloc::format!(
            "field defined for T = {}, schedule has T = {}",
            field.steps(),
            schedule.steps()
        )));
    }
    observer(&batch);
    let mut diagnostics = Vec::with_capacity(batch.t.saturating_sub(1));
    while batch.t > 1 {
        let (next, diag) = reverse_step_with_diagnostics(batch, field, schedule, choice)?;
        batch = next;
        diagnostics.push(diag);
        observer(&batch);
    }
    Ok(ReverseRun { batch, diagnostics })
}
