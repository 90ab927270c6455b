//! Finite mixtures of (possibly degenerate) Gaussians and point masses.
//!
//! Component `i` is `N(μ_i, L_i L_iᵀ)` with a `d × r_i` factor `L_i`; `r_i = 0`
//! is a point mass. Under the forward process the time-`t` marginal stays a
//! mixture with the same weights,
//!
//! ```text
//! p_{X_t} = Σ_i w_i · N(√ᾱ_t μ_i, ᾱ_t Σ_i + (1 − ᾱ_t) I)
//! ```
//!
//! so its log-density, score, score Jacobian and the posterior law of `X_0`
//! given `X_t = x` are all closed form. Each component caches the eigenbasis
//! `U_i` of `Σ_i` restricted to its range; with `v_j = ᾱ λ_j + (1 − ᾱ)` every
//! per-component quantity costs `O(d r_i)` (or `O(d² r_i)` for matrices).

use alloc::format;
use alloc::vec::Vec;
use rand::Rng;
// inherent on f64 only with std
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{orthonormal_frame, range_eigen, Matrix, Vector};
use crate::rng::{ids, standard_normal_vec, stream};
use crate::schedule::Schedule;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// `ln(1e-300)`: responsibilities this far below the largest one are pruned.
const LOG_PRUNE: f64 = -690.775_527_898_213_7;
const WEIGHT_TOL: f64 = 1e-12;

/// A point `x` at forward step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisedQuery {
    pub t: usize,
    pub x: Vector,
}

impl NoisedQuery {
    pub fn new(t: usize, x: Vector) -> Self {
        NoisedQuery { t, x }
    }
}

/// Signal level `ᾱ` together with its accurately computed complement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevel {
    pub alpha_bar: f64,
    pub one_minus_alpha_bar: f64,
}

impl NoiseLevel {
    pub fn new(alpha_bar: f64) -> Self {
        NoiseLevel { alpha_bar, one_minus_alpha_bar: 1.0 - alpha_bar }
    }

    /// # Panics
    /// If `t` is outside `1..=T`.
    pub fn at_step(schedule: &Schedule, t: usize) -> Self {
        NoiseLevel {
            alpha_bar: schedule.alpha_bar(t),
            one_minus_alpha_bar: schedule.one_minus_alpha_bar(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: Vector,
    /// Covariance factor `L` (`d × r`), `Σ = L Lᵀ`.
    pub factor: Matrix,
    basis: Matrix,
    eigenvalues: Vec<f64>,
}

impl Component {
    fn new(weight: f64, mean: Vector, factor: Matrix) -> Self {
        let (basis, eigenvalues) = range_eigen(&factor, 1e-14);
        Component { weight, mean, factor, basis, eigenvalues }
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn covariance_trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// Log-density, score and local coordinates of this component's time-`t`
    /// Gaussian at `x`.
    fn evaluate(&self, level: NoiseLevel, x: &Vector) -> ComponentEval {
        let sigma2 = level.one_minus_alpha_bar;
        let resid = x - &self.mean * level.alpha_bar.sqrt();
        let coords = self.basis.tr_mul(&resid);
        let perp = &resid - &self.basis * &coords;
        let inv_var: Vec<f64> = self
            .eigenvalues
            .iter()
            .map(|l| 1.0 / (level.alpha_bar * l + sigma2))
            .collect();

        let d = x.len() as f64;
        let r = self.rank() as f64;
        let mut quad = perp.norm_squared() / sigma2;
        let mut log_det = (d - r) * sigma2.ln();
        for (c, iv) in coords.iter().zip(&inv_var) {
            quad += c * c * iv;
            log_det -= iv.ln();
        }
        let log_density = -0.5 * (d * LN_2PI + log_det + quad);

        let scaled = Vector::from_iterator(coords.len(), coords.iter().zip(&inv_var).map(|(c, iv)| c * iv));
        let score = -(&self.basis * scaled + &perp / sigma2);
        ComponentEval { log_density, coords, inv_var, score }
    }

    /// `−(ᾱ Σ + (1 − ᾱ) I)^{-1}`.
    fn neg_precision(&self, level: NoiseLevel, d: usize) -> Matrix {
        let sigma2 = level.one_minus_alpha_bar;
        let mut m = Matrix::from_diagonal_element(d, d, -1.0 / sigma2);
        if self.rank() > 0 {
            let diag = Vector::from_iterator(
                self.rank(),
                self.eigenvalues.iter().map(|l| 1.0 / sigma2 - 1.0 / (level.alpha_bar * l + sigma2)),
            );
            let scaled = &self.basis * Matrix::from_diagonal(&diag);
            m.gemm(1.0, &scaled, &self.basis.transpose(), 1.0);
        }
        m
    }

    /// Posterior mean of `X_0` given `X_t = x` under this component.
    fn posterior_mean(&self, level: NoiseLevel, eval: &ComponentEval) -> Vector {
        if self.rank() == 0 {
            return self.mean.clone();
        }
        let w = Vector::from_iterator(
            self.rank(),
            self.eigenvalues
                .iter()
                .zip(eval.coords.iter().zip(&eval.inv_var))
                .map(|(l, (c, iv))| level.alpha_bar.sqrt() * l * iv * c),
        );
        &self.mean + &self.basis * w
    }

    /// Posterior covariance eigenvalues `λ_j (1 − ᾱ) / v_j` on the basis.
    fn posterior_spread(&self, level: NoiseLevel) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .map(|l| l * level.one_minus_alpha_bar / (level.alpha_bar * l + level.one_minus_alpha_bar))
            .collect()
    }
}

struct ComponentEval {
    log_density: f64,
    coords: Vector,
    inv_var: Vec<f64>,
    score: Vector,
}

/// Posterior moments of `X_0` given `X_t = x`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments {
    pub mean: Vector,
    pub covariance: Matrix,
    /// `E[‖X_0 − x̂_0‖² | X_t = x]`, accumulated per component rather than read
    /// off the covariance diagonal.
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureTarget {
    dim: usize,
    components: Vec<Component>,
    log_weights: Vec<f64>,
    support_radius: f64,
    intrinsic_dim: Option<usize>,
    frame: Option<Matrix>,
}

impl MixtureTarget {
    /// Components are `(weight, mean, factor)` triples.
    pub fn new(dim: usize, parts: Vec<(f64, Vector, Matrix)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParams("ambient dimension must be positive".into()));
        }
        if parts.is_empty() {
            return Err(Error::InvalidParams("mixture needs at least one component".into()));
        }
        let total: f64 = parts.iter().map(|p| p.0).sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidParams(format!("weights sum to {total}, not 1")));
        }
        let mut components = Vec::with_capacity(parts.len());
        for (i, (w, mean, factor)) in parts.into_iter().enumerate() {
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::InvalidParams(format!("component {i}: weight {w} not in (0, 1]")));
            }
            if mean.len() != dim || factor.nrows() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: if mean.len() != dim { mean.len() } else { factor.nrows() },
                });
            }
            if factor.ncols() > dim {
                return Err(Error::InvalidParams(format!(
                    "component {i}: factor rank {} exceeds d = {dim}",
                    factor.ncols()
                )));
            }
            components.push(Component::new(w, mean, factor));
        }
        let log_weights = components.iter().map(|c| c.weight.ln()).collect();
        let max_mean = components.iter().map(|c| c.mean.norm()).fold(0.0_f64, f64::max);
        let support_radius = if components.iter().all(|c| c.rank() == 0) {
            max_mean
        } else {
            f64::INFINITY
        };
        Ok(MixtureTarget {
            dim,
            components,
            log_weights,
            support_radius,
            intrinsic_dim: None,
            frame: None,
        })
    }

    pub fn point_mass(mean: Vector) -> Self {
        let d = mean.len();
        Self::new(d, alloc::vec![(1.0, mean, Matrix::zeros(d, 0))]).expect("valid point mass")
    }

    pub fn gaussian(mean: Vector, factor: Matrix) -> Result<Self> {
        let d = mean.len();
        let k = factor.ncols();
        Ok(Self::new(d, alloc::vec![(1.0, mean, factor)])?.with_intrinsic_dim(k))
    }

    /// `N(mean, σ² I)`.
    pub fn isotropic(mean: Vector, sigma: f64) -> Self {
        let d = mean.len();
        Self::gaussian(mean, Matrix::from_diagonal_element(d, d, sigma)).expect("valid isotropic Gaussian")
    }

    pub fn standard_normal(d: usize) -> Self {
        Self::isotropic(Vector::zeros(d), 1.0)
    }

    /// `N(mean, scale² U Uᵀ)` with `U` a random orthonormal `d × k` frame
    /// drawn from `seed`. The frame is kept for reporting.
    pub fn rank_k_gaussian(d: usize, k: usize, scale: f64, mean: Vector, seed: u64) -> Result<Self> {
        if k > d {
            return Err(Error::InvalidParams(format!("k = {k} exceeds d = {d}")));
        }
        let frame = orthonormal_frame(&mut stream(seed, ids::FRAME), d, k);
        let mut target = Self::gaussian(mean, &frame * scale)?;
        target.frame = Some(frame);
        Ok(target)
    }

    /// Equal-weight point masses.
    pub fn point_cloud(points: &[Vector]) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::InvalidParams("empty point cloud".into()));
        }
        let d = points[0].len();
        let w = 1.0 / n as f64;
        let parts = points.iter().map(|p| (w, p.clone(), Matrix::zeros(d, 0))).collect();
        let mut target = Self::new(d, parts)?;
        // renormalise exactly so n·(1/n) rounding never trips the weight check
        for c in &mut target.components {
            c.weight = w;
        }
        Ok(target)
    }

    /// `n` uniform points on `[0, 1]^k`, embedded by a random orthonormal frame.
    pub fn embedded_cube_cloud(d: usize, k: usize, n: usize, seed: u64) -> Result<Self> {
        let (points, frame) = crate::geometry::embedded_cube(d, k, n, 1.0, seed)?;
        let mut target = Self::point_cloud(&points)?.with_intrinsic_dim(k);
        target.frame = Some(frame);
        Ok(target)
    }

    pub fn with_support_radius(mut self, radius: f64) -> Result<Self> {
        let max_mean = self.components.iter().map(|c| c.mean.norm()).fold(0.0_f64, f64::max);
        if !(radius >= max_mean) {
            return Err(Error::InvalidParams(format!(
                "support radius {radius} below largest mean norm {max_mean}"
            )));
        }
        self.support_radius = radius;
        Ok(self)
    }

    pub fn with_intrinsic_dim(mut self, k: usize) -> Self {
        self.intrinsic_dim = Some(k);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    /// Nominal intrinsic dimension recorded at construction, if any.
    pub fn intrinsic_dim(&self) -> Option<usize> {
        self.intrinsic_dim
    }

    /// Embedding frame for targets built from one.
    pub fn frame(&self) -> Option<&Matrix> {
        self.frame.as_ref()
    }

    /// Draws `n` points from the data distribution.
    pub fn sample_data(&self, n: usize, seed: u64) -> Vec<Vector> {
        let mut rng = stream(seed, ids::DATA);
        self.sample_with(&mut rng, n)
    }

    pub(crate) fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<Vector> {
        let mut cumulative = Vec::with_capacity(self.components.len());
        let mut acc = 0.0;
        for c in &self.components {
            acc += c.weight;
            cumulative.push(acc);
        }
        (0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * acc;
                let i = cumulative.partition_point(|&c| c <= u).min(self.components.len() - 1);
                let c = &self.components[i];
                if c.factor.ncols() == 0 {
                    c.mean.clone()
                } else {
                    let z = standard_normal_vec(rng, c.factor.ncols());
                    &c.mean + &c.factor * z
                }
            })
            .collect()
    }

    fn check_query(&self, schedule: &Schedule, q: &NoisedQuery) -> Result<NoiseLevel> {
        if q.t < 1 || q.t > schedule.steps() {
            return Err(Error::StepOutOfRange { t: q.t, min: 1, max: schedule.steps() });
        }
        if q.x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: q.x.len() });
        }
        Ok(NoiseLevel::at_step(schedule, q.t))
    }

    /// Per-component evaluations and normalised responsibilities, pruned below
    /// relative weight `1e-300`.
    fn responsibilities(&self, level: NoiseLevel, x: &Vector) -> (f64, Vec<(f64, usize, ComponentEval)>) {
        let evals: Vec<(f64, ComponentEval)> = self
            .components
            .iter()
            .zip(&self.log_weights)
            .map(|(c, lw)| {
                let e = c.evaluate(level, x);
                (lw + e.log_density, e)
            })
            .collect();
        let top = evals.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
        let kept: Vec<(f64, usize, ComponentEval)> = evals
            .into_iter()
            .enumerate()
            .filter(|(_, (l, _))| l - top >= LOG_PRUNE)
            .map(|(i, (l, e))| (l, i, e))
            .collect();
        let total: f64 = kept.iter().map(|(l, _, _)| (l - top).exp()).sum();
        let log_norm = top + total.ln();
        let resp = kept
            .into_iter()
            .map(|(l, i, e)| ((l - log_norm).exp(), i, e))
            .collect();
        (log_norm, resp)
    }

    pub fn log_marginal_at(&self, level: NoiseLevel, x: &Vector) -> f64 {
        self.responsibilities(level, x).0
    }

    pub fn score_at(&self, level: NoiseLevel, x: &Vector) -> Vector {
        let (_, resp) = self.responsibilities(level, x);
        mix_scores(self.dim, &resp)
    }

    /// Score and its Jacobian (the Hessian of `log p_{X_t}`):
    /// `Σ γ_i (−C_i^{-1}) + Σ γ_i (s_i − s)(s_i − s)ᵀ`.
    pub fn score_and_jacobian_at(&self, level: NoiseLevel, x: &Vector) -> (Vector, Matrix) {
        let (_, resp) = self.responsibilities(level, x);
        let score = mix_scores(self.dim, &resp);
        let mut jac = Matrix::zeros(self.dim, self.dim);
        let mut point_mass_weight = 0.0;
        for (g, i, e) in &resp {
            let c = &self.components[*i];
            if c.rank() == 0 {
                point_mass_weight += g;
            } else {
                jac += c.neg_precision(level, self.dim) * *g;
            }
            let diff = &e.score - &score;
            jac.ger(*g, &diff, &diff, 1.0);
        }
        if point_mass_weight > 0.0 {
            for j in 0..self.dim {
                jac[(j, j)] -= point_mass_weight / level.one_minus_alpha_bar;
            }
        }
        (score, jac)
    }

    pub fn posterior_moments_at(&self, level: NoiseLevel, x: &Vector) -> PosteriorMoments {
        let (_, resp) = self.responsibilities(level, x);
        let means: Vec<Vector> = resp
            .iter()
            .map(|(_, i, e)| self.components[*i].posterior_mean(level, e))
            .collect();
        let mut mean = Vector::zeros(self.dim);
        for ((g, _, _), m) in resp.iter().zip(&means) {
            mean.axpy(*g, m, 1.0);
        }
        let mut covariance = Matrix::zeros(self.dim, self.dim);
        let mut spread = 0.0;
        for ((g, i, _), m) in resp.iter().zip(&means) {
            let c = &self.components[*i];
            if c.rank() > 0 {
                let within = c.posterior_spread(level);
                spread += g * within.iter().sum::<f64>();
                let scaled = &c.basis * Matrix::from_diagonal(&Vector::from_vec(within));
                covariance.gemm(*g, &scaled, &c.basis.transpose(), 1.0);
            }
            let diff = m - &mean;
            spread += g * diff.norm_squared();
            covariance.ger(*g, &diff, &diff, 1.0);
        }
        PosteriorMoments { mean, covariance, spread }
    }

    /// Score through the posterior mean, `−(x − √ᾱ x̂_0)/(1 − ᾱ)`.
    pub fn score_via_posterior_mean_at(&self, level: NoiseLevel, x: &Vector) -> Vector {
        let m = self.posterior_moments_at(level, x).mean;
        -(x - m * level.alpha_bar.sqrt()) / level.one_minus_alpha_bar
    }

    /// `log p_{X_t}(x)`.
    pub fn log_marginal(&self, schedule: &Schedule, q: &NoisedQuery) -> Result<f64> {
        let level = self.check_query(schedule, q)?;
        Ok(self.log_marginal_at(level, &q.x))
    }

    pub fn score(&self, schedule: &Schedule, q: &NoisedQuery) -> Result<Vector> {
        let level = self.check_query(schedule, q)?;
        Ok(self.score_at(level, &q.x))
    }

    pub fn jacobian(&self, schedule: &Schedule, q: &NoisedQuery) -> Result<Matrix> {
        let level = self.check_query(schedule, q)?;
        Ok(self.score_and_jacobian_at(level, &q.x).1)
    }

    pub fn posterior_moments(&self, schedule: &Schedule, q: &NoisedQuery) -> Result<PosteriorMoments> {
        let level = self.check_query(schedule, q)?;
        Ok(self.posterior_moments_at(level, &q.x))
    }
}

fn mix_scores(d: usize, resp: &[(f64, usize, ComponentEval)]) -> Vector {
    let mut s = Vector::zeros(d);
    for (g, _, e) in resp {
        s.axpy(*g, &e.score, 1.0);
    }
    s
}
