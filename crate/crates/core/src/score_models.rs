//! Score fields: the exact mixture score, analytic perturbations of it, and
//! the pointwise / time-averaged score and Jacobian error functionals.

use alloc::vec::Vec;
use core::f64::consts::TAU;
use rand::Rng;
// inherent on f64 only with std
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{mean_and_stderr, trace, Matrix, Vector};
use crate::rng::{derive_seed, ids, standard_normal_vec, stream};
use crate::sampler::forward_sample;
use crate::schedule::Schedule;
use crate::targets::{MixtureTarget, NoiseLevel};

/// Evaluable score `s_t(x)` with Jacobian, for steps `1..=T`.
///
/// Implementations must be deterministic in `(t, x)`.
pub trait ScoreField {
    fn dim(&self) -> usize;

    /// Number of steps `T` the field is defined for.
    fn steps(&self) -> usize;

    fn eval(&self, t: usize, x: &Vector) -> Vector {
        self.eval_with_jacobian(t, x).0
    }

    fn jacobian(&self, t: usize, x: &Vector) -> Matrix {
        self.eval_with_jacobian(t, x).1
    }

    fn eval_with_jacobian(&self, t: usize, x: &Vector) -> (Vector, Matrix);

    fn descriptor(&self) -> FieldDescriptor;
}

impl<F: ScoreField + ?Sized> ScoreField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn steps(&self) -> usize {
        (**self).steps()
    }
    fn eval(&self, t: usize, x: &Vector) -> Vector {
        (**self).eval(t, x)
    }
    fn jacobian(&self, t: usize, x: &Vector) -> Matrix {
        (**self).jacobian(t, x)
    }
    fn eval_with_jacobian(&self, t: usize, x: &Vector) -> (Vector, Matrix) {
        (**self).eval_with_jacobian(t, x)
    }
    fn descriptor(&self) -> FieldDescriptor {
        (**self).descriptor()
    }
}

/// Provenance of a score field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldDescriptor {
    Exact,
    Zero,
    Perturbed(PerturbationSpec),
}

/// `∇ log p_{X_t}` of a mixture target.
#[derive(Debug, Clone, Copy)]
pub struct ExactScore<'a> {
    target: &'a MixtureTarget,
    schedule: &'a Schedule,
}

impl<'a> ExactScore<'a> {
    pub fn new(target: &'a MixtureTarget, schedule: &'a Schedule) -> Self {
        ExactScore { target, schedule }
    }
}

impl ScoreField for ExactScore<'_> {
    fn dim(&self) -> usize {
        self.target.dim()
    }
    fn steps(&self) -> usize {
        self.schedule.steps()
    }
    fn eval(&self, t: usize, x: &Vector) -> Vector {
        self.target.score_at(NoiseLevel::at_step(self.schedule, t), x)
    }
    fn eval_with_jacobian(&self, t: usize, x: &Vector) -> (Vector, Matrix) {
        self.target.score_and_jacobian_at(NoiseLevel::at_step(self.schedule, t), x)
    }
    fn descriptor(&self) -> FieldDescriptor {
        FieldDescriptor::Exact
    }
}

/// `s_t ≡ 0`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroScore {
    pub dim: usize,
    pub steps: usize,
}

impl ScoreField for ZeroScore {
    fn dim(&self) -> usize {
        self.dim
    }
    fn steps(&self) -> usize {
        self.steps
    }
    fn eval_with_jacobian(&self, _t: usize, _x: &Vector) -> (Vector, Matrix) {
        (Vector::zeros(self.dim), Matrix::zeros(self.dim, self.dim))
    }
    fn descriptor(&self) -> FieldDescriptor {
        FieldDescriptor::Zero
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PerturbationKind {
    None,
    /// Fixed unit vector.
    ConstantBias,
    /// Fixed direction projected orthogonally to `s★_t(x)`, renormalised.
    Tangential,
    /// `s_t = (1 + δ) s★_t`.
    Gain,
    /// Fixed low-frequency trigonometric vector field.
    SmoothField,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 5] = [
        PerturbationKind::None,
        PerturbationKind::ConstantBias,
        PerturbationKind::Tangential,
        PerturbationKind::Gain,
        PerturbationKind::SmoothField,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PerturbationKind::None => "none",
            PerturbationKind::ConstantBias => "constant_bias",
            PerturbationKind::Tangential => "tangential",
            PerturbationKind::Gain => "gain",
            PerturbationKind::SmoothField => "smooth_field",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub delta: f64,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(kind: PerturbationKind, delta: f64, seed: u64) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParams(alloc::format!("perturbation magnitude {delta} must be ≥ 0")));
        }
        Ok(PerturbationSpec { kind, delta, seed })
    }

    pub fn none() -> Self {
        PerturbationSpec { kind: PerturbationKind::None, delta: 0.0, seed: 0 }
    }
}

const SMOOTH_MODES: usize = 4;

#[derive(Debug, Clone)]
struct SmoothModes {
    amplitudes: Vec<Vector>,
    frequencies: Vec<Vector>,
    phases: Vec<f64>,
}

impl SmoothModes {
    fn draw(d: usize, seed: u64) -> Self {
        let mut rng = stream(derive_seed(seed, 1), ids::PERTURBATION);
        let amp_scale = (2.0 / (SMOOTH_MODES * d) as f64).sqrt();
        let freq_scale = 1.0 / (d as f64).sqrt();
        let mut amplitudes = Vec::with_capacity(SMOOTH_MODES);
        let mut frequencies = Vec::with_capacity(SMOOTH_MODES);
        let mut phases = Vec::with_capacity(SMOOTH_MODES);
        for _ in 0..SMOOTH_MODES {
            amplitudes.push(standard_normal_vec(&mut rng, d) * amp_scale);
            frequencies.push(standard_normal_vec(&mut rng, d) * freq_scale);
            phases.push(rng.random::<f64>() * TAU);
        }
        SmoothModes { amplitudes, frequencies, phases }
    }

    fn eval_with_jacobian(&self, x: &Vector) -> (Vector, Matrix) {
        let d = x.len();
        let mut u = Vector::zeros(d);
        let mut jac = Matrix::zeros(d, d);
        for ((a, w), phase) in self.amplitudes.iter().zip(&self.frequencies).zip(&self.phases) {
            let arg = w.dot(x) + phase;
            u.axpy(arg.sin(), a, 1.0);
            jac.ger(arg.cos(), a, w, 1.0);
        }
        (u, jac)
    }
}

/// `s_t(x) = s★_t(x) + δ u_t(x)` with an analytic Jacobian.
#[derive(Debug, Clone)]
pub struct PerturbedScore<F> {
    inner: F,
    spec: PerturbationSpec,
    direction: Vector,
    fallback: Vector,
    modes: Option<SmoothModes>,
}

/// Wraps `exact` with the perturbation described by `spec`.
pub fn perturb<F: ScoreField>(exact: F, spec: PerturbationSpec) -> PerturbedScore<F> {
    let d = exact.dim();
    let mut rng = stream(spec.seed, ids::PERTURBATION);
    let direction = unit(standard_normal_vec(&mut rng, d));
    let mut fallback = unit(standard_normal_vec(&mut rng, d));
    if d > 1 {
        fallback = unit(&fallback - &direction * direction.dot(&fallback));
    }
    let modes = (spec.kind == PerturbationKind::SmoothField).then(|| SmoothModes::draw(d, spec.seed));
    PerturbedScore { inner: exact, spec, direction, fallback, modes }
}

fn unit(v: Vector) -> Vector {
    let n = v.norm();
    v / n
}

impl<F: ScoreField> PerturbedScore<F> {
    pub fn spec(&self) -> PerturbationSpec {
        self.spec
    }

    pub fn inner(&self) -> &F {
        &self.inner
    }

    /// Unit tangent to `s★` and its Jacobian.
    fn tangent(&self, s: &Vector, js: &Matrix) -> (Vector, Matrix) {
        let d = s.len();
        let n = s.norm();
        if !(n > 1e-300) {
            return (self.direction.clone(), Matrix::zeros(d, d));
        }
        let s_hat = s / n;
        let mut e = &self.direction;
        let mut w = e - &s_hat * e.dot(&s_hat);
        if w.norm() < 1e-8 {
            e = &self.fallback;
            w = e - &s_hat * e.dot(&s_hat);
        }
        let w_norm = w.norm();
        if w_norm < 1e-8 {
            // no direction orthogonal to ŝ (d = 1)
            return (Vector::zeros(d), Matrix::zeros(d, d));
        }
        let u = &w / w_norm;

        let mut proj = Matrix::identity(d, d);
        proj.ger(-1.0, &s_hat, &s_hat, 1.0);
        let d_s_hat = proj * js / n;
        // ∂w = −(ŝ eᵀ + (e·ŝ) I) ∂ŝ
        let mut outer = Matrix::from_diagonal_element(d, d, e.dot(&s_hat));
        outer.ger(1.0, &s_hat, e, 1.0);
        let d_w = -(outer * d_s_hat);
        let mut proj_u = Matrix::identity(d, d);
        proj_u.ger(-1.0, &u, &u, 1.0);
        (u, proj_u * d_w / w_norm)
    }
}

impl<F: ScoreField> ScoreField for PerturbedScore<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn steps(&self) -> usize {
        self.inner.steps()
    }

    fn eval(&self, t: usize, x: &Vector) -> Vector {
        let delta = self.spec.delta;
        match self.spec.kind {
            PerturbationKind::None => self.inner.eval(t, x),
            _ if delta == 0.0 => self.inner.eval(t, x),
            PerturbationKind::ConstantBias => self.inner.eval(t, x) + &self.direction * delta,
            PerturbationKind::Gain => self.inner.eval(t, x) * (1.0 + delta),
            PerturbationKind::SmoothField | PerturbationKind::Tangential => self.eval_with_jacobian(t, x).0,
        }
    }

    fn eval_with_jacobian(&self, t: usize, x: &Vector) -> (Vector, Matrix) {
        let delta = self.spec.delta;
        let (s, js) = self.inner.eval_with_jacobian(t, x);
        if delta == 0.0 {
            return (s, js);
        }
        match self.spec.kind {
            PerturbationKind::None => (s, js),
            PerturbationKind::ConstantBias => (s + &self.direction * delta, js),
            PerturbationKind::Gain => (s * (1.0 + delta), js * (1.0 + delta)),
            PerturbationKind::Tangential => {
                let (u, ju) = self.tangent(&s, &js);
                (s + u * delta, js + ju * delta)
            }
            PerturbationKind::SmoothField => {
                let (u, ju) = self.modes.as_ref().expect("smooth modes drawn").eval_with_jacobian(x);
                (s + u * delta, js + ju * delta)
            }
        }
    }

    fn descriptor(&self) -> FieldDescriptor {
        FieldDescriptor::Perturbed(self.spec)
    }
}

/// `ε_score,t(x)` from the difference `s − s★` and `s★`:
/// `sqrt(‖Δ‖² + (Δᵀ s★)²)`.
pub fn score_error_from(diff: &Vector, exact: &Vector) -> f64 {
    let inner = diff.dot(exact);
    (diff.norm_squared() + inner * inner).sqrt()
}

/// `ε_Jacobi,t(x)` from `J_s − J_s★`: `sqrt(Tr(Δ)² + ‖Δ‖_F²)`.
pub fn jacobi_error_from(diff: &Matrix) -> f64 {
    let tr = trace(diff);
    (tr * tr + diff.norm_squared()).sqrt()
}

pub fn pointwise_score_error<E: ScoreField, A: ScoreField>(exact: &E, approx: &A, t: usize, x: &Vector) -> f64 {
    let s_star = exact.eval(t, x);
    score_error_from(&(approx.eval(t, x) - &s_star), &s_star)
}

pub fn pointwise_jacobi_error<E: ScoreField, A: ScoreField>(exact: &E, approx: &A, t: usize, x: &Vector) -> f64 {
    jacobi_error_from(&(approx.jacobian(t, x) - exact.jacobian(t, x)))
}

/// Time-averaged RMS errors with Monte-Carlo standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AverageErrors {
    pub eps_score: f64,
    pub eps_score_stderr: f64,
    pub eps_jacobi: f64,
    pub eps_jacobi_stderr: f64,
    pub samples_per_step: usize,
}

/// `ε² = (1/T) Σ_t E[ε_t(X_t)²]`, estimated with `n` forward samples per step
/// (step `t` uses the substream `derive_seed(seed, t)`).
pub fn average_errors<E: ScoreField, A: ScoreField>(
    exact: &E,
    approx: &A,
    target: &MixtureTarget,
    schedule: &Schedule,
    n: usize,
    seed: u64,
) -> Result<AverageErrors> {
    if n == 0 {
        return Err(Error::InvalidParams("need at least one sample per step".into()));
    }
    let steps = schedule.steps();
    let mut score_mean = 0.0;
    let mut score_var = 0.0;
    let mut jac_mean = 0.0;
    let mut jac_var = 0.0;
    let mut sq_score = Vec::with_capacity(n);
    let mut sq_jac = Vec::with_capacity(n);
    for t in 1..=steps {
        sq_score.clear();
        sq_jac.clear();
        for x in forward_sample(target, schedule, t, n, derive_seed(seed, t as u64))? {
            let (s_star, j_star) = exact.eval_with_jacobian(t, &x);
            let (s, j) = approx.eval_with_jacobian(t, &x);
            sq_score.push(score_error_from(&(s - &s_star), &s_star).powi(2));
            sq_jac.push(jacobi_error_from(&(j - j_star)).powi(2));
        }
        let (m, se) = mean_and_stderr(&sq_score);
        score_mean += m;
        score_var += se * se;
        let (m, se) = mean_and_stderr(&sq_jac);
        jac_mean += m;
        jac_var += se * se;
    }
    let steps = steps as f64;
    let to_rms = |mean_sq: f64, var_sq: f64| {
        let value = (mean_sq / steps).sqrt();
        let se_sq = var_sq.sqrt() / steps;
        // delta method
        let se = if value > 0.0 { se_sq / (2.0 * value) } else { 0.0 };
        (value, se)
    };
    let (eps_score, eps_score_stderr) = to_rms(score_mean, score_var);
    let (eps_jacobi, eps_jacobi_stderr) = to_rms(jac_mean, jac_var);
    Ok(AverageErrors { eps_score, eps_score_stderr, eps_jacobi, eps_jacobi_stderr, samples_per_step: n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleParams;
    use crate::targets::tests::gmm3_d4;
    use crate::validation::finite_diff_jacobian;

    fn schedule(steps: usize) -> Schedule {
        Schedule::build(ScheduleParams::with_defaults(steps).unwrap()).unwrap()
    }

    #[test]
    fn zero_delta_is_bitwise_exact() {
        let s = schedule(40);
        let t = gmm3_d4();
        let exact = ExactScore::new(&t, &s);
        let x = Vector::from_vec(alloc::vec![0.1, -0.4, 1.3, 0.2]);
        for kind in PerturbationKind::ALL {
            let p = perturb(exact, PerturbationSpec::new(kind, 0.0, 3).unwrap());
            assert_eq!(p.eval(7, &x), exact.eval(7, &x), "{kind:?}");
        }
    }

    #[test]
    fn gain_on_point_mass() {
        let s = schedule(40);
        let t = MixtureTarget::point_mass(Vector::zeros(3));
        let p = perturb(ExactScore::new(&t, &s), PerturbationSpec::new(PerturbationKind::Gain, 0.1, 0).unwrap());
        let x = Vector::from_vec(alloc::vec![0.5, -1.0, 2.0]);
        let expect = &x * (-1.1 / s.one_minus_alpha_bar(12));
        assert!((p.eval(12, &x) - expect).norm() < 1e-12);
    }

    #[test]
    fn negative_delta_rejected() {
        assert!(PerturbationSpec::new(PerturbationKind::Gain, -0.1, 0).is_err());
        assert!(PerturbationSpec::new(PerturbationKind::Gain, f64::NAN, 0).is_err());
    }

    #[test]
    fn perturbed_jacobians_match_finite_differences() {
        let s = schedule(60);
        let t = gmm3_d4();
        let exact = ExactScore::new(&t, &s);
        let mut rng = stream(8, 0);
        for kind in PerturbationKind::ALL {
            let p = perturb(exact, PerturbationSpec::new(kind, 0.3, 11).unwrap());
            for step in [2, 30, 60] {
                let x = standard_normal_vec(&mut rng, 4);
                let h = 1e-5 * (1.0 + x.amax());
                let fd = finite_diff_jacobian(|y| p.eval(step, y), &x, h);
                let j = p.jacobian(step, &x);
                assert!((&fd - &j).norm() <= 1e-5 * (1.0 + j.norm()), "{kind:?} t={step}");
            }
        }
    }

    #[test]
    fn smooth_field_jacobian_matches_finite_differences() {
        let modes = SmoothModes::draw(5, 21);
        let x = Vector::from_vec(alloc::vec![0.3, -0.2, 1.1, 0.0, -0.7]);
        let (_, j) = modes.eval_with_jacobian(&x);
        let fd = finite_diff_jacobian(|y| modes.eval_with_jacobian(y).0, &x, 1e-5);
        assert!((fd - j).amax() < 1e-6);
    }

    #[test]
    fn tangential_error_equals_delta() {
        let s = schedule(60);
        let t = gmm3_d4();
        let exact = ExactScore::new(&t, &s);
        let p = perturb(exact, PerturbationSpec::new(PerturbationKind::Tangential, 0.05, 2).unwrap());
        let mut rng = stream(9, 0);
        for step in [2, 20, 60] {
            let x = standard_normal_vec(&mut rng, 4);
            let e = pointwise_score_error(&exact, &p, step, &x);
            assert!((e - 0.05).abs() < 1e-12, "{e}");
        }
    }

    #[test]
    fn parallel_difference_error() {
        let s_star = Vector::from_vec(alloc::vec![3.0, 4.0]);
        let delta = 0.2;
        let diff = &s_star / s_star.norm() * delta;
        let e = score_error_from(&diff, &s_star);
        let expect = delta * delta + delta * delta * s_star.norm_squared();
        assert!((e * e - expect).abs() < 1e-12);
        assert_eq!(score_error_from(&Vector::zeros(2), &s_star), 0.0);
    }

    #[test]
    fn gain_jacobi_error_on_point_mass() {
        let s = schedule(40);
        let d = 3;
        let t = MixtureTarget::point_mass(Vector::zeros(d));
        let exact = ExactScore::new(&t, &s);
        let delta = 0.1;
        let p = perturb(exact, PerturbationSpec::new(PerturbationKind::Gain, delta, 0).unwrap());
        let x = Vector::from_vec(alloc::vec![0.2, 0.1, -0.3]);
        let v = s.one_minus_alpha_bar(9);
        let e = pointwise_jacobi_error(&exact, &p, 9, &x);
        let df = d as f64;
        let expect = delta * delta * df * df / (v * v) + delta * delta * df / (v * v);
        assert!((e * e - expect).abs() <= 1e-10 * expect);
    }

    #[test]
    fn traceless_antisymmetric_difference() {
        let diff = Matrix::from_row_slice(2, 2, &[0.0, 0.3, -0.3, 0.0]);
        assert!((jacobi_error_from(&diff) - diff.norm()).abs() < 1e-15);
        assert_eq!(jacobi_error_from(&Matrix::zeros(2, 2)), 0.0);
    }

    #[test]
    fn linear_scaling_in_delta() {
        let s = schedule(60);
        let t = gmm3_d4();
        let exact = ExactScore::new(&t, &s);
        let mut rng = stream(10, 0);
        for kind in [PerturbationKind::ConstantBias, PerturbationKind::Tangential] {
            let p1 = perturb(exact, PerturbationSpec::new(kind, 0.01, 4).unwrap());
            let p2 = perturb(exact, PerturbationSpec::new(kind, 0.02, 4).unwrap());
            for step in [3, 33] {
                let x = standard_normal_vec(&mut rng, 4);
                let r = pointwise_score_error(&exact, &p2, step, &x) / pointwise_score_error(&exact, &p1, step, &x);
                assert!((r - 2.0).abs() < 1e-9, "{kind:?}: {r}");
            }
        }
    }

    #[test]
    fn average_errors_exact_and_tangential() {
        let s = schedule(30);
        let t = gmm3_d4();
        let exact = ExactScore::new(&t, &s);
        let zero = average_errors(&exact, &exact, &t, &s, 4, 1).unwrap();
        assert_eq!((zero.eps_score, zero.eps_jacobi), (0.0, 0.0));
        let p = perturb(exact, PerturbationSpec::new(PerturbationKind::Tangential, 0.03, 2).unwrap());
        let avg = average_errors(&exact, &p, &t, &s, 4, 1).unwrap();
        assert!((avg.eps_score - 0.03).abs() < 1e-12);
        assert!(avg.eps_jacobi > 0.0);
        assert!(average_errors(&exact, &p, &t, &s, 0, 1).is_err());
    }

    #[test]
    fn average_gain_error_matches_gaussian_moments() {
        // E[‖X‖² + ‖X‖⁴] = d + d² + 2d for X ~ N(0, I_d)
        let d = 3;
        let s = schedule(20);
        let t = MixtureTarget::standard_normal(d);
        let exact = ExactScore::new(&t, &s);
        let delta = 0.1;
        let p = perturb(exact, PerturbationSpec::new(PerturbationKind::Gain, delta, 0).unwrap());
        let avg = average_errors(&exact, &p, &t, &s, 2000, 5).unwrap();
        let df = d as f64;
        let expect = delta * (df + df * df + 2.0 * df).sqrt();
        assert!(
            (avg.eps_score - expect).abs() <= 3.0 * avg.eps_score_stderr,
            "{} vs {expect} ± {}",
            avg.eps_score,
            avg.eps_score_stderr
        );
    }
}
