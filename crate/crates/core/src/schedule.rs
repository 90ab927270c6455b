//! Discrete noise schedule and reverse-step coefficients.
//!
//! The forward chain uses `β_1 = T^{-c0}` followed by a geometric ramp at
//! rate `r = c1·log T / T`, saturating at `β = r`:
//!
//! ```text
//! β_{t+1} = r · min{ β_1 (1 + r)^t, 1 }
//! ```
//!
//! Both `ᾱ_t` and its complement `1 − ᾱ_t` are stored. The complement is
//! accumulated through `1 − ᾱ_t = β_t + α_t (1 − ᾱ_{t−1})`, which never
//! subtracts nearby numbers, so quantities like `α_t − ᾱ_t` stay accurate
//! even when `ᾱ_{t−1}` is within `1e-6` of one.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
// inherent on f64 only with std
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::validation::CheckResult;

pub const DEFAULT_C0: f64 = 2.0;
pub const DEFAULT_C1: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleParams {
    /// Number of steps `T`.
    pub steps: usize,
    pub c0: f64,
    pub c1: f64,
}

impl ScheduleParams {
    pub fn new(steps: usize, c0: f64, c1: f64) -> Result<Self> {
        let params = ScheduleParams { steps, c0, c1 };
        params.check()?;
        Ok(params)
    }

    pub fn with_defaults(steps: usize) -> Result<Self> {
        Self::new(steps, DEFAULT_C0, DEFAULT_C1)
    }

    /// Saturated step size `c1·log T / T`.
    pub fn rate(&self) -> f64 {
        let t = self.steps as f64;
        self.c1 * t.ln() / t
    }

    fn check(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::InvalidParams(format!("T = {} < 2", self.steps)));
        }
        if !(self.c0 > 0.0 && self.c0.is_finite()) || !(self.c1 > 0.0 && self.c1.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "c0 = {}, c1 = {} must be positive",
                self.c0, self.c1
            )));
        }
        let rate = self.rate();
        if rate >= 1.0 {
            return Err(Error::InvalidParams(format!(
                "c1·log(T)/T = {rate} must be < 1"
            )));
        }
        Ok(())
    }
}

/// Choice of the reverse-step coefficient `η_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Coefficient {
    /// `η★_t = 1 − ᾱ_t − sqrt((1 − ᾱ_t)(α_t − ᾱ_t))`.
    Star,
    /// `η_t = (1 − α_t) / 2`.
    Simple,
}

impl Coefficient {
    pub fn name(self) -> &'static str {
        match self {
            Coefficient::Star => "star",
            Coefficient::Simple => "simple",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "star" => Some(Coefficient::Star),
            "simple" => Some(Coefficient::Simple),
            _ => None,
        }
    }
}

/// `η★` from `α_t` and `ᾱ_t`, in the cancellation-free form
/// `β_t / (1 + sqrt((α_t − ᾱ_t)/(1 − ᾱ_t)))`.
pub fn eta_star_from(alpha: f64, alpha_bar: f64) -> f64 {
    let beta = 1.0 - alpha;
    let retained = ((alpha - alpha_bar) / (1.0 - alpha_bar)).max(0.0);
    beta / (1.0 + retained.sqrt())
}

/// Precomputed schedule; all sequences are 1-indexed through the accessors.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    params: ScheduleParams,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    one_minus_alpha_bar: Vec<f64>,
    eta_star: Vec<f64>,
    eta_simple: Vec<f64>,
}

impl Schedule {
    pub fn build(params: ScheduleParams) -> Result<Self> {
        params.check()?;
        let steps = params.steps;
        let rate = params.rate();
        let beta1 = (steps as f64).powf(-params.c0);

        let mut beta = Vec::with_capacity(steps);
        beta.push(beta1);
        let mut ramp = beta1;
        for _ in 1..steps {
            ramp *= 1.0 + rate;
            beta.push(rate * ramp.min(1.0));
        }

        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut one_minus_alpha_bar = Vec::with_capacity(steps);
        let (mut prod, mut comp) = (1.0, 0.0);
        for (a, b) in alpha.iter().zip(&beta) {
            prod *= a;
            comp = b + a * comp;
            alpha_bar.push(prod);
            one_minus_alpha_bar.push(comp);
        }

        let mut eta_star = Vec::with_capacity(steps - 1);
        let mut eta_simple = Vec::with_capacity(steps - 1);
        for i in 1..steps {
            // α_t − ᾱ_t = α_t (1 − ᾱ_{t−1})
            let retained = alpha[i] * one_minus_alpha_bar[i - 1] / one_minus_alpha_bar[i];
            eta_star.push(beta[i] / (1.0 + retained.sqrt()));
            eta_simple.push(beta[i] / 2.0);
        }

        Ok(Schedule {
            params,
            beta,
            alpha,
            alpha_bar,
            one_minus_alpha_bar,
            eta_star,
            eta_simple,
        })
    }

    pub fn params(&self) -> ScheduleParams {
        self.params
    }

    pub fn steps(&self) -> usize {
        self.params.steps
    }

    fn check_step(&self, t: usize, min: usize) -> Result<usize> {
        if t < min || t > self.steps() {
            return Err(Error::StepOutOfRange { t, min, max: self.steps() });
        }
        Ok(t - 1)
    }

    /// # Panics
    /// If `t` is outside `1..=T`. The same holds for the other scalar accessors.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    /// `1 − ᾱ_t`, accumulated without cancellation.
    pub fn one_minus_alpha_bar(&self, t: usize) -> f64 {
        self.one_minus_alpha_bar[t - 1]
    }

    /// `α_t − ᾱ_t`, evaluated as `α_t (1 − ᾱ_{t−1})` (`t ≥ 2`).
    pub fn alpha_minus_alpha_bar(&self, t: usize) -> f64 {
        self.alpha[t - 1] * self.one_minus_alpha_bar[t - 2]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// `η★_t` for `t = 2..=T`.
    pub fn eta_stars(&self) -> &[f64] {
        &self.eta_star
    }

    pub fn eta_simples(&self) -> &[f64] {
        &self.eta_simple
    }

    pub fn coefficient(&self, t: usize, choice: Coefficient) -> Result<f64> {
        let i = self.check_step(t, 2)?;
        Ok(match choice {
            Coefficient::Star => self.eta_star[i - 1],
            Coefficient::Simple => self.eta_simple[i - 1],
        })
    }

    /// `sqrt((1 − ᾱ_t)/(α_t − ᾱ_t))`, the normaliser of the exact step
    /// Jacobian (`t ≥ 2`).
    pub fn jacobian_scale(&self, t: usize) -> f64 {
        (self.one_minus_alpha_bar(t) / self.alpha_minus_alpha_bar(t)).sqrt()
    }

    /// First step `t` (1-based) at which the ramp has saturated (`β_t = r`).
    pub fn saturation_step(&self) -> Option<usize> {
        let rate = self.params.rate();
        self.beta.iter().skip(1).position(|&b| b == rate).map(|i| i + 2)
    }

    pub fn validate(&self) -> ScheduleReport {
        validate_schedule(self)
    }
}

/// Sandwich `0 ≤ η★ − (1−α)/2 ≤ (1−α)²/(1−ᾱ)` at a single step; returns
/// `(gap, upper)`.
pub fn coefficient_sandwich(alpha: f64, alpha_bar: f64) -> (f64, f64) {
    let beta = 1.0 - alpha;
    let gap = eta_star_from(alpha, alpha_bar) - beta / 2.0;
    (gap, beta * beta / (1.0 - alpha_bar))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleReport {
    pub checks: Vec<CheckResult>,
    pub alpha_bar_final: f64,
    /// `log(1/ᾱ_T) / log T`.
    pub decay_exponent: f64,
}

impl ScheduleReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

const ROUNDING: f64 = 1e-12;

/// Evaluates the schedule bounds over every step. Failures are recorded in the
/// report, never raised.
pub fn validate_schedule(schedule: &Schedule) -> ScheduleReport {
    let params = schedule.params();
    let steps = params.steps;
    let rate = params.rate();
    let ctx = |t: usize| -> String { format!("T={steps} c0={} c1={} t={t}", params.c0, params.c1) };

    // (a) α_t ≥ 1 − r ≥ 1/2
    let mut worst = (f64::INFINITY, 1);
    for t in 1..=steps {
        let slack = schedule.alpha(t) - (1.0 - rate);
        if slack < worst.0 {
            worst = (slack, t);
        }
    }
    let floor_slack = (1.0 - rate) - 0.5;
    let (slack_a, t_a) = if floor_slack < worst.0 { (floor_slack, 0) } else { worst };
    let check_a = CheckResult::new("alpha_lower_bound", slack_a >= -ROUNDING, slack_a, ctx(t_a));

    // (b) (1−α)/(1−ᾱ) ≤ (1−α)/(α−ᾱ) ≤ 8r
    let mut worst = (f64::INFINITY, 2);
    for t in 2..=steps {
        let beta = schedule.beta(t);
        let lower = beta / schedule.one_minus_alpha_bar(t);
        let middle = beta / schedule.alpha_minus_alpha_bar(t);
        let slack = (middle - lower).min(8.0 * rate - middle);
        if slack < worst.0 {
            worst = (slack, t);
        }
    }
    let check_b = CheckResult::new("step_ratio_bound", worst.0 >= -ROUNDING, worst.0, ctx(worst.1));

    // (c) 0 ≤ η★ − (1−α)/2 ≤ (1−α)²/(1−ᾱ)
    let mut worst = (f64::INFINITY, 2);
    for t in 2..=steps {
        let beta = schedule.beta(t);
        let gap = schedule.eta_star[t - 2] - beta / 2.0;
        let upper = beta * beta / schedule.one_minus_alpha_bar(t);
        let slack = gap.min(upper - gap);
        if slack < worst.0 {
            worst = (slack, t);
        }
    }
    let check_c = CheckResult::new(
        "coefficient_sandwich",
        worst.0 >= -ROUNDING * schedule.beta(worst.1),
        worst.0,
        ctx(worst.1),
    );

    // (d) informational: terminal signal level
    let alpha_bar_final = schedule.alpha_bar(steps);
    let decay_exponent = (1.0 / alpha_bar_final).ln() / (steps as f64).ln();
    let check_d = CheckResult::new(
        "terminal_alpha_bar",
        alpha_bar_final < 1.0,
        decay_exponent,
        format!("T={steps} alpha_bar_T={alpha_bar_final:e} exponent={decay_exponent}"),
    );

    ScheduleReport {
        checks: alloc::vec![check_a, check_b, check_c, check_d],
        alpha_bar_final,
        decay_exponent,
    }
}
