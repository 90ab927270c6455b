//! Experiment configuration: TOML (or JSON) with one table per concern.
//!
//! ```toml
//! [target]
//! family = "rank_k_gaussian"   # point_mass | isotropic | standard_normal | rank_k_gaussian | cube_cloud
//! d = 32
//! k = [2, 4]
//! seed = 7
//! scale = 1.0                  # factor scale (rank_k_gaussian) or sigma (isotropic)
//! # support_radius = 5.0       # optional, point-mass families only
//! cloud_n = 256                # cube_cloud only
//!
//! [schedule]
//! c0 = 2.0
//! c1 = 4.0
//! steps = [50, 100, 200, 400, 800]
//!
//! [sampler]
//! n = 4000
//! seed = 11
//! coefficients = ["star"]      # star | simple
//!
//! [perturbation]
//! kinds = ["none"]             # none | constant_bias | tangential | gain | smooth_field
//! deltas = [0.0]
//! seed = 5
//!
//! [tv]
//! n = 2000
//! error_samples = 32           # forward samples per step for eps_score / eps_jacobi
//!
//! [geometry]
//! n = 2000
//! eps = [0.8, 0.4, 0.2]
//!
//! [output]
//! runs = "runs.csv"
//! fits = "fits.csv"
//! plots = "plots"
//! ```
//!
//! Every key except `target.family`, `target.d` and `schedule.steps` has a
//! default. Relative output paths resolve against the output directory.

use std::fmt;
use std::path::Path;

use flowlab_core::linalg::Vector;
use flowlab_core::schedule::{Coefficient, ScheduleParams};
use flowlab_core::score_models::PerturbationKind;
use flowlab_core::targets::MixtureTarget;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Raised for anything the user has to fix in their configuration; the CLI
/// maps it to exit status 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    PointMass,
    Isotropic,
    StandardNormal,
    RankKGaussian,
    CubeCloud,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::PointMass => "point_mass",
            Family::Isotropic => "isotropic",
            Family::StandardNormal => "standard_normal",
            Family::RankKGaussian => "rank_k_gaussian",
            Family::CubeCloud => "cube_cloud",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Family::PointMass, Family::Isotropic, Family::StandardNormal, Family::RankKGaussian, Family::CubeCloud]
            .into_iter()
            .find(|f| f.name() == s)
    }

    /// Whether the nominal `k` is a free parameter of the family.
    pub fn uses_k(self) -> bool {
        matches!(self, Family::RankKGaussian | Family::CubeCloud)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub family: Family,
    pub d: usize,
    #[serde(default = "default_k")]
    pub k: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support_radius: Option<f64>,
    #[serde(default = "default_cloud_n")]
    pub cloud_n: usize,
}

fn default_k() -> Vec<usize> {
    vec![1]
}
fn one() -> f64 {
    1.0
}
fn default_cloud_n() -> usize {
    256
}

impl TargetSpec {
    /// Nominal intrinsic dimension recorded in the output for a grid value `k`.
    pub fn nominal_k(&self, k: usize) -> usize {
        match self.family {
            Family::PointMass => 0,
            Family::Isotropic | Family::StandardNormal => self.d,
            Family::RankKGaussian | Family::CubeCloud => k,
        }
    }

    /// Grid values of `k` actually swept (a single placeholder for families
    /// without a free `k`).
    pub fn k_grid(&self) -> Vec<usize> {
        if self.family.uses_k() {
            self.k.clone()
        } else {
            vec![self.nominal_k(0)]
        }
    }

    pub fn build(&self, k: usize) -> anyhow::Result<MixtureTarget> {
        let d = self.d;
        let target = match self.family {
            Family::PointMass => MixtureTarget::point_mass(Vector::zeros(d)).with_intrinsic_dim(0),
            Family::Isotropic => MixtureTarget::isotropic(Vector::zeros(d), self.scale).with_intrinsic_dim(d),
            Family::StandardNormal => MixtureTarget::standard_normal(d).with_intrinsic_dim(d),
            Family::RankKGaussian => MixtureTarget::rank_k_gaussian(d, k, self.scale, Vector::zeros(d), self.seed)?,
            Family::CubeCloud => MixtureTarget::embedded_cube_cloud(d, k, self.cloud_n, self.seed)?,
        };
        Ok(match self.support_radius {
            Some(r) => target.with_support_radius(r)?,
            None => target,
        })
    }

    fn check(&self) -> Result<(), ConfigError> {
        if self.d == 0 {
            return bad("target.d must be ≥ 1");
        }
        if self.family.uses_k() && self.k.iter().any(|&k| k == 0 || k > self.d) {
            return bad(format!("target.k values must lie in 1..={}", self.d));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return bad("target.scale must be positive");
        }
        if self.family == Family::CubeCloud && self.cloud_n == 0 {
            return bad("target.cloud_n must be ≥ 1");
        }
        if let Some(r) = self.support_radius {
            if !matches!(self.family, Family::PointMass | Family::CubeCloud) {
                return bad("target.support_radius only applies to point-mass families");
            }
            if !(r >= 0.0) {
                return bad("target.support_radius must be ≥ 0");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(default = "default_c0")]
    pub c0: f64,
    #[serde(default = "default_c1")]
    pub c1: f64,
    pub steps: Vec<usize>,
}

fn default_c0() -> f64 {
    flowlab_core::schedule::DEFAULT_C0
}
fn default_c1() -> f64 {
    flowlab_core::schedule::DEFAULT_C1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_coefficients")]
    pub coefficients: Vec<String>,
}

fn default_n() -> usize {
    4000
}
fn default_coefficients() -> Vec<String> {
    vec!["star".into()]
}

impl Default for SamplerSpec {
    fn default() -> Self {
        SamplerSpec { n: default_n(), seed: 0, coefficients: default_coefficients() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationGrid {
    #[serde(default = "default_kinds")]
    pub kinds: Vec<String>,
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_kinds() -> Vec<String> {
    vec!["none".into()]
}
fn default_deltas() -> Vec<f64> {
    vec![0.0]
}

impl Default for PerturbationGrid {
    fn default() -> Self {
        PerturbationGrid { kinds: default_kinds(), deltas: default_deltas(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TvSpec {
    #[serde(default = "default_tv_n")]
    pub n: usize,
    #[serde(default = "default_error_samples")]
    pub error_samples: usize,
}

fn default_tv_n() -> usize {
    2000
}
fn default_error_samples() -> usize {
    32
}

impl Default for TvSpec {
    fn default() -> Self {
        TvSpec { n: default_tv_n(), error_samples: default_error_samples() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    #[serde(default = "default_geometry_n")]
    pub n: usize,
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
}

fn default_geometry_n() -> usize {
    2000
}
fn default_eps() -> Vec<f64> {
    vec![0.8, 0.4, 0.2]
}

impl Default for GeometrySpec {
    fn default() -> Self {
        GeometrySpec { n: default_geometry_n(), eps: default_eps() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_runs")]
    pub runs: String,
    #[serde(default = "default_fits")]
    pub fits: String,
    #[serde(default = "default_plots")]
    pub plots: String,
}

fn default_runs() -> String {
    "runs.csv".into()
}
fn default_fits() -> String {
    "fits.csv".into()
}
fn default_plots() -> String {
    "plots".into()
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { runs: default_runs(), fits: default_fits(), plots: default_plots() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub target: TargetSpec,
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub perturbation: PerturbationGrid,
    #[serde(default)]
    pub tv: TvSpec,
    #[serde(default)]
    pub geometry: GeometrySpec,
    #[serde(default)]
    pub output: OutputSpec,
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let parsed: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| ConfigError(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?
        };
        parsed.validate()?;
        Ok(parsed)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.target.check()?;
        for &steps in &self.schedule.steps {
            ScheduleParams::new(steps, self.schedule.c0, self.schedule.c1)
                .map_err(|e| ConfigError(format!("schedule with T = {steps}: {e}")))?;
        }
        if self.sampler.n == 0 {
            return bad("sampler.n must be ≥ 1");
        }
        self.coefficients()?;
        self.kinds()?;
        if self.perturbation.deltas.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return bad("perturbation.deltas must be finite and ≥ 0");
        }
        if self.tv.n == 0 || self.tv.n > self.sampler.n {
            return bad(format!("tv.n must lie in 1..={}", self.sampler.n));
        }
        if self.tv.error_samples == 0 {
            return bad("tv.error_samples must be ≥ 1");
        }
        if self.geometry.eps.len() < 2 || self.geometry.eps.iter().any(|e| !(*e > 0.0)) {
            return bad("geometry.eps needs at least two positive radii");
        }
        if self.geometry.eps.windows(2).any(|w| !(w[1] < w[0])) {
            return bad("geometry.eps must be strictly decreasing");
        }
        if self.geometry.n == 0 {
            return bad("geometry.n must be ≥ 1");
        }
        Ok(())
    }

    pub fn coefficients(&self) -> Result<Vec<Coefficient>, ConfigError> {
        self.sampler
            .coefficients
            .iter()
            .map(|c| Coefficient::parse(c).ok_or_else(|| ConfigError(format!("unknown coefficient {c:?}"))))
            .collect()
    }

    pub fn kinds(&self) -> Result<Vec<PerturbationKind>, ConfigError> {
        self.perturbation
            .kinds
            .iter()
            .map(|k| PerturbationKind::parse(k).ok_or_else(|| ConfigError(format!("unknown perturbation kind {k:?}"))))
            .collect()
    }

    /// SHA-256 of the canonical JSON form, hex encoded (first 16 digits).
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serialises");
        hex::encode(&Sha256::digest(&canonical)[..8])
    }
}
