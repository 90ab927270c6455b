//! Deterministic diffusion sampling on analytically tractable targets.
//!
//! The crate builds the discrete noise schedule, exact scores of finite
//! Gaussian / point-mass mixtures, controlled perturbations of those scores,
//! and the probability flow ODE reverse sampler with exact per-sample
//! pushforward densities. With exact densities on both sides, total
//! variation can be estimated without any density estimation, which makes the
//! O(k/T) convergence behaviour of the sampler directly measurable.
//!
//! The crate is `no_std` (it needs `alloc`). IO, configuration, the CLI and
//! the experiment harness live in the `flowlab` companion crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod geometry;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod score_models;
pub mod targets;
pub mod validation;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use schedule::{Coefficient, Schedule, ScheduleParams};
pub use score_models::{ExactScore, PerturbationKind, PerturbationSpec, PerturbedScore, ScoreField};
pub use targets::{MixtureTarget, NoisedQuery};
