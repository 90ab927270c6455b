//! Seeded random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream keyed by
//! `(seed, stream id)`. Per-step or per-partition substreams are derived with
//! [`derive_seed`], so results never depend on evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::Vector;

pub type StreamRng = ChaCha8Rng;

/// Stream ids used by the crate.
pub mod ids {
    pub const DATA: u64 = 1;
    pub const FORWARD_NOISE: u64 = 2;
    pub const REVERSE_INIT: u64 = 3;
    pub const PERTURBATION: u64 = 4;
    pub const FRAME: u64 = 5;
    pub const ERROR_ESTIMATE: u64 = 6;
    pub const DIAGNOSTIC: u64 = 7;
    pub const TRIALS: u64 = 8;
}

pub fn stream(seed: u64, id: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// splitmix64 finaliser over `(seed, index)`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vector {
    Vector::from_fn(d, |_, _| rng.sample(StandardNormal))
}
