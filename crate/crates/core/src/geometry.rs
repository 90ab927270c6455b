//! Covering numbers of point clouds and the metric-entropy dimension.
//!
//! Nets come from a farthest-point traversal: start at point 0, repeatedly add
//! the point farthest from the current centers. The first `m` centers of the
//! traversal cover the cloud at the current covering radius and are pairwise
//! farther apart than that radius, so a single traversal answers every `ε`:
//! the `ε`-net is the shortest prefix whose covering radius is `≤ ε`.

use alloc::vec::Vec;
use rand::Rng;
// inherent on f64 only with std
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{least_squares_slope, orthonormal_frame, Matrix, Vector};
use crate::rng::{ids, stream};

/// Farthest-point ordering together with the covering radius after each prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct FarthestPointOrder {
    pub order: Vec<usize>,
    /// `radii[m]`: largest distance from any point to the first `m + 1` centers.
    pub radii: Vec<f64>,
}

impl FarthestPointOrder {
    /// Traverses until the covering radius is `≤ min_radius`.
    pub fn build(points: &[Vector], min_radius: f64) -> Self {
        let n = points.len();
        if n == 0 {
            return FarthestPointOrder { order: Vec::new(), radii: Vec::new() };
        }
        let d = points[0].len();
        // contiguous copy: the scans below are memory bound
        let flat: Vec<f64> = points.iter().flat_map(|p| p.iter().copied()).collect();
        let mut nearest = alloc::vec![f64::INFINITY; n];
        let mut order = Vec::new();
        let mut radii = Vec::new();
        let mut next = 0;
        loop {
            order.push(next);
            let center = &flat[next * d..(next + 1) * d];
            let mut far = (0.0, next);
            for (i, p) in flat.chunks_exact(d).enumerate() {
                let d2 = squared_distance(p, center);
                if d2 < nearest[i] {
                    nearest[i] = d2;
                }
                // strict comparison: ties resolve to the lowest index
                if nearest[i] > far.0 {
                    far = (nearest[i], i);
                }
            }
            let radius = far.0.sqrt();
            radii.push(radius);
            if radius <= min_radius || order.len() == n {
                break;
            }
            next = far.1;
        }
        FarthestPointOrder { order, radii }
    }

    /// Size of the `ε`-net, i.e. the shortest prefix with radius `≤ ε`.
    /// `None` if the traversal stopped before reaching `ε`.
    pub fn net_size(&self, epsilon: f64) -> Option<usize> {
        self.radii.iter().position(|&r| r <= epsilon).map(|i| i + 1)
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for j in 0..4 {
            let t = x[j] - y[j];
            acc[j] += t * t;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += (x - y) * (x - y);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Indices of an `ε`-net: every point lies within `ε` of a center, and the
/// centers are pairwise more than `ε` apart.
pub fn greedy_net(points: &[Vector], epsilon: f64) -> Vec<usize> {
    let fp = FarthestPointOrder::build(points, epsilon);
    let m = fp.net_size(epsilon).unwrap_or(fp.order.len());
    fp.order[..m].to_vec()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoveringCurve {
    /// Strictly decreasing radii.
    pub epsilons: Vec<f64>,
    /// `log` of the greedy net size at each radius (upper bound on `log N_ε`
    /// of the cloud).
    pub log_counts: Vec<f64>,
    /// `log` of the size of a `2ε`-separated set: no `ε`-ball holds two of its
    /// points, so this lower-bounds `log N_ε`.
    pub lower_bounds: Vec<f64>,
}

impl CoveringCurve {
    pub fn counts(&self) -> Vec<usize> {
        self.log_counts.iter().map(|l| l.exp().round() as usize).collect()
    }

    pub fn lower_counts(&self) -> Vec<usize> {
        self.lower_bounds.iter().map(|l| l.exp().round() as usize).collect()
    }
}

pub fn covering_curve(points: &[Vector], epsilons: &[f64]) -> Result<CoveringCurve> {
    if points.is_empty() {
        return Err(Error::InvalidParams("empty point cloud".into()));
    }
    if epsilons.is_empty() || epsilons.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidParams("radii must be positive".into()));
    }
    if epsilons.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParams("radii must be strictly decreasing".into()));
    }
    let smallest = *epsilons.last().expect("nonempty");
    let fp = FarthestPointOrder::build(points, smallest);
    let size = |e: f64| fp.net_size(e).unwrap_or(fp.order.len()) as f64;
    Ok(CoveringCurve {
        epsilons: epsilons.to_vec(),
        log_counts: epsilons.iter().map(|&e| size(e).ln()).collect(),
        lower_bounds: epsilons.iter().map(|&e| size(2.0 * e).ln()).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimensionEstimate {
    pub k_hat: f64,
    /// All counts were equal; `k_hat` is reported as 0.
    pub flat: bool,
}

/// Least-squares slope of `log N_ε` against `log(1/ε)`.
pub fn dimension_estimate(curve: &CoveringCurve) -> Result<DimensionEstimate> {
    if curve.epsilons.len() < 2 {
        return Err(Error::DegenerateInput("dimension estimate needs ≥ 2 radii".into()));
    }
    let first = curve.log_counts[0];
    if curve.log_counts.iter().all(|&c| c == first) {
        return Ok(DimensionEstimate { k_hat: 0.0, flat: true });
    }
    let xy: Vec<(f64, f64)> = curve
        .epsilons
        .iter()
        .zip(&curve.log_counts)
        .map(|(e, c)| (-e.ln(), *c))
        .collect();
    Ok(DimensionEstimate { k_hat: least_squares_slope(&xy), flat: false })
}

/// `n` uniform points on `[0, side]^k` embedded in `ℝ^d` by a random
/// orthonormal frame; returns the points and the frame.
pub fn embedded_cube(d: usize, k: usize, n: usize, side: f64, seed: u64) -> Result<(Vec<Vector>, Matrix)> {
    if k > d {
        return Err(Error::InvalidParams(alloc::format!("k = {k} exceeds d = {d}")));
    }
    let frame = orthonormal_frame(&mut stream(seed, ids::FRAME), d, k);
    let mut rng = stream(seed, ids::DATA);
    let points = (0..n)
        .map(|_| {
            let u = Vector::from_fn(k, |_, _| side * rng.random::<f64>());
            &frame * u
        })
        .collect();
    Ok((points, frame))
}
