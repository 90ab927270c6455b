//! Dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
// inherent on f64 only with std
#[allow(unused_imports)]
use num_traits::Float;

use crate::rng::standard_normal_vec;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// `log|det m|`, or `None` when the determinant is zero or not finite.
pub fn log_abs_det(m: Matrix) -> Option<f64> {
    debug_assert!(m.is_square());
    let det = m.lu().determinant();
    if det.is_finite() && det != 0.0 {
        Some(det.abs().ln())
    } else {
        None
    }
}

/// Largest singular value.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .fold(0.0_f64, |acc, &s| acc.max(s))
}

pub fn trace(m: &Matrix) -> f64 {
    m.diagonal().sum()
}

/// Largest absolute entry.
pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, &v| acc.max(v.abs()))
}

/// Random `d × k` matrix with orthonormal columns (QR of a Gaussian matrix,
/// sign-fixed so the frame is a deterministic function of the stream).
pub fn orthonormal_frame<R: Rng + ?Sized>(rng: &mut R, d: usize, k: usize) -> Matrix {
    assert!(k <= d, "frame rank {k} exceeds ambient dimension {d}");
    if k == 0 {
        return Matrix::zeros(d, 0);
    }
    let mut g = Matrix::zeros(d, k);
    for j in 0..k {
        g.set_column(j, &standard_normal_vec(rng, d));
    }
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Orthonormal basis (columns) and eigenvalues of `l lᵀ` restricted to its
/// range. Directions with eigenvalue below `rel_tol · max` are dropped.
pub fn range_eigen(l: &Matrix, rel_tol: f64) -> (Matrix, alloc::vec::Vec<f64>) {
    let d = l.nrows();
    if l.ncols() == 0 {
        return (Matrix::zeros(d, 0), alloc::vec::Vec::new());
    }
    let gram = l.transpose() * l;
    let eig = gram.symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0_f64, |a, &v| a.max(v));
    let mut keep: alloc::vec::Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| top > 0.0 && eig.eigenvalues[i] > rel_tol * top)
        .collect();
    // descending eigenvalue order keeps the layout independent of the solver
    keep.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut basis = Matrix::zeros(d, keep.len());
    let mut values = alloc::vec::Vec::with_capacity(keep.len());
    for (col, &i) in keep.iter().enumerate() {
        let lambda = eig.eigenvalues[i];
        let mut u = l * eig.eigenvectors.column(i);
        u /= lambda.sqrt();
        // fix the sign so the first non-negligible coordinate is positive
        if let Some(&first) = u.iter().find(|v| v.abs() > 1e-12) {
            if first < 0.0 {
                u.neg_mut();
            }
        }
        basis.set_column(col, &u);
        values.push(lambda);
    }
    (basis, values)
}

/// Pairwise (cascade) summation: fixed association order for a given length,
/// independent of how the caller partitioned the work upstream.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(values) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let sq: alloc::vec::Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Ordinary least squares `y = a x + b`; returns `(a, b, r²)`. A constant
/// response is fitted exactly and reports `r² = 1`.
pub fn least_squares(xy: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = xy.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_res: f64 = xy.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    (slope, intercept, r_squared)
}

/// Slope of the least-squares line through `xy`.
pub fn least_squares_slope(xy: &[(f64, f64)]) -> f64 {
    least_squares(xy).0
}
