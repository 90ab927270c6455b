use flowlab_core::geometry::{covering_curve, dimension_estimate, embedded_cube, greedy_net};
use flowlab_core::linalg::Vector;
use flowlab_core::validation::oracle::min_cover_size;

#[test]
fn grid_greedy_net_within_factor_of_exact_cover() {
    let pts: Vec<Vector> = (0..=100).map(|i| Vector::from_element(1, i as f64 / 100.0)).collect();
    let exact = min_cover_size(&pts, 0.1 + 1e-12);
    let greedy = greedy_net(&pts, 0.1 + 1e-12).len();
    assert_eq!(exact, 5);
    assert!((exact..=11).contains(&greedy), "{greedy}");
}

#[test]
fn small_cloud_greedy_sandwiched_by_exact_covers() {
    // packing at ε ≤ |greedy net at ε| ≤ N_{ε/2}
    let (pts, _) = embedded_cube(5, 2, 60, 1.0, 4).unwrap();
    for eps in [0.5, 0.3] {
        let greedy = greedy_net(&pts, eps).len();
        assert!(greedy <= min_cover_size(&pts, eps / 2.0));
        assert!(greedy >= min_cover_size(&pts, eps));
    }
}

#[test]
fn embedding_does_not_change_counts() {
    let (embedded, frame) = embedded_cube(16, 2, 1500, 1.0, 9).unwrap();
    let flat: Vec<Vector> = embedded.iter().map(|p| frame.transpose() * p).collect();
    let eps = [0.4, 0.2, 0.1];
    let a = covering_curve(&embedded, &eps).unwrap().counts();
    let b = covering_curve(&flat, &eps).unwrap().counts();
    for (x, y) in a.iter().zip(&b) {
        assert!(x.abs_diff(*y) <= 1, "{a:?} {b:?}");
    }
}

#[test]
fn square_in_sixteen_dimensions_has_slope_near_two() {
    let eps = [0.4, 0.2, 0.1];
    let mean: f64 = (0..5)
        .map(|seed| {
            let (pts, _) = embedded_cube(16, 2, 2000, 1.0, seed).unwrap();
            dimension_estimate(&covering_curve(&pts, &eps).unwrap()).unwrap().k_hat
        })
        .sum::<f64>()
        / 5.0;
    assert!((mean - 2.0).abs() <= 0.5, "{mean}");
}

#[test]
fn four_cube_in_thirty_two_dimensions() {
    // boundary effects bias the slope low unless ε is well below the side
    let (pts, _) = embedded_cube(32, 4, 200_000, 1.0, 101).unwrap();
    let curve = covering_curve(&pts, &[1.0 / 6.0, 1.0 / 7.0, 1.0 / 8.0]).unwrap();
    let k = dimension_estimate(&curve).unwrap().k_hat;
    assert!((k - 4.0).abs() <= 0.7, "{k}");
}
