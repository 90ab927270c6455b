use flowlab_core::linalg::{Matrix, Vector};
use flowlab_core::sampler::{init_reverse, reverse_step, run_reverse};
use flowlab_core::schedule::{coefficient_sandwich, Coefficient, Schedule, ScheduleParams};
use flowlab_core::score_models::{ExactScore, ScoreField};
use flowlab_core::targets::MixtureTarget;
use flowlab_core::validation::posterior_trace_diagnostic;

fn schedule(steps: usize) -> Schedule {
    Schedule::build(ScheduleParams::with_defaults(steps).unwrap()).unwrap()
}

fn mixture_1d() -> MixtureTarget {
    MixtureTarget::new(
        1,
        vec![
            (0.4, Vector::from_element(1, -1.0), Matrix::from_element(1, 1, 0.4)),
            (0.6, Vector::from_element(1, 1.2), Matrix::from_element(1, 1, 0.3)),
        ],
    )
    .unwrap()
}

#[test]
fn trace_diagnostic_decreases_in_steps() {
    let target = MixtureTarget::rank_k_gaussian(8, 2, 1.0, Vector::zeros(8), 5).unwrap();
    let diags: Vec<_> = [100, 200, 400, 800]
        .iter()
        .map(|&t| posterior_trace_diagnostic(&target, &schedule(t), 64, 11).unwrap())
        .collect();
    for w in diags.windows(2) {
        let tol = 2.0 * (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt();
        assert!(w[1].value <= w[0].value + tol, "{:?}", diags);
    }
}

#[test]
fn trace_diagnostic_grows_with_rank() {
    let s = schedule(200);
    let small = MixtureTarget::rank_k_gaussian(16, 2, 1.0, Vector::zeros(16), 5).unwrap();
    let large = MixtureTarget::rank_k_gaussian(16, 4, 1.0, Vector::zeros(16), 5).unwrap();
    let a = posterior_trace_diagnostic(&small, &s, 64, 3).unwrap();
    let b = posterior_trace_diagnostic(&large, &s, 64, 3).unwrap();
    let tol = 2.0 * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
    assert!(b.value + tol >= a.value && b.value > a.value, "{a:?} {b:?}");
    assert!((b.reference / a.reference - 2.0).abs() < 1e-12);
}

/// Bins the final points and compares the empirical bin masses with the
/// masses implied by the tracked densities.
#[test]
fn tracked_density_matches_histogram_in_one_dimension() {
    let s = schedule(100);
    let target = mixture_1d();
    let run = run_reverse(&s, 1, &ExactScore::new(&target, &s), 40_000, 21, Coefficient::Star).unwrap();
    let mut pairs: Vec<(f64, f64)> = run
        .batch
        .points()
        .iter()
        .zip(run.batch.log_density())
        .map(|(y, lp)| (y[0], lp.exp()))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // trapezoid of the tracked density through the sorted sample points
    let total: f64 = pairs.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum();
    assert!((total - 1.0).abs() < 0.01, "{total}");

    let bins = 40;
    let (lo, hi) = (pairs[0].0, pairs[pairs.len() - 1].0);
    let width = (hi - lo) / bins as f64;
    let mut empirical = vec![0.0; bins];
    let mut tracked = vec![0.0; bins];
    for w in pairs.windows(2) {
        let b = (((w[0].0 - lo) / width) as usize).min(bins - 1);
        tracked[b] += 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0);
    }
    for (y, _) in &pairs {
        empirical[(((y - lo) / width) as usize).min(bins - 1)] += 1.0 / pairs.len() as f64;
    }
    let tv: f64 = 0.5 * empirical.iter().zip(&tracked).map(|(a, b)| (a - b).abs()).sum::<f64>();
    assert!(tv < 0.05, "{tv}");
}

#[test]
fn tracked_density_matches_histogram_in_two_dimensions() {
    let s = schedule(100);
    let target = MixtureTarget::new(
        2,
        vec![
            (0.5, Vector::from_vec(vec![-1.0, 0.0]), Matrix::from_row_slice(2, 2, &[0.5, 0.0, 0.2, 0.4])),
            (0.5, Vector::from_vec(vec![1.0, 0.5]), Matrix::identity(2, 2) * 0.45),
        ],
    )
    .unwrap();
    let n = 60_000;
    let run = run_reverse(&s, 2, &ExactScore::new(&target, &s), n, 4, Coefficient::Star).unwrap();
    let pts = run.batch.points();
    let dens: Vec<f64> = run.batch.log_density().iter().map(|l| l.exp()).collect();

    // fine cells carry the mean tracked density of their points; coarse bins
    // integrate those cells and are compared with the empirical bin masses
    let fine = 0.1;
    let per_bin = 5;
    let (nx, ny) = (60, 55);
    let lo = [-3.0, -2.5];
    let mut count = vec![0.0; nx * ny];
    let mut dens_sum = vec![0.0; nx * ny];
    for (p, d) in pts.iter().zip(&dens) {
        let i = ((p[0] - lo[0]) / fine).floor();
        let j = ((p[1] - lo[1]) / fine).floor();
        if i < 0.0 || j < 0.0 || i >= nx as f64 || j >= ny as f64 {
            continue;
        }
        let c = i as usize * ny + j as usize;
        count[c] += 1.0;
        dens_sum[c] += d;
    }
    let (bx, by) = (nx / per_bin, ny / per_bin);
    let mut empirical = vec![0.0; bx * by];
    let mut tracked = vec![0.0; bx * by];
    for i in 0..nx {
        for j in 0..ny {
            let c = i * ny + j;
            let b = (i / per_bin) * by + j / per_bin;
            empirical[b] += count[c] / n as f64;
            if count[c] > 0.0 {
                tracked[b] += dens_sum[c] / count[c] * fine * fine;
            }
        }
    }
    let tv: f64 = 0.5 * empirical.iter().zip(&tracked).map(|(a, b)| (a - b).abs()).sum::<f64>();
    assert!(tv < 0.05, "{tv}");
}

#[test]
fn coefficient_gap_moves_points_by_the_sandwiched_amount() {
    let s = schedule(60);
    let target = mixture_1d();
    let field = ExactScore::new(&target, &s);
    let mut batch = init_reverse(&s, 1, 64, 8).unwrap();
    for t in (2..=60).rev() {
        let star = reverse_step(batch.clone(), &field, &s, Coefficient::Star).unwrap();
        let simple = reverse_step(batch.clone(), &field, &s, Coefficient::Simple).unwrap();
        let (gap, upper) = coefficient_sandwich(s.alpha(t), s.alpha_bar(t));
        assert!(gap >= 0.0 && gap <= upper * (1.0 + 1e-12));
        for ((a, b), y) in star.points().iter().zip(simple.points()).zip(batch.points()) {
            let moved = (a - b).norm();
            let predicted = gap * field.eval(t, y).norm() / s.alpha(t).sqrt();
            assert!(moved <= predicted * (1.0 + 1e-9) + 1e-14, "t={t}");
        }
        batch = star;
    }
}

#[test]
fn identical_seeds_give_bitwise_identical_runs() {
    let s = schedule(80);
    let target = mixture_1d();
    let field = ExactScore::new(&target, &s);
    let a = run_reverse(&s, 1, &field, 500, 42, Coefficient::Star).unwrap();
    let b = run_reverse(&s, 1, &field, 500, 42, Coefficient::Star).unwrap();
    for (x, y) in a.batch.points().iter().zip(b.batch.points()) {
        assert_eq!(x[0].to_bits(), y[0].to_bits());
    }
    for (x, y) in a.batch.log_density().iter().zip(b.batch.log_density()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
    let c = run_reverse(&s, 1, &field, 500, 43, Coefficient::Star).unwrap();
    assert_ne!(a.batch.points()[0], c.batch.points()[0]);
}
