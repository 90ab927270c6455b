use flowlab_core::geometry::{covering_curve, greedy_net};
use flowlab_core::linalg::{max_abs, orthonormal_frame, spectral_norm, Matrix, Vector};
use flowlab_core::metrics::{theorem_bound, tv_monte_carlo};
use flowlab_core::rng::{stream, StreamRng};
use flowlab_core::sampler::{run_reverse, TrajectoryBatch};
use flowlab_core::schedule::{validate_schedule, Coefficient, Schedule, ScheduleParams};
use flowlab_core::score_models::{perturb, pointwise_jacobi_error, pointwise_score_error, ExactScore, PerturbationKind, PerturbationSpec, ScoreField};
use flowlab_core::targets::{MixtureTarget, NoiseLevel};
use flowlab_core::validation::suite::{random_target, SYMMETRY_TOL, TWEEDIE_TOL};
use flowlab_core::validation::{check_jacobian_identity, check_logdet, default_step, finite_diff_jacobian, jacobian_identity};
use proptest::prelude::*;
use rand::Rng;

fn schedule(steps: usize) -> Schedule {
    Schedule::build(ScheduleParams::with_defaults(steps).unwrap()).unwrap()
}

/// A random target, step and forward-marginal query.
fn query(seed: u64, steps: usize) -> (MixtureTarget, Schedule, usize, Vector) {
    let mut rng: StreamRng = stream(seed, 99);
    let target = random_target(&mut rng).unwrap();
    let s = schedule(steps);
    let t = rng.random_range(2..=steps);
    let x0 = target.sample_data(1, rng.random()).pop().unwrap();
    let z = Vector::from_fn(target.dim(), |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    let x = x0 * s.alpha_bar(t).sqrt() + z * s.one_minus_alpha_bar(t).sqrt();
    (target, s, t, x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn schedule_bounds_hold_for_every_horizon(steps in 50usize..5000) {
        let s = schedule(steps);
        let report = validate_schedule(&s);
        prop_assert!(report.all_passed(), "{:?}", report.checks);
        for t in 2..=steps {
            prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            if t > 2 {
                prop_assert!(s.beta(t) >= s.beta(t - 1));
            }
        }
    }

    #[test]
    fn score_matches_posterior_mean_form(seed in any::<u64>(), steps in prop::sample::select(vec![50usize, 200, 800])) {
        let (target, s, t, x) = query(seed, steps);
        let level = NoiseLevel::at_step(&s, t);
        let direct = target.score_at(level, &x);
        let via = target.score_via_posterior_mean_at(level, &x);
        prop_assert!((&direct - &via).norm() <= TWEEDIE_TOL * (1.0 + direct.norm()));
    }

    #[test]
    fn score_jacobian_is_symmetric(seed in any::<u64>()) {
        let (target, s, t, x) = query(seed, 200);
        let jac = target.score_and_jacobian_at(NoiseLevel::at_step(&s, t), &x).1;
        prop_assert!(max_abs(&(&jac - jac.transpose())) <= SYMMETRY_TOL * max_abs(&jac).max(1.0));
    }

    #[test]
    fn jacobian_identity_holds_with_nonnegative_trace(seed in any::<u64>(), steps in prop::sample::select(vec![50usize, 400])) {
        let (target, s, t, x) = query(seed, steps);
        let check = check_jacobian_identity(&target, &s, t, &x).unwrap();
        prop_assert!(check.passed, "{}", check.context);
        prop_assert!(jacobian_identity(&target, &s, t, &x).unwrap().rhs_trace >= 0.0);
    }

    #[test]
    fn logdet_inequality(seed in any::<u64>(), d in 1usize..10, radius in 0.0f64..=0.25) {
        let mut rng = stream(seed, 1);
        let mut a = Matrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let norm = spectral_norm(&a);
        if norm > 0.0 {
            a *= radius / norm;
        }
        prop_assert!(check_logdet(&a).unwrap().passed);
    }

    #[test]
    fn errors_nonnegative_and_linear_in_delta(
        seed in any::<u64>(),
        delta in 1e-3f64..0.5,
        kind in prop::sample::select(vec![PerturbationKind::ConstantBias, PerturbationKind::Tangential]),
    ) {
        let (target, s, t, x) = query(seed, 100);
        let exact = ExactScore::new(&target, &s);
        let one = perturb(exact, PerturbationSpec::new(kind, delta, 7).unwrap());
        let two = perturb(exact, PerturbationSpec::new(kind, 2.0 * delta, 7).unwrap());
        let e1 = pointwise_score_error(&exact, &one, t, &x);
        let e2 = pointwise_score_error(&exact, &two, t, &x);
        if kind == PerturbationKind::Tangential && target.dim() == 1 {
            prop_assert_eq!(e1 + e2, 0.0);
            return Ok(());
        }
        prop_assert!(e1 > 0.0);
        prop_assert!((e2 / e1 - 2.0).abs() <= 1e-9, "{}", e2 / e1);
        let j1 = pointwise_jacobi_error(&exact, &one, t, &x);
        let j2 = pointwise_jacobi_error(&exact, &two, t, &x);
        prop_assert!(j1 >= 0.0);
        if j1 > 1e-12 {
            prop_assert!((j2 / j1 - 2.0).abs() <= 1e-9, "{}", j2 / j1);
        }
        prop_assert_eq!(pointwise_score_error(&exact, &exact, t, &x), 0.0);
        prop_assert_eq!(pointwise_jacobi_error(&exact, &exact, t, &x), 0.0);
    }

    #[test]
    fn perturbed_jacobians_are_consistent(seed in any::<u64>(), kind in prop::sample::select(PerturbationKind::ALL.to_vec())) {
        let (target, s, t, x) = query(seed, 100);
        let field = perturb(ExactScore::new(&target, &s), PerturbationSpec::new(kind, 0.1, 3).unwrap());
        let jac = field.jacobian(t, &x);
        let numeric = finite_diff_jacobian(|y| field.eval(t, y), &x, default_step(&x));
        let level = NoiseLevel::at_step(&s, t);
        let tol = 1e-5 / level.one_minus_alpha_bar.min(1.0);
        prop_assert!(max_abs(&(&numeric - &jac)) <= tol * max_abs(&jac).max(1.0));
    }

    #[test]
    fn tv_invariant_to_permutation_and_partition(seed in any::<u64>(), parts in 1usize..7) {
        let target = MixtureTarget::isotropic(Vector::from_vec(vec![0.3, -0.2]), 0.7);
        let s = schedule(30);
        let run = run_reverse(&s, 2, &ExactScore::new(&target, &s), 200, seed, Coefficient::Star).unwrap();
        let base = tv_monte_carlo(&run.batch, &target, &s).unwrap();

        let n = run.batch.len();
        let perm: Vec<usize> = (0..n).rev().collect();
        let permuted = TrajectoryBatch::from_parts(
            1,
            perm.iter().map(|&i| run.batch.points()[i].clone()).collect(),
            perm.iter().map(|&i| run.batch.log_density()[i]).collect(),
        ).unwrap();
        let p = tv_monte_carlo(&permuted, &target, &s).unwrap();
        prop_assert!((p.value - base.value).abs() <= 1e-12);

        let merged = TrajectoryBatch::merge(run.batch.partition(parts)).unwrap();
        let m = tv_monte_carlo(&merged, &target, &s).unwrap();
        prop_assert!((m.value - base.value).abs() <= 1e-12);
    }

    #[test]
    fn bound_monotone(k in 0.0f64..16.0, e in 0.0f64..1.0, steps in 21usize..4000) {
        let b = theorem_bound(k, 32, steps, e, e, 1.0).value;
        prop_assert!(theorem_bound(k + 1.0, 32, steps, e, e, 1.0).value >= b);
        prop_assert!(theorem_bound(k, 32, steps, e + 0.1, e, 1.0).value >= b);
        prop_assert!(theorem_bound(k, 32, steps, e, e + 0.1, 1.0).value >= b);
        if e == 0.0 {
            prop_assert!(theorem_bound(k + 1.0, 32, steps + 1, 0.0, 0.0, 1.0).value
                < theorem_bound(k + 1.0, 32, steps, 0.0, 0.0, 1.0).value);
        }
    }

    #[test]
    fn greedy_net_covers_and_separates(seed in any::<u64>(), n in 1usize..150, eps in 0.05f64..1.0) {
        let mut rng = stream(seed, 2);
        let pts: Vec<Vector> = (0..n).map(|_| Vector::from_fn(3, |_, _| rng.random::<f64>())).collect();
        let net = greedy_net(&pts, eps);
        for p in &pts {
            prop_assert!(net.iter().any(|&c| (p - &pts[c]).norm() <= eps));
        }
        for (a, &i) in net.iter().enumerate() {
            for &j in &net[a + 1..] {
                prop_assert!((&pts[i] - &pts[j]).norm() > eps);
            }
        }
    }

    #[test]
    fn covering_counts_rotation_invariant(seed in any::<u64>()) {
        let mut rng = stream(seed, 3);
        let pts: Vec<Vector> = (0..200).map(|_| Vector::from_fn(4, |_, _| rng.random::<f64>())).collect();
        let q = orthonormal_frame(&mut rng, 4, 4);
        let rotated: Vec<Vector> = pts.iter().map(|p| &q * p).collect();
        // radii chosen away from any pairwise distance to avoid ties
        let eps = [0.61, 0.33, 0.17];
        let mut safe = true;
        for e in eps {
            for a in &pts {
                for b in &pts {
                    let d = (a - b).norm();
                    if (d - e).abs() < 1e-9 || (d - 2.0 * e).abs() < 1e-9 {
                        safe = false;
                    }
                }
            }
        }
        prop_assume!(safe);
        let a = covering_curve(&pts, &eps).unwrap();
        let b = covering_curve(&rotated, &eps).unwrap();
        prop_assert_eq!(a.counts(), b.counts());
        prop_assert_eq!(a.lower_counts(), b.lower_counts());
    }
}
