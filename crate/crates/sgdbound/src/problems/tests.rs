use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::linalg::dist_sq;

fn synthetic(n: usize, d: usize, labels: LabelModel, noise: f64, unit_rows: bool, seed: u64) -> (Dataset, Vec<f64>) {
    SyntheticSpec { n, d, labels, noise, noise_kind: NoiseKind::Gaussian, unit_rows, seed }.generate().unwrap()
}

fn random_point(d: usize, scale: f64, seed: u64) -> Vec<f64> {
    let mut rng = crate::seed::rng_for(seed, 99);
    (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    dist_sq(a, b).sqrt() / norm(a).max(norm(b)).max(1e-8)
}

#[test]
fn least_squares_identity() {
    let data = Dataset::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]).unwrap();
    let p = Problem::least_squares(data).unwrap();
    assert_eq!(p.cert().theta1, 1.0);
    assert_eq!(p.cert().theta2, 0.0);
    assert_eq!(p.optimum(), &[0.0, 0.0]);
    assert_eq!(p.value(&[1.0, 2.0]), 2.5);
    assert_eq!(p.gradient_vec(&[1.0, 2.0]), vec![1.0, 2.0]);
}

#[test]
fn least_squares_diagonal_theta1() {
    let data = Dataset::from_rows(&[vec![1.0, 0.0], vec![0.0, 3.0]], vec![0.0, 0.0]).unwrap();
    let p = Problem::least_squares(data).unwrap();
    assert_relative_eq!(p.cert().theta1, 1.0, max_relative = 1e-12);
    assert_relative_eq!(p.smoothness().value(), 9.0, max_relative = 1e-12);
}

#[test]
fn least_squares_rank_deficient() {
    let data = Dataset::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]], vec![1.0, 0.0]).unwrap();
    assert!(matches!(Problem::least_squares(data), Err(ProblemError::RankDeficient(_))));
}

#[test]
fn least_squares_optimum_matches_descent() {
    let (data, _) = synthetic(20, 5, LabelModel::Linear, 0.3, false, 3);
    let p = Problem::least_squares(data).unwrap();
    assert!(p.optimum_residual() <= 1e-8);
    let descended = p.resolve_optimum(&[0.0; 5], 1e-12).unwrap();
    assert!(dist_sq(&descended, p.optimum()).sqrt() <= 1e-8);
}

#[test]
fn least_squares_cert_holds_at_samples() {
    let (data, _) = synthetic(20, 5, LabelModel::Linear, 0.3, false, 4);
    let p = Problem::least_squares(data).unwrap();
    let theta1 = p.cert().theta1;
    for s in 0..1000 {
        let x = random_point(5, 1.0 + s as f64 * 0.01, s);
        let g = p.gradient_vec(&x);
        let diff: Vec<f64> = x.iter().zip(p.optimum()).map(|(a, b)| a - b).collect();
        let lhs = dot(&g, &diff);
        assert!(lhs >= theta1 * norm_sq(&diff) - 1e-9 * (1.0 + lhs.abs()));
    }
}

#[test]
fn phase_retrieval_single_row() {
    let data = Dataset::from_rows(&[vec![1.0]], vec![0.0]).unwrap();
    let p = Problem::phase_retrieval(data, None).unwrap();
    assert_eq!(p.cert().theta2, 0.0);
    // b = 0 reduces to x^2 / 2
    assert_eq!(p.value(&[3.0]), 4.5);
    assert_eq!(p.gradient_vec(&[3.0]), vec![3.0]);
}

#[test]
fn phase_retrieval_planted_symmetry() {
    let (data, signal) = synthetic(50, 10, LabelModel::Magnitude, 0.0, false, 5);
    let p = Problem::phase_retrieval(data, Some(&signal)).unwrap();
    let neg: Vec<f64> = signal.iter().map(|v| -v).collect();
    assert_eq!(p.value(&signal), 0.0);
    assert_eq!(p.value(&neg), 0.0);
    assert_eq!(p.optima().len(), 2);
    assert_eq!(p.dist2(&neg), 0.0);
    assert!(p.is_nonsmooth());
}

#[test]
fn phase_retrieval_noisy_resolves() {
    let (data, signal) = synthetic(50, 10, LabelModel::Magnitude, 0.1, false, 6);
    let p = Problem::phase_retrieval(data, Some(&signal)).unwrap();
    assert!(p.optimum_residual() <= 1e-6);
    assert!(p.value(p.optimum()) <= p.value(&signal));
}

#[test]
fn heavy_tail_symmetric_minimum() {
    let (data, _) = synthetic(30, 4, LabelModel::Linear, 0.0, false, 7);
    let data = data.replace_labels(vec![0.0; 30]).unwrap();
    let p = Problem::heavy_tail_mle(data, 0.5).unwrap();
    assert!(norm(p.optimum()) < 1e-12);
    assert_eq!(p.cert().center, CertCenter::Origin);
}

#[test]
fn heavy_tail_single_datum_grid() {
    let data = Dataset::from_rows(&[vec![1.0]], vec![2.0]).unwrap();
    let p = Problem::heavy_tail_mle(data, 1.0).unwrap();
    assert_eq!(p.cert().theta2, 2.0);
    for i in -20_000..=20_000 {
        let x = i as f64 * 1e-3;
        let g = p.gradient_vec(&[x])[0];
        assert!(g * x >= x * x - 2.0, "x = {x}");
    }
}

#[test]
fn heavy_tail_rejects_bad_lambda() {
    let data = Dataset::from_rows(&[vec![1.0]], vec![2.0]).unwrap();
    assert!(Problem::heavy_tail_mle(data, 0.0).is_err());
}

#[test]
fn blake_zisserman_limits() {
    let (data, _) = synthetic(30, 4, LabelModel::Linear, 0.0, false, 8);
    let zero = data.replace_labels(vec![0.0; 30]).unwrap();
    let p = Problem::blake_zisserman(zero, 0.5, 1.0).unwrap();
    assert!(norm(p.optimum()) < 1e-12);
    let wide = Problem::blake_zisserman(data.clone(), 0.5, 1e8).unwrap();
    assert!(wide.cert().theta2 < 1e-7);
    assert!(Problem::blake_zisserman(data, 0.5, 0.0).is_err());
}

#[test]
fn blake_zisserman_curvature_constant() {
    // h''(0) = 1/(nu + 1) is the peak for moderate nu
    assert!(bz_curvature(1.0) >= 0.5);
    assert!(bz_curvature(1.0) <= 0.5 * 1.02);
}

#[test]
fn l2_constant_base_is_pure_quadratic() {
    let p = Problem::l2_regularized_bounded_grad(BaseObjective::constant(3), 0.5).unwrap();
    assert_eq!(p.cert().theta2, 0.0);
    assert_eq!(p.cert().theta1, 0.25);
    assert_eq!(p.gradient_vec(&[1.0, 2.0, 3.0]), vec![1.0, 2.0, 3.0]);
}

#[test]
fn l2_logistic_unit_rows() {
    let (data, _) = synthetic(30, 5, LabelModel::Sign, 0.1, true, 9);
    let base = BaseObjective::logistic(data).unwrap();
    let p = Problem::l2_regularized_bounded_grad(base, 0.1).unwrap();
    assert_relative_eq!(p.cert().theta2, 1.0 / 0.2, max_relative = 1e-12);
}

#[test]
fn l2_needs_gradient_bound() {
    let (data, _) = synthetic(10, 2, LabelModel::Linear, 0.1, false, 1);
    let err = Problem::l2_regularized_bounded_grad(BaseObjective::heavy_tail(data), 1.0);
    assert!(matches!(err, Err(ProblemError::MissingGradientBound)));
}

#[test]
fn logistic_l1_empty_data() {
    let p = Problem::logistic_l1(Dataset::empty(4), 1.0).unwrap();
    for s in 0..200 {
        let x = random_point(4, 3.0, s);
        let g = p.gradient_vec(&x);
        let l1: f64 = x.iter().map(|v| v.abs()).sum();
        assert_relative_eq!(dot(&g, &x), l1, max_relative = 1e-14);
        assert!(l1 >= norm(&x));
    }
    assert_eq!(p.growth().unwrap().theta3, 4.0);
}

#[test]
fn logistic_l1_origin_inequality() {
    let (data, _) = synthetic(40, 6, LabelModel::Sign, 0.5, false, 10);
    let lambda = 0.3;
    let p = Problem::logistic_l1(data, lambda).unwrap();
    for s in 0..2000 {
        let x = random_point(6, 0.01 * (1 + s % 500) as f64, s);
        let g = p.gradient_vec(&x);
        let l1: f64 = x.iter().map(|v| v.abs()).sum();
        assert!(dot(&g, &x) >= lambda * l1 - 0.5);
    }
}

#[test]
fn logistic_l1_large_lambda_gives_zero() {
    let (data, _) = synthetic(40, 6, LabelModel::Sign, 0.5, false, 11);
    let p = Problem::logistic_l1(data, 10.0).unwrap();
    assert!(p.optimum().iter().all(|v| *v == 0.0));
    assert_eq!(p.stationarity(&[0.0; 6]), 0.0);
}

#[test]
fn logistic_l1_resolves_nonzero_optimum() {
    let (data, _) = synthetic(100, 20, LabelModel::Sign, 0.2, false, 12);
    let p = Problem::logistic_l1(data, 0.01).unwrap();
    assert!(p.optimum().iter().any(|v| *v != 0.0));
    assert!(p.optimum_residual() <= 1e-6);
}

#[test]
fn logistic_l1_rejects_labels() {
    let data = Dataset::from_rows(&[vec![1.0], vec![2.0]], vec![0.5, 1.0]).unwrap();
    assert!(matches!(Problem::logistic_l1(data, 1.0), Err(ProblemError::Labels(_))));
}

#[test]
fn two_layer_relu_zero_data() {
    let data = Dataset::new(vec![0.0; 12], vec![1.0, -1.0, 1.0, -1.0], 3).unwrap();
    let p = Problem::two_layer_nn(data, 4, 1.0, Activation::Relu, 1).unwrap();
    let x = random_point(p.dim(), 1.0, 2);
    let g = p.gradient_vec(&x);
    assert_relative_eq!(dot(&g, &x), norm_sq(&x), max_relative = 1e-14);
    assert_relative_eq!(p.value(&x), 2f64.ln() + 0.5 * norm_sq(&x), max_relative = 1e-14);
}

#[test]
fn two_layer_relu_origin_inequality() {
    let (data, _) = synthetic(20, 3, LabelModel::Sign, 0.1, false, 13);
    let p = Problem::two_layer_nn(data, 5, 1.0, Activation::Relu, 3).unwrap();
    assert_eq!((p.cert().theta1, p.cert().theta2), (1.0, 2.0));
    let mut worst = f64::INFINITY;
    for s in 0..10_000u64 {
        let x = random_point(p.dim(), 0.01 * (1 + s % 400) as f64, s);
        let g = p.gradient_vec(&x);
        worst = worst.min(dot(&g, &x) - norm_sq(&x));
    }
    assert!(worst >= -2.0, "{worst}");
}

#[test]
fn sigmoid_constant() {
    let (data, _) = synthetic(10, 3, LabelModel::Sign, 0.1, false, 14);
    let p = Problem::two_layer_nn(data, 4, 1.0, Activation::Sigmoid, 3).unwrap();
    assert_eq!(p.cert().theta2, 3.0);
    assert_eq!(p.cert().theta1, 0.5);
    assert!(!p.is_nonsmooth());
}

#[test]
fn network_width_validation() {
    let (data, _) = synthetic(10, 3, LabelModel::Sign, 0.1, false, 14);
    assert!(Problem::two_layer_nn(data.clone(), 0, 1.0, Activation::Relu, 0).is_err());
    let deep = Problem::deep_relu_nn(data, &[4, 3], 1.0, false, 0).unwrap();
    assert_eq!(deep.cert().theta2, 3.0);
    assert_eq!(deep.dim(), 3 * 4 + 4 * 3 + 3);
}

#[test]
fn finite_differences_exact_on_quadratic() {
    let p = Problem::l2_regularized_bounded_grad(BaseObjective::constant(2), 0.5).unwrap();
    for h in [1e-3, 1e-5, 0.5] {
        let fd = finite_diff_gradient(&p, &[1.0, 2.0], h).unwrap();
        assert_relative_eq!(fd[0], 1.0, max_relative = 1e-9);
        assert_relative_eq!(fd[1], 2.0, max_relative = 1e-9);
    }
    assert!(finite_diff_gradient(&p, &[1.0, 2.0], 0.0).is_err());
}

#[test]
fn finite_differences_flag_kinks() {
    let p = Problem::logistic_l1(Dataset::empty(3), 1.0).unwrap();
    assert!(matches!(finite_diff_gradient(&p, &[1.0, 0.0, 1.0], 1e-5), Err(ProblemError::NearKink)));
    let fd = finite_diff_gradient(&p, &[0.2, 0.1, 0.3], 1e-5).unwrap();
    assert!(rel_err(&fd, &p.gradient_vec(&[0.2, 0.1, 0.3])) < 1e-6);
}

#[test]
fn oracle_variance_matches_sampling() {
    let (data, _) = synthetic(30, 3, LabelModel::Linear, 0.5, false, 15);
    let p = Problem::least_squares(data).unwrap();
    let oracle = OracleSpec { batch_size: Some(2), additive_sigma2: 0.3 };
    let x = [0.5, -1.0, 2.0];
    let exact = p.oracle_variance(&x, &oracle);
    let full = p.gradient_vec(&x);
    let mut rng = crate::seed::rng_for(1, 2);
    let (mut batch, mut g) = (Vec::new(), vec![0.0; 3]);
    let reps = 40_000;
    let mut acc = 0.0;
    for _ in 0..reps {
        p.sample_gradient(&x, &oracle, &mut rng, &mut batch, &mut g);
        acc += dist_sq(&g, &full);
    }
    assert_relative_eq!(acc / reps as f64, exact, max_relative = 0.05);
    assert_eq!(p.oracle_variance(&x, &OracleSpec::full()), 0.0);
}

fn suite() -> Vec<Problem> {
    let (ls, _) = synthetic(20, 5, LabelModel::Linear, 0.3, false, 20);
    let (pr, signal) = synthetic(50, 10, LabelModel::Magnitude, 0.0, false, 21);
    let (ht, _) = synthetic(30, 4, LabelModel::Linear, 1.0, false, 22);
    let (lg, _) = synthetic(30, 5, LabelModel::Sign, 0.3, true, 23);
    let (l1, _) = synthetic(40, 6, LabelModel::Sign, 0.3, false, 24);
    let (nn, _) = synthetic(15, 3, LabelModel::Sign, 0.3, false, 25);
    vec![
        Problem::least_squares(ls).unwrap(),
        Problem::phase_retrieval(pr, Some(&signal)).unwrap(),
        Problem::heavy_tail_mle(ht.clone(), 0.5).unwrap(),
        Problem::blake_zisserman(ht, 0.5, 1.0).unwrap(),
        Problem::l2_regularized_bounded_grad(BaseObjective::logistic(lg).unwrap(), 0.1).unwrap(),
        Problem::logistic_l1(l1, 0.1).unwrap(),
        Problem::two_layer_nn(nn, 4, 1.0, Activation::Relu, 5).unwrap(),
    ]
}

#[test]
fn exhaustive_partition_is_unbiased() {
    for p in suite() {
        let x = random_point(p.dim(), 1.0, 30);
        let full = p.gradient_vec(&x);
        let n = p.n();
        let b = [5, 3, 2, 1].into_iter().find(|b| n % b == 0).unwrap();
        let mut avg = vec![0.0; p.dim()];
        let mut g = vec![0.0; p.dim()];
        let idx: Vec<usize> = (0..n).collect();
        for chunk in idx.chunks(b) {
            p.minibatch_gradient(&x, chunk, &mut g);
            avg.iter_mut().zip(&g).for_each(|(a, v)| *a += v / (n / b) as f64);
        }
        assert!(rel_err(&avg, &full) < 1e-12, "{}", p.name());
    }
}

#[test]
fn optima_are_stationary() {
    for p in suite() {
        assert!(p.optimum_residual() <= 1e-6, "{}: {}", p.name(), p.optimum_residual());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradients_match_finite_differences(seed in 0u64..1000, scale in 0.1f64..3.0) {
        for p in suite() {
            let x = random_point(p.dim(), scale, seed);
            if p.near_kink(&x, 1e-5) {
                continue;
            }
            let fd = finite_diff_gradient(&p, &x, 1e-5).unwrap();
            let g = p.gradient_vec(&x);
            prop_assert!(rel_err(&g, &fd) < 1e-5, "{}: {}", p.name(), rel_err(&g, &fd));
        }
    }

    #[test]
    fn minibatch_mean_is_full_gradient(
        rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 4..12),
        x in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let labels: Vec<f64> = rows.iter().map(|r| r[0] - r[1]).collect();
        let data = Dataset::from_rows(&rows, labels).unwrap();
        let p = Problem::heavy_tail_mle(data, 0.2).unwrap();
        let idx: Vec<usize> = (0..rows.len()).collect();
        let mut g = vec![0.0; 3];
        p.minibatch_gradient(&x, &idx, &mut g);
        prop_assert!(rel_err(&g, &p.gradient_vec(&x)) < 1e-12);
    }

    #[test]
    fn least_squares_cert_is_sound(
        x in prop::collection::vec(-50.0f64..50.0, 5),
        seed in 0u64..50,
    ) {
        let (data, _) = synthetic(12, 5, LabelModel::Linear, 0.5, false, seed);
        let p = Problem::least_squares(data).unwrap();
        let diff: Vec<f64> = x.iter().zip(p.optimum()).map(|(a, b)| a - b).collect();
        let lhs = dot(&p.gradient_vec(&x), &diff);
        prop_assert!(lhs - p.cert().theta1 * norm_sq(&diff) >= -1e-9 * (1.0 + lhs.abs()));
    }
}
