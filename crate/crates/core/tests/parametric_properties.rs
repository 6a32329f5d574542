use asf_core::data::{Dataset, XKind};
use asf_core::first_stage::{fit_mle, FirstStageFit, ProxyModel};
use asf_core::parametric::{asf_conditional, asf_unconditional, fit_ols, variance_parametric, KroneckerBasis};
use asf_core::simlab::{DgpName, DgpParams, DgpSpec};
use asf_core::terms::parse_terms;
use asf_core::trimming::TrimmingSet;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn basis(p1: &[&str], p2: &[&str]) -> KroneckerBasis {
    KroneckerBasis::new(parse_terms(p1).unwrap(), parse_terms(p2).unwrap()).unwrap()
}

fn draw(name: DgpName, n: usize, seed: u64) -> (Dataset, FirstStageFit) {
    let data = DgpSpec::new(name, n, seed).generate_seeded().unwrap();
    let fs = fit_mle(&data, &ProxyModel::linear(1)).unwrap();
    (data, fs)
}

/// Least squares through a QR factorization of the explicit design.
fn qr_oracle(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let x = DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
    let qr = x.qr();
    let qty = qr.q().transpose() * DVector::from_column_slice(y);
    qr.r().solve_upper_triangular(&qty).unwrap().iter().copied().collect()
}

#[test]
fn scalar_control_block_is_plain_regression() {
    let (data, fs) = draw(DgpName::C, 400, 1);
    let b = basis(&["1", "x", "x^2"], &["1"]);
    let fit = fit_ols(&data, &fs, &b).unwrap();
    let rows: Vec<Vec<f64>> = data.x.iter().map(|&x| vec![1.0, x, x * x]).collect();
    let want = qr_oracle(&rows, &data.y);
    for (a, w) in fit.gamma_hat.iter().zip(&want) {
        assert!((a - w).abs() <= 1e-10, "{a} vs {w}");
    }
    // no dependence on V̂, hence none on the first stage
    let est = asf_unconditional(0.7, &fit, &fs).unwrap();
    assert!((est.mu_hat - (want[0] + 0.7 * want[1] + 0.49 * want[2])).abs() <= 1e-10);
    let var = variance_parametric(0.7, &fit, &fs).unwrap();
    assert!(var.first_stage_gradient.iter().all(|g| *g == 0.0));
    let moved = fs.with_beta(&fs.beta_hat.iter().map(|b| b + 0.3).collect::<Vec<_>>(), &data);
    let refit = fit_ols(&data, &moved, &b).unwrap();
    assert!((asf_unconditional(0.7, &refit, &moved).unwrap().mu_hat - est.mu_hat).abs() <= 1e-12);
}

#[test]
fn matches_dense_oracle_on_random_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 100;
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let z: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let w: Vec<f64> = (0..n).map(|i| 0.5 * x[i] - z[i] + rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let data = Dataset::new(y.clone(), x, vec![z], vec![w], XKind::Continuous).unwrap();
    let fs = fit_mle(&data, &ProxyModel::linear(1)).unwrap();
    let b = basis(&["1", "x"], &["1", "v", "v^2"]);
    assert_eq!(b.len(), 6);
    let fit = fit_ols(&data, &fs, &b).unwrap();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let (xi, vi) = (data.x[i], fs.control_values.row(i)[0]);
            vec![1.0, vi, vi * vi, xi, xi * vi, xi * vi * vi]
        })
        .collect();
    for (a, w) in fit.gamma_hat.iter().zip(qr_oracle(&rows, &y)) {
        assert!((a - w).abs() <= 1e-9 * w.abs().max(1.0), "{a} vs {w}");
    }
}

#[test]
fn zero_noise_outcome_is_interpolated() {
    let (data, fs) = draw(DgpName::P, 300, 3);
    let b = KroneckerBasis::default_for(&data);
    let truth: Vec<f64> = (0..b.len()).map(|k| (k as f64 * 0.7).sin()).collect();
    let y = (0..data.n())
        .map(|i| b.eval(data.x[i], fs.control_values.row(i)).iter().zip(&truth).map(|(r, g)| r * g).sum())
        .collect();
    let fit = fit_ols(&data.with_outcome(y).unwrap(), &fs, &b).unwrap();
    for (a, w) in fit.gamma_hat.iter().zip(&truth) {
        assert!((a - w).abs() <= 1e-8);
    }
}

#[test]
fn intercepts_only_give_the_sample_mean() {
    let (data, fs) = draw(DgpName::C, 250, 4);
    let fit = fit_ols(&data, &fs, &basis(&["1"], &["1"])).unwrap();
    let mean = data.y.iter().sum::<f64>() / data.n() as f64;
    assert!((asf_unconditional(-1.0, &fit, &fs).unwrap().mu_hat - mean).abs() <= 1e-12);
}

#[test]
fn shifting_the_evaluation_point() {
    let (data, fs) = draw(DgpName::P, 300, 5);
    let b = basis(&["1", "x"], &["1", "v", "v^2"]);
    let fit = fit_ols(&data, &fs, &b).unwrap();
    let slope_block: f64 = (0..data.n())
        .map(|i| {
            let v = fs.control_values.row(i)[0];
            fit.gamma_hat[3] + fit.gamma_hat[4] * v + fit.gamma_hat[5] * v * v
        })
        .sum::<f64>()
        / data.n() as f64;
    let base = asf_unconditional(0.2, &fit, &fs).unwrap().mu_hat;
    for delta in [-1.0, 0.25, 2.0] {
        let moved = asf_unconditional(0.2 + delta, &fit, &fs).unwrap().mu_hat;
        assert!((moved - base - slope_block * delta).abs() <= 1e-12 * (1.0 + base.abs()));
    }
}

#[test]
fn full_trim_is_the_unconditional_estimate() {
    let (data, fs) = draw(DgpName::C, 300, 6);
    let fit = fit_ols(&data, &fs, &KroneckerBasis::default_for(&data)).unwrap();
    let a = asf_unconditional(0.5, &fit, &fs).unwrap();
    let b = asf_conditional(0.5, &data, &fit, &fs, &TrimmingSet::Full).unwrap();
    assert_eq!(a.mu_hat, b.mu_hat);
    assert_eq!(a.sigma2_hat, b.sigma2_hat);
}

#[test]
fn constant_surface_ignores_the_trim() {
    let (data, fs) = draw(DgpName::P, 300, 7);
    let data = data.with_outcome(vec![-1.5; 300]).unwrap();
    let fit = fit_ols(&data, &fs, &KroneckerBasis::default_for(&data)).unwrap();
    for trim in [TrimmingSet::Full, TrimmingSet::default(), TrimmingSet::QuantileBox { lo: 0.3, hi: 0.6 }] {
        let est = asf_conditional(0.5, &data, &fit, &fs, &trim).unwrap();
        assert!((est.mu_hat + 1.5).abs() <= 1e-12, "{}", est.mu_hat);
    }
}

#[test]
fn known_first_stage_without_noise_is_the_variance_of_the_surface() {
    let spec = DgpSpec::new(DgpName::P, 400, 8);
    let data = spec.generate_seeded().unwrap();
    let fs = FirstStageFit::fixed(&spec.proxy_model(), &spec.true_first_stage(), &data).unwrap();
    let b = KroneckerBasis::default_for(&data);
    let y: Vec<f64> = (0..data.n()).map(|i| spec.m0(data.x[i], fs.control_values.row(i)[0])).collect();
    let data = data.with_outcome(y).unwrap();
    let fit = fit_ols(&data, &fs, &b).unwrap();
    let est = asf_unconditional(0.4, &fit, &fs).unwrap();
    let surface: Vec<f64> = (0..data.n()).map(|i| fit.surface(0.4, i)).collect();
    let direct = surface.iter().map(|s| (s - est.mu_hat).powi(2)).sum::<f64>() / data.n() as f64;
    let s2 = est.sigma2_hat.unwrap();
    assert!((s2 - direct).abs() <= 1e-10 * direct, "{s2} vs {direct}");
}

#[test]
fn variance_is_homogeneous_of_degree_two() {
    let (data, fs) = draw(DgpName::P, 400, 9);
    let b = KroneckerBasis::default_for(&data);
    let fit = fit_ols(&data, &fs, &b).unwrap();
    let doubled = data.with_outcome(data.y.iter().map(|y| 2.0 * y).collect()).unwrap();
    let fit2 = fit_ols(&doubled, &fs, &b).unwrap();
    for trim in [TrimmingSet::Full, TrimmingSet::default()] {
        let s = asf_conditional(0.5, &data, &fit, &fs, &trim).unwrap().sigma2_hat.unwrap();
        let s2 = asf_conditional(0.5, &doubled, &fit2, &fs, &trim).unwrap().sigma2_hat.unwrap();
        assert!((s2 - 4.0 * s).abs() <= 1e-10 * 4.0 * s);
    }
}

#[test]
fn finite_without_common_support() {
    // a large first-stage slope makes V̂ | X ≈ x0 a narrow slice of the V̂ range
    let mut spec = DgpSpec::new(DgpName::C, 1000, 10);
    spec.params = DgpParams { beta1: 3.0, ..DgpParams::default() };
    let data = spec.generate_seeded().unwrap();
    let fs = fit_mle(&data, &ProxyModel::linear(1)).unwrap();
    let fit = fit_ols(&data, &fs, &KroneckerBasis::default_for(&data)).unwrap();
    let near: Vec<f64> = (0..data.n()).filter(|&i| (data.x[i] - 2.0).abs() < 0.1).map(|i| fs.control_values.row(i)[0]).collect();
    let all = fs.control_values.column(0);
    let span = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max) - v.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(span(&near) < 0.5 * span(&all));
    let est = asf_unconditional(2.0, &fit, &fs).unwrap();
    assert!(est.mu_hat.is_finite() && est.sigma2_hat.unwrap().is_finite());
}

#[test]
fn exogenous_design_agrees_with_the_naive_regression() {
    let (data, fs) = draw(DgpName::Exo, 4000, 11);
    let fit = fit_ols(&data, &fs, &KroneckerBasis::default_for(&data)).unwrap();
    let naive = fit_ols(&data, &fs, &KroneckerBasis::without_control(&data)).unwrap();
    for x0 in [-0.5, 0.5] {
        let a = asf_unconditional(x0, &fit, &fs).unwrap();
        let b = asf_unconditional(x0, &naive, &fs).unwrap();
        assert!((a.mu_hat - b.mu_hat).abs() <= 3.0 * a.std_error().unwrap(), "{} vs {}", a.mu_hat, b.mu_hat);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn residuals_are_orthogonal_to_the_regressors(seed in any::<u64>()) {
        let (data, fs) = draw(DgpName::P, 200, seed);
        let fit = fit_ols(&data, &fs, &KroneckerBasis::default_for(&data)).unwrap();
        let scale = (fit.residuals.iter().map(|e| e * e).sum::<f64>() / 200.0).sqrt();
        for col in 0..fit.design[0].len() {
            let rs = (fit.design.iter().map(|r| r[col] * r[col]).sum::<f64>() / 200.0).sqrt();
            let cov = fit.design.iter().zip(&fit.residuals).map(|(r, e)| r[col] * e).sum::<f64>() / 200.0;
            prop_assert!(cov.abs() <= 1e-8 * scale * rs, "{col}: {cov}");
        }
    }
}
