use asf_core::pipeline::EstimatorKind;
use asf_core::quadrature::gauss_hermite_normal;
use asf_core::simlab::{replication_rng, run_monte_carlo, seeded_rng, true_asf, true_asf_mc, DgpName, DgpSpec, McCell, McConfig, Region};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn draw(name: DgpName, n: usize, seed: u64) -> (asf_core::data::Dataset, Vec<f64>) {
    DgpSpec::new(name, n, seed).generate_with_latent(&mut seeded_rng(seed)).unwrap()
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// OLS coefficients and classical standard errors.
fn ols(columns: &[&[f64]], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = y.len();
    let x = DMatrix::from_fn(n, columns.len() + 1, |i, j| if j == 0 { 1.0 } else { columns[j - 1][i] });
    let yv = DVector::from_column_slice(y);
    let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
    let coef = &xtx_inv * x.transpose() * &yv;
    let resid = &yv - &x * &coef;
    let s2 = resid.norm_squared() / (n - x.ncols()) as f64;
    let se = (0..x.ncols()).map(|j| (s2 * xtx_inv[(j, j)]).sqrt()).collect();
    (coef.iter().copied().collect(), se)
}

fn ks_statistic(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn exogenous_design_has_uncorrelated_regressor() {
    let (data, eps) = draw(DgpName::Exo, 10_000, 1);
    assert!(correlation(&data.x, &eps).abs() < 0.03);
    let (data, eps) = draw(DgpName::C, 10_000, 1);
    assert!(correlation(&data.x, &eps) > 0.2);
}

#[test]
fn selection_gap_matches_quadrature() {
    let mut spec = DgpSpec::new(DgpName::D, 1_000_000, 2);
    spec.params.beta1 = 1.0;
    let (data, eps) = spec.generate_with_latent(&mut seeded_rng(2)).unwrap();
    let (mut s, mut c) = ([0.0; 2], [0.0; 2]);
    for (x, e) in data.x.iter().zip(&eps) {
        s[*x as usize] += e;
        c[*x as usize] += 1.0;
    }
    let simulated = s[1] / c[1] - s[0] / c[0];
    // E[Z | X = 1] = -E[Z | X = 0] = 2 E[Z Λ(Z)] under symmetric logistic selection
    let gh = gauss_hermite_normal(60);
    let ez = 2.0 * gh.integrate(|z| z * DgpSpec::selection_probability(z));
    let exact = spec.params.beta1 + spec.params.beta2 * 2.0 * ez;
    assert!((simulated / exact - 1.0).abs() < 0.01, "{simulated} vs {exact}");
}

#[test]
fn proxy_noise_is_unrelated_to_regressors() {
    for name in [DgpName::C, DgpName::D, DgpName::P, DgpName::Exo] {
        let (data, eps) = draw(name, 100_000, 3);
        let noise: Vec<f64> = data.w[0].iter().zip(&eps).map(|(w, e)| w - e).collect();
        let (coef, se) = ols(&[&data.x, &data.z[0]], &noise);
        for (b, s) in coef.iter().zip(&se) {
            assert!(b.abs() <= 3.0 * s, "{name:?}: {b} vs se {s}");
        }
    }
}

#[test]
fn control_makes_latent_law_invariant_in_regressor() {
    let spec = DgpSpec::new(DgpName::D, 100_000, 4);
    let (data, eps) = spec.generate_with_latent(&mut seeded_rng(4)).unwrap();
    for lo in [-0.5, 0.0, 0.5] {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for i in 0..data.n() {
            let v = spec.control(data.x[i], data.z[0][i]);
            if (lo..lo + 0.05).contains(&v) {
                if data.x[i] == 1.0 { a.push(eps[i]) } else { b.push(eps[i]) }
            }
        }
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let critical = 1.628 * ((na + nb) / (na * nb)).sqrt();
        let d = ks_statistic(&mut a, &mut b);
        assert!(d < critical, "bin {lo}: {d} vs {critical}");
    }
}

#[test]
fn quadrature_truth_agrees_with_simulation() {
    let chunks = 10;
    for name in [DgpName::C, DgpName::D, DgpName::P, DgpName::Exo] {
        let spec = DgpSpec::new(name, 100, 0);
        for region in [Region::full(), Region::population_box(name, 0.05, 0.95)] {
            let x0 = name.default_x0();
            let exact = true_asf(&spec, x0, &region);
            let parts: Vec<(f64, f64)> = (0..chunks).map(|k| true_asf_mc(&spec, x0, &region, 1_000_000, 100 + k)).collect();
            let mean = parts.iter().map(|p| p.0).sum::<f64>() / chunks as f64;
            let se = parts.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt() / chunks as f64;
            assert!(se < 1e-3);
            assert!((mean - exact).abs() <= 4.0 * se, "{name:?}: {mean} vs {exact} (se {se})");
        }
    }
}

#[test]
fn untrimmed_truth_is_closed_form() {
    let spec = DgpSpec::new(DgpName::C, 100, 0);
    let p = spec.params;
    for x0 in [-1.0, 0.0, 2.0] {
        // E[ε] = 0 by construction
        assert!((true_asf(&spec, x0, &Region::full()) - (p.a0 + p.a1 * x0)).abs() < 1e-12);
    }
}

#[test]
fn replication_streams_do_not_depend_on_thread_count() {
    let config = McConfig {
        master_seed: 11,
        cells: vec![McCell::new(DgpSpec::new(DgpName::C, 300, 0), EstimatorKind::Parametric, vec![0.0, 0.5], 12)],
        record_timing: false,
    };
    let run = |threads| rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| run_monte_carlo(&config).unwrap());
    assert_eq!(run(1), run(3));
    use rand::Rng;
    assert_eq!(replication_rng(1, 0, 5).random::<u64>(), replication_rng(1, 0, 5).random::<u64>());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn report_invariants(seed in any::<u64>(), reps in 2usize..8) {
        let cells = vec![
            McCell::new(DgpSpec::new(DgpName::D, 300, 0), EstimatorKind::Parametric, vec![0.0, 1.0], reps),
            McCell::new(DgpSpec::new(DgpName::P, 300, 0), EstimatorKind::Naive, vec![0.5], reps),
        ];
        let report = run_monte_carlo(&McConfig { master_seed: seed, cells, record_timing: false }).unwrap();
        for r in &report.results {
            if let Some(c) = r.coverage {
                prop_assert!((0.0..=1.0).contains(&c));
            }
            prop_assert!(r.rmse * r.rmse >= r.bias * r.bias * (1.0 - 1e-12));
            prop_assert_eq!(r.replications + r.failures, reps);
        }
    }
}
