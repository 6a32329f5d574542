//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails. Arguments of the form `c4`
//! restrict the run to the named criteria; other arguments are ignored.

use std::collections::HashMap;
use std::time::Instant;

use asf_core::kernel::{compute_moment_matrices, KernelSpec, MultiIndexBasis};
use asf_core::locpoly::{fit_at, LocPolyConfig, SmoothingMode};
use asf_core::nonparametric::{parametric_cdfs, small_ball_diagnostic, DEFAULT_GRID_SIZE};
use asf_core::pipeline::{EstimatorKind, EstimatorOptions};
use asf_core::semiparametric::{partial_mean_beta_derivative, variance_discrete};
use asf_core::simlab::{rate_check, run_monte_carlo, simulate_cell, summarize_cell, DgpName, DgpSpec, McCell, McCellResult, McConfig, Region};
use asf_core::{fit_mle, ProxyModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MASTER_SEED: u64 = 20_240_917;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

/// Monte Carlo cells computed once and shared between criteria.
#[derive(Default)]
struct Cells {
    cache: HashMap<(DgpName, &'static str, usize), (McCellResult, usize)>,
}

fn dgp_code(name: DgpName) -> u32 {
    match name {
        DgpName::C => 1,
        DgpName::D => 2,
        DgpName::P => 3,
        DgpName::Exo => 4,
        DgpName::Constant => 5,
    }
}

fn estimator_code(kind: EstimatorKind) -> u32 {
    match kind {
        EstimatorKind::SemiparametricContinuous => 1,
        EstimatorKind::SemiparametricDiscrete => 2,
        EstimatorKind::Parametric => 3,
        EstimatorKind::Nonparametric => 4,
        EstimatorKind::Naive => 5,
    }
}

impl Cells {
    /// Result at the design's default evaluation point. The replication
    /// stream depends only on design, estimator and sample size, so a cell
    /// is the same whichever criterion asks for it first.
    fn get(&mut self, name: DgpName, kind: EstimatorKind, n: usize, reps: usize) -> McCellResult {
        let key = (name, kind.label(), n);
        if let Some((r, have)) = self.cache.get(&key) {
            if *have >= reps {
                return r.clone();
            }
        }
        let start = Instant::now();
        let cell = McCell::new(DgpSpec::new(name, n, 0), kind, vec![name.default_x0()], reps);
        let index = dgp_code(name) << 24 | estimator_code(kind) << 16 | (n / 100) as u32;
        let draws = simulate_cell(&cell, MASTER_SEED, index).expect("Monte Carlo cell");
        let r = summarize_cell(&cell, 0, &draws).remove(0);
        eprintln!(
            "  [{} {} n={} R={}] bias={:.4} rmse={:.4} mae={:.4} cov={:?} ratio={:?} ({:.0}s)",
            name.label(),
            kind.label(),
            n,
            reps,
            r.bias,
            r.rmse,
            r.median_abs_error,
            r.coverage,
            r.variance_ratio,
            start.elapsed().as_secs_f64()
        );
        self.cache.insert(key, (r.clone(), reps));
        r
    }
}

fn poly(basis: &MultiIndexBasis, coef: &[f64], u: &[f64]) -> f64 {
    basis.evaluate(u).unwrap().iter().zip(coef).map(|(t, c)| t * c).sum()
}

fn c1_polynomial_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for k in 0..200 {
        let d = 1 + k % 3;
        let q = 1 + (k / 3 % 2) as u32;
        let basis = MultiIndexBasis::enumerate(d, q).unwrap();
        let coef: Vec<f64> = (0..basis.len()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let pts: Vec<(Vec<f64>, f64)> = (0..200)
            .map(|_| {
                let u: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let y = poly(&basis, &coef, &u);
                (u, y)
            })
            .collect();
        let eval: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
        let b = rng.random_range(1.0..2.0);
        let fit = fit_at(&pts, &eval, &LocPolyConfig::new(q, b, SmoothingMode::ContinuousX, 1)).unwrap();
        let truth = poly(&basis, &coef, &eval);
        worst = worst.max((fit.value() - truth).abs() / truth.abs().max(1.0));
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(worst <= 1e-8 && secs < 10.0, format!("max error {worst:.2e}, {secs:.2}s"))
}

/// Tuples in `{0..q}^d` with sum at most `q`, sorted by degree, then with
/// larger entries nearer the last position first.
fn brute_force(d: usize, q: u32) -> Vec<Vec<u32>> {
    let mut all = Vec::new();
    let total = (q as usize + 1).pow(d as u32);
    for code in 0..total {
        let t: Vec<u32> = (0..d).map(|k| (code / (q as usize + 1).pow(k as u32) % (q as usize + 1)) as u32).collect();
        if t.iter().sum::<u32>() <= q {
            all.push(t);
        }
    }
    all.sort_by(|a, b| a.iter().sum::<u32>().cmp(&b.iter().sum::<u32>()).then_with(|| b.iter().rev().cmp(a.iter().rev())));
    all
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

fn c2_multi_index_order() -> Outcome {
    let mut bad = Vec::new();
    for d in 1..=5 {
        for q in 0..=4u32 {
            let basis = MultiIndexBasis::enumerate(d, q).unwrap();
            let got: Vec<Vec<u32>> = basis.indices().iter().map(|p| p.entries().to_vec()).collect();
            if got != brute_force(d, q) || basis.len() != binomial(d + q as usize, q as usize) {
                bad.push(format!("d={d},q={q}"));
            }
        }
    }
    Outcome::new(bad.is_empty(), if bad.is_empty() { "30 (d, q) pairs match".into() } else { format!("mismatch at {}", bad.join(" ")) })
}

fn c3_moment_matrices() -> Outcome {
    let k = KernelSpec::triweight();
    let (mut drift, mut odd) = (0.0f64, 0.0f64);
    for (dx, dv, q) in [(1, 1, 1), (1, 1, 2), (1, 2, 2), (2, 1, 2), (1, 3, 1), (0, 2, 2)] {
        let a = compute_moment_matrices(&k, dx, dv, q, 16).unwrap();
        let b = compute_moment_matrices(&k, dx, dv, q, 32).unwrap();
        drift = drift.max((&a.s0 - &b.s0).amax()).max((&a.m - &b.m).amax());
        let basis = MultiIndexBasis::enumerate(dx + dv, q).unwrap();
        for i in 0..basis.len() {
            for j in 0..basis.len() {
                if i != j && basis.get(i).entries().iter().zip(basis.get(j).entries()).any(|(x, y)| (x + y) % 2 == 1) {
                    odd = odd.max(a.s0[(i, j)].abs());
                }
            }
        }
    }
    let mu2 = k.moment(2, 1, 32);
    let err = (mu2 - 1.0 / 9.0).abs();
    Outcome::new(
        drift <= 1e-6 && odd < 1e-9 && err <= 1e-9,
        format!("doubling drift {drift:.1e}, odd entries {odd:.1e}, |mu2 - 1/9| {err:.1e}"),
    )
}

const MATCHING: [(DgpName, EstimatorKind); 6] = [
    (DgpName::C, EstimatorKind::SemiparametricContinuous),
    (DgpName::P, EstimatorKind::SemiparametricContinuous),
    (DgpName::D, EstimatorKind::SemiparametricDiscrete),
    (DgpName::C, EstimatorKind::Parametric),
    (DgpName::D, EstimatorKind::Parametric),
    (DgpName::P, EstimatorKind::Parametric),
];
const SIZES: [usize; 3] = [500, 2000, 8000];

fn reps_at(n: usize) -> usize {
    // the n = 2000 cells are shared with the coverage criterion
    if n == 2000 {
        500
    } else {
        200
    }
}

fn c4_consistency(cells: &mut Cells) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, kind) in MATCHING {
        let mae: Vec<f64> = SIZES.iter().map(|&n| cells.get(name, kind, n, reps_at(n)).median_abs_error).collect();
        let ok = mae.windows(2).all(|w| w[1] < w[0]);
        pass &= ok;
        parts.push(format!("{} {}: {:.4}>{:.4}>{:.4}{}", name.label(), kind.label(), mae[0], mae[1], mae[2], if ok { "" } else { " NOT DECREASING" }));
    }
    for name in [DgpName::C, DgpName::D, DgpName::P] {
        let r = cells.get(name, EstimatorKind::Naive, 8000, 200);
        let se = (r.mc_variance / r.replications as f64).sqrt();
        let ok = r.bias.abs() > 5.0 * se;
        pass &= ok;
        parts.push(format!("naive {}: bias {:.3} = {:.0} SE", name.label(), r.bias, r.bias.abs() / se));
    }
    Outcome::new(pass, parts.join("; "))
}

fn c5_coverage(cells: &mut Cells) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, kind) in MATCHING {
        let (lo, hi) = if kind == EstimatorKind::SemiparametricContinuous { (0.88, 0.98) } else { (0.90, 0.98) };
        let c = cells.get(name, kind, 2000, 500).coverage.unwrap_or(f64::NAN);
        let ok = (lo..=hi).contains(&c);
        pass &= ok;
        parts.push(format!("{} {}: {:.3} in [{lo}, {hi}]{}", name.label(), kind.label(), c, if ok { "" } else { " OUT" }));
    }
    Outcome::new(pass, parts.join("; "))
}

fn c6_variance_accuracy(cells: &mut Cells) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, kind) in [
        (DgpName::C, EstimatorKind::SemiparametricContinuous),
        (DgpName::D, EstimatorKind::SemiparametricDiscrete),
        (DgpName::C, EstimatorKind::Parametric),
        (DgpName::D, EstimatorKind::Parametric),
    ] {
        let ratio = cells.get(name, kind, 4000, 500).variance_ratio.unwrap_or(f64::NAN);
        let ok = (0.7..=1.4).contains(&ratio);
        pass &= ok;
        parts.push(format!("{} {}: {:.3}{}", name.label(), kind.label(), ratio, if ok { "" } else { " OUT" }));
    }
    Outcome::new(pass, parts.join("; "))
}

fn c7_rates(cells: &mut Cells) -> Outcome {
    let mut rows = Vec::new();
    for (name, kind) in MATCHING {
        for n in SIZES {
            rows.push(cells.get(name, kind, n, reps_at(n)));
        }
    }
    let checks = rate_check(&rows).expect("rate check");
    let mut pass = checks.len() == MATCHING.len();
    let mut parts = Vec::new();
    for c in &checks {
        let dev = c.deviation.unwrap_or(f64::NAN);
        let ok = dev.abs() <= 0.1;
        pass &= ok;
        parts.push(format!("{} {}: {:.3} vs {:.3}{}", c.dgp, c.estimator.label(), c.slope, c.expected.unwrap_or(f64::NAN), if ok { "" } else { " OFF" }));
    }
    Outcome::new(pass, parts.join("; "))
}

/// Change in `σ̂²` from adding `g'φ̂ᵢ` to every `ψ̂ᵢ`.
fn correction(psi: &[f64], influence: &nalgebra::DMatrix<f64>, g: &[f64]) -> f64 {
    let n = psi.len();
    (0..n)
        .map(|i| {
            let gp: f64 = g.iter().enumerate().map(|(c, gc)| gc * influence[(i, c)]).sum();
            (psi[i] + gp).powi(2) - psi[i].powi(2)
        })
        .sum::<f64>()
        / n as f64
}

fn c8_first_stage_contribution() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let region = Region::population_box(DgpName::D, 0.05, 0.95);
    let opts = EstimatorOptions::with_trim(region.trimming_set());
    for seed in 0..5u64 {
        let data = DgpSpec::new(DgpName::D, 4000, seed).generate_seeded().unwrap();
        let fs = opts.first_stage(&data).unwrap();
        let cfg = opts.locpoly_config(&data, &fs).unwrap();
        let v = variance_discrete(1.0, &data, &fs, &opts.trim, &cfg).unwrap();
        let fd = partial_mean_beta_derivative(1.0, &data, &fs, &opts.trim, &cfg, 1e-4).unwrap();
        let analytic = v.sigma2 - v.sigma2_known_control;
        let reference = correction(&v.psi, &fs.influence, &fd);
        let rel = (analytic - reference).abs() / reference.abs();
        let ok = analytic.signum() == reference.signum() && rel <= 0.25;
        pass &= ok;
        parts.push(format!("seed {seed}: {analytic:.3} vs {reference:.3} ({:.0}%)", 100.0 * rel));
    }
    Outcome::new(pass, parts.join("; "))
}

fn c9_nonparametric(cells: &mut Cells) -> Outcome {
    let small = cells.get(DgpName::C, EstimatorKind::Nonparametric, 1000, 100).median_abs_error;
    let large = cells.get(DgpName::C, EstimatorKind::Nonparametric, 4000, 100).median_abs_error;
    let data = DgpSpec::new(DgpName::C, 4000, 9).generate_seeded().unwrap();
    let fs = fit_mle(&data, &ProxyModel::linear(1)).unwrap();
    let cdfs = parametric_cdfs(&data, &fs, DEFAULT_GRID_SIZE).unwrap();
    let radii = [0.2, 0.1, 0.05, 0.025, 0.0125];
    let table = small_ball_diagnostic(&cdfs, &radii).unwrap();
    let lx: Vec<f64> = table.iter().map(|r| r.radius.ln()).collect();
    let ly: Vec<f64> = table.iter().map(|r| r.probability.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / 5.0, ly.iter().sum::<f64>() / 5.0);
    let slope = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    Outcome::new(
        large < small && (slope - 1.0).abs() <= 0.3,
        format!("median |error| {small:.4} -> {large:.4}; small-ball slope {slope:.3}"),
    )
}

fn c10_determinism() -> Outcome {
    let cell = |name, kind, n, reps| McCell::new(DgpSpec::new(name, n, 0), kind, vec![name.default_x0(), 0.0], reps);
    let config = McConfig {
        master_seed: 77,
        cells: vec![
            cell(DgpName::D, EstimatorKind::SemiparametricDiscrete, 400, 6),
            cell(DgpName::C, EstimatorKind::SemiparametricContinuous, 400, 6),
            cell(DgpName::P, EstimatorKind::Parametric, 400, 6),
            cell(DgpName::C, EstimatorKind::Nonparametric, 300, 4),
        ],
        record_timing: false,
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        serde_json::to_string_pretty(&pool.install(|| run_monte_carlo(&config)).unwrap()).unwrap()
    };
    let (a, b, c) = (run(1), run(4), run(4));
    Outcome::new(a == b && b == c, format!("{} bytes, 1 vs 4 threads identical: {}", a.len(), a == b && b == c))
}

fn main() {
    let selected: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with('c') && a[1..].parse::<u32>().is_ok()).collect();
    let wants = |id: &str| selected.is_empty() || selected.iter().any(|s| s == id);
    let mut cells = Cells::default();
    let criteria: Vec<(&str, &str, Box<dyn FnOnce(&mut Cells) -> Outcome>)> = vec![
        ("c1", "local polynomial exactness", Box::new(|_| c1_polynomial_exactness())),
        ("c2", "multi-index order and count", Box::new(|_| c2_multi_index_order())),
        ("c3", "moment matrices", Box::new(|_| c3_moment_matrices())),
        ("c4", "consistency", Box::new(c4_consistency)),
        ("c5", "coverage", Box::new(c5_coverage)),
        ("c6", "variance accuracy", Box::new(c6_variance_accuracy)),
        ("c7", "rates", Box::new(c7_rates)),
        ("c8", "first-stage contribution", Box::new(|_| c8_first_stage_contribution())),
        ("c9", "nonparametric pipeline", Box::new(c9_nonparametric)),
        ("c10", "determinism", Box::new(|_| c10_determinism())),
    ];
    let mut failed = 0;
    for (id, title, run) in criteria {
        if !wants(id) {
            continue;
        }
        let start = Instant::now();
        let out = run(&mut cells);
        println!("{} {id} {title}: {} [{:.0}s]", if out.pass { "PASS" } else { "FAIL" }, out.detail, start.elapsed().as_secs_f64());
        failed += usize::from(!out.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
