//! Monte Carlo driver: replicated estimation on the reference designs with
//! bias, RMSE, coverage and variance-accuracy summaries.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::DgpSpec;
use super::replication_rng;
use super::truth::{true_asf, Region};
use crate::error::{AsfError, Result};
use crate::estimate::AsfEstimate;
use crate::pipeline::{self, EstimatorKind, EstimatorOptions};
use crate::stats::{self, NeumaierSum};

/// A run fails when more than this share of replications errors.
pub const MAX_REPLICATION_FAILURE_SHARE: f64 = 0.02;
/// Absolute slack, relative to `max(1, |truth|)`, when checking whether an
/// interval covers the truth; keeps degenerate intervals from failing on
/// rounding.
pub const COVERAGE_SLACK: f64 = 1e-12;

fn default_population_box() -> Option<[f64; 2]> {
    Some([0.05, 0.95])
}

/// One design × estimator × sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCell {
    pub dgp: DgpSpec,
    pub estimator: EstimatorKind,
    pub x0: Vec<f64>,
    pub replications: usize,
    /// Trimming on population quantiles of the continuous `(X, Z)`
    /// coordinates; the same region defines the target `μ(x0)`. `None`
    /// targets the unconditional ASF.
    #[serde(default = "default_population_box")]
    pub population_box: Option<[f64; 2]>,
    /// Estimator tuning; its trimming rule is replaced by the population box.
    #[serde(default)]
    pub options: EstimatorOptions,
}

impl McCell {
    pub fn new(dgp: DgpSpec, estimator: EstimatorKind, x0: Vec<f64>, replications: usize) -> Self {
        Self { dgp, estimator, x0, replications, population_box: default_population_box(), options: EstimatorOptions::default() }
    }

    pub fn region(&self) -> Region {
        match self.population_box {
            Some([lo, hi]) => Region::population_box(self.dgp.name, lo, hi),
            None => Region::full(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(AsfError::InvalidArgument(format!("need at least 2 replications, got {}", self.replications)));
        }
        if self.x0.is_empty() {
            return Err(AsfError::InvalidArgument("no evaluation points".into()));
        }
        if let Some([lo, hi]) = self.population_box {
            if !(0.0 < lo && lo < hi && hi < 1.0) {
                return Err(AsfError::InvalidArgument(format!("population box quantiles must satisfy 0 < lo < hi < 1, got [{lo}, {hi}]")));
            }
        }
        self.dgp.validate()
    }

    fn options(&self) -> EstimatorOptions {
        EstimatorOptions { trim: self.region().trimming_set(), ..self.options.clone() }
    }

    /// Exponent the RMSE should follow in `n` under the default tuning.
    fn rate_exponent(&self) -> Option<f64> {
        if self.options.bandwidth.is_some() {
            return None;
        }
        let dim_v = self.options.proxy_model.as_ref().map_or(1, |m| m.dim_v());
        self.estimator.rate_exponent(dim_v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub master_seed: u64,
    pub cells: Vec<McCell>,
    /// Attach per-cell wall times to the report. Off by default so reports
    /// stay byte-identical across runs.
    #[serde(default)]
    pub record_timing: bool,
}

/// Summary for one cell at one evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCellResult {
    pub cell: usize,
    pub dgp: String,
    pub n: usize,
    pub estimator: EstimatorKind,
    pub x0: f64,
    pub truth: f64,
    pub replications: usize,
    pub failures: usize,
    pub mean_estimate: f64,
    pub bias: f64,
    pub rmse: f64,
    pub median_abs_error: f64,
    /// Monte Carlo variance of `μ̂`.
    pub mc_variance: f64,
    /// Share of nominal-95% intervals containing the truth.
    pub coverage: Option<f64>,
    pub mean_sigma2: Option<f64>,
    pub mean_rate_denominator: Option<f64>,
    /// Mean of `σ̂²/D` over the Monte Carlo variance of `μ̂`.
    pub variance_ratio: Option<f64>,
    /// Exponent `r` in `RMSE ∝ n^r` implied by the default tuning.
    pub rate_exponent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub cell: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub master_seed: u64,
    pub results: Vec<McCellResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Vec<CellTiming>>,
}

/// Every replication's estimates for one cell, in replication order.
#[derive(Debug, Clone, PartialEq)]
pub struct CellDraws {
    pub truth: Vec<f64>,
    /// `Ok` holds one estimate per evaluation point.
    pub replications: Vec<std::result::Result<Vec<AsfEstimate>, AsfError>>,
}

impl CellDraws {
    pub fn successes(&self) -> impl Iterator<Item = &Vec<AsfEstimate>> {
        self.replications.iter().filter_map(|r| r.as_ref().ok())
    }

    pub fn failures(&self) -> usize {
        self.replications.iter().filter(|r| r.is_err()).count()
    }
}

/// Runs every replication of `cell`. Replication `r` draws from the stream
/// `(cell_index, r)` of `master_seed`, so results do not depend on thread
/// count or scheduling.
pub fn simulate_cell(cell: &McCell, master_seed: u64, cell_index: u32) -> Result<CellDraws> {
    cell.validate()?;
    let region = cell.region();
    let truth: Vec<f64> = cell.x0.iter().map(|&x0| true_asf(&cell.dgp, x0, &region)).collect();
    let opts = cell.options();
    let replications: Vec<std::result::Result<Vec<AsfEstimate>, AsfError>> = (0..cell.replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = replication_rng(master_seed, cell_index, r as u32);
            let data = cell.dgp.generate(&mut rng)?;
            pipeline::estimate(cell.estimator, &data, &cell.x0, &opts)
        })
        .collect();
    let draws = CellDraws { truth, replications };
    let failed = draws.failures();
    if failed as f64 > MAX_REPLICATION_FAILURE_SHARE * cell.replications as f64 {
        let first = draws.replications.iter().find_map(|r| r.as_ref().err()).map(ToString::to_string).unwrap_or_default();
        return Err(AsfError::ReplicationFailures { failed, total: cell.replications, first });
    }
    Ok(draws)
}

fn covers(est: &AsfEstimate, truth: f64) -> Option<bool> {
    let ci = est.ci?;
    let slack = COVERAGE_SLACK * truth.abs().max(1.0);
    Some(ci.lo - slack <= truth && truth <= ci.hi + slack)
}

/// Aggregates the draws of one cell, one row per evaluation point.
pub fn summarize_cell(cell: &McCell, cell_index: usize, draws: &CellDraws) -> Vec<McCellResult> {
    let ok: Vec<&Vec<AsfEstimate>> = draws.successes().collect();
    let r = ok.len();
    cell.x0
        .iter()
        .enumerate()
        .map(|(k, &x0)| {
            let truth = draws.truth[k];
            let est: Vec<&AsfEstimate> = ok.iter().map(|v| &v[k]).collect();
            let mu: Vec<f64> = est.iter().map(|e| e.mu_hat).collect();
            let errors: Vec<f64> = mu.iter().map(|m| m - truth).collect();
            let mean_estimate = stats::mean(&mu);
            let bias = stats::mean(&errors);
            let rmse = (stats::compensated_sum(errors.iter().map(|e| e * e)) / r as f64).sqrt();
            let abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
            let mc_variance = if r > 1 { stats::sample_variance(&mu) } else { 0.0 };
            let all_have_variance = est.iter().all(|e| e.sigma2_hat.is_some() && e.rate_denominator.is_some());
            let (coverage, mean_sigma2, mean_rate_denominator, variance_ratio) = if all_have_variance && r > 0 {
                let covered = est.iter().filter(|e| covers(e, truth) == Some(true)).count();
                let s2: Vec<f64> = est.iter().map(|e| e.sigma2_hat.unwrap_or(f64::NAN)).collect();
                let den: Vec<f64> = est.iter().map(|e| e.rate_denominator.unwrap_or(f64::NAN)).collect();
                let mut implied = NeumaierSum::default();
                for (s, d) in s2.iter().zip(&den) {
                    implied.add(s / d);
                }
                let implied = implied.value() / r as f64;
                let ratio = (mc_variance > 0.0).then(|| implied / mc_variance);
                (Some(covered as f64 / r as f64), Some(stats::mean(&s2)), Some(stats::mean(&den)), ratio)
            } else {
                (None, None, None, None)
            };
            McCellResult {
                cell: cell_index,
                dgp: cell.dgp.name.label().to_string(),
                n: cell.dgp.n,
                estimator: cell.estimator,
                x0,
                truth,
                replications: r,
                failures: draws.failures(),
                mean_estimate,
                bias,
                rmse,
                median_abs_error: stats::median(&abs),
                mc_variance,
                coverage,
                mean_sigma2,
                mean_rate_denominator,
                variance_ratio,
                rate_exponent: cell.rate_exponent(),
            }
        })
        .collect()
}

pub fn run_monte_carlo(config: &McConfig) -> Result<McReport> {
    if config.cells.is_empty() {
        return Err(AsfError::InvalidArgument("no Monte Carlo cells".into()));
    }
    let mut results = Vec::new();
    let mut timing = Vec::new();
    for (c, cell) in config.cells.iter().enumerate() {
        let start = Instant::now();
        let draws = simulate_cell(cell, config.master_seed, c as u32)?;
        results.extend(summarize_cell(cell, c, &draws));
        timing.push(CellTiming { cell: c, wall_seconds: start.elapsed().as_secs_f64() });
    }
    Ok(McReport { master_seed: config.master_seed, results, timing: config.record_timing.then_some(timing) })
}

/// Log-log fit of RMSE on `n` for one design, estimator and evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCheck {
    pub dgp: String,
    pub estimator: EstimatorKind,
    pub x0: f64,
    pub sample_sizes: Vec<usize>,
    pub slope: f64,
    pub expected: Option<f64>,
    pub deviation: Option<f64>,
}

/// Least-squares slope of `log RMSE` on `log n` for every group of results
/// sharing design, estimator and `x0` with at least three sample sizes.
pub fn rate_check(results: &[McCellResult]) -> Result<Vec<RateCheck>> {
    let mut groups: Vec<(String, EstimatorKind, f64, Vec<&McCellResult>)> = Vec::new();
    for r in results {
        match groups.iter_mut().find(|g| g.0 == r.dgp && g.1 == r.estimator && g.2 == r.x0) {
            Some(g) => g.3.push(r),
            None => groups.push((r.dgp.clone(), r.estimator, r.x0, vec![r])),
        }
    }
    let mut out = Vec::new();
    for (dgp, estimator, x0, mut rows) in groups {
        rows.sort_by_key(|r| r.n);
        let mut sizes: Vec<usize> = rows.iter().map(|r| r.n).collect();
        sizes.dedup();
        if sizes.len() < 3 || sizes.len() != rows.len() || rows.iter().any(|r| !(r.rmse > 0.0)) {
            continue;
        }
        let lx: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
        let ly: Vec<f64> = rows.iter().map(|r| r.rmse.ln()).collect();
        let slope = ols_slope(&lx, &ly);
        let expected = rows[0].rate_exponent;
        out.push(RateCheck { dgp, estimator, x0, sample_sizes: sizes, slope, expected, deviation: expected.map(|e| slope - e) });
    }
    if out.is_empty() {
        return Err(AsfError::InvalidArgument("rate check needs at least three distinct sample sizes per group".into()));
    }
    Ok(out)
}

fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let mx = stats::mean(x);
    let my = stats::mean(y);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
