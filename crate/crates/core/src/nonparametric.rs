//! Fully nonparametric ASF: the control is the whole conditional CDF
//! `F̂(· | Xᵢ, Zᵢ)` of the proxy, compared across observations in an `L²`
//! norm on a shared grid, with a Nadaraya-Watson second stage.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, XKind};
use crate::error::{AsfError, Result};
use crate::estimate::{AsfEstimate, Diagnostics};
use crate::first_stage::{conditional_cdf, FirstStageFit};
use crate::kernel::KernelSpec;
use crate::locpoly::SmoothingMode;
use crate::semiparametric::{MAX_FAILURE_SHARE, ROT_MULTIPLIER};
use crate::stats::{self, NeumaierSum};
use crate::trimming::TrimmingSet;

pub const DEFAULT_GRID_SIZE: usize = 101;
/// Grid padding beyond the observed proxy range, in standard deviations.
pub const GRID_PADDING_SD: f64 = 0.5;

/// Per-observation CDFs evaluated on one shared, strictly increasing grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfOnGrid {
    pub grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

/// One observation's CDF together with its grid.
#[derive(Debug, Clone, Copy)]
pub struct CdfRow<'a> {
    pub grid: &'a [f64],
    pub values: &'a [f64],
}

impl CdfOnGrid {
    /// Checks the grid and applies [`monotone_clamp`] to every row.
    pub fn new(grid: Vec<f64>, mut values: Vec<Vec<f64>>) -> Result<Self> {
        if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(AsfError::InvalidArgument("CDF grid must be strictly increasing with at least two points".into()));
        }
        for row in &mut values {
            if row.len() != grid.len() {
                return Err(AsfError::GridMismatch);
            }
            monotone_clamp(row);
        }
        Ok(Self { grid, values })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> CdfRow<'_> {
        CdfRow { grid: &self.grid, values: &self.values[i] }
    }

    pub fn norm(&self) -> FunctionalNorm {
        FunctionalNorm::from_grid(&self.grid)
    }

    /// Rows multiplied by the square roots of the quadrature weights, so the
    /// functional distance is the Euclidean distance between scaled rows.
    fn scaled_rows(&self) -> Vec<Vec<f64>> {
        let root: Vec<f64> = self.norm().weights.iter().map(|w| w.sqrt()).collect();
        self.values.iter().map(|r| r.iter().zip(&root).map(|(a, s)| a * s).collect()).collect()
    }
}

/// Running maximum followed by clipping to `[0, 1]`.
pub fn monotone_clamp(values: &mut [f64]) {
    let mut running = f64::NEG_INFINITY;
    for v in values.iter_mut() {
        running = running.max(*v);
        *v = running.clamp(0.0, 1.0);
    }
}

/// `size` equally spaced points on `[min w − 0.5 sd, max w + 0.5 sd]`.
pub fn w_grid(w: &[f64], size: usize) -> Result<Vec<f64>> {
    if size < 2 || w.is_empty() {
        return Err(AsfError::InvalidArgument("grid needs at least two points and one observation".into()));
    }
    let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = GRID_PADDING_SD * if w.len() > 1 { stats::sample_sd(w) } else { 0.0 };
    let (a, b) = if hi - lo + 2.0 * pad > 0.0 { (lo - pad, hi + pad) } else { (lo - 0.5, hi + 0.5) };
    let step = (b - a) / (size - 1) as f64;
    Ok((0..size).map(|k| if k + 1 == size { b } else { a + step * k as f64 }).collect())
}

/// Trapezoid weights for `∫ f(w)² dw` over the grid range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalNorm {
    pub weights: Vec<f64>,
}

impl FunctionalNorm {
    pub fn from_grid(grid: &[f64]) -> Self {
        let g = grid.len();
        let weights = (0..g)
            .map(|k| {
                let left = if k > 0 { grid[k] - grid[k - 1] } else { 0.0 };
                let right = if k + 1 < g { grid[k + 1] - grid[k] } else { 0.0 };
                0.5 * (left + right)
            })
            .collect();
        Self { weights }
    }

    pub fn norm(&self, a: &[f64]) -> Result<f64> {
        if a.len() != self.weights.len() {
            return Err(AsfError::GridMismatch);
        }
        Ok(stats::compensated_sum(a.iter().zip(&self.weights).map(|(x, w)| w * x * x)).sqrt())
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != self.weights.len() || b.len() != self.weights.len() {
            return Err(AsfError::GridMismatch);
        }
        Ok(stats::compensated_sum(a.iter().zip(b).zip(&self.weights).map(|((x, y), w)| w * (x - y) * (x - y))).sqrt())
    }
}

/// `‖a − b‖` in `L²` of Lebesgue measure on the grid range.
pub fn functional_norm_distance(a: CdfRow<'_>, b: CdfRow<'_>) -> Result<f64> {
    if a.grid != b.grid {
        return Err(AsfError::GridMismatch);
    }
    FunctionalNorm::from_grid(a.grid).distance(a.values, b.values)
}

/// Conditioning columns for the CDF smoother: continuous columns divided by
/// their standard deviation, plus the raw discrete `X` matched exactly.
struct Conditioning {
    continuous: Vec<Vec<f64>>,
    discrete_x: Option<Vec<f64>>,
}

impl Conditioning {
    fn new(data: &Dataset) -> Self {
        let standardise = |c: &[f64]| {
            let sd = stats::sample_sd(c);
            let s = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
            c.iter().map(|v| v / s).collect::<Vec<f64>>()
        };
        let mut continuous: Vec<Vec<f64>> = data.z.iter().map(|c| standardise(c)).collect();
        let discrete_x = match data.x_kind {
            XKind::Continuous => {
                continuous.insert(0, standardise(&data.x));
                None
            }
            XKind::Discrete => Some(data.x.clone()),
        };
        Self { continuous, discrete_x }
    }

    fn weight(&self, kernel: &KernelSpec, h: f64, i: usize, j: usize) -> f64 {
        if let Some(x) = &self.discrete_x {
            if x[i] != x[j] {
                return 0.0;
            }
        }
        let mut w = 1.0;
        for c in &self.continuous {
            w *= kernel.eval((c[j] - c[i]) / h);
            if w == 0.0 {
                break;
            }
        }
        w
    }
}

/// `c·n^{-1/(4+d)}` in standardised units, with `d` the number of continuous
/// conditioning columns and `c` the rule-of-thumb constant for `kernel`.
pub fn first_stage_bandwidth(data: &Dataset, kernel: &KernelSpec) -> f64 {
    let d = data.dim_z() + usize::from(data.x_kind == XKind::Continuous);
    ROT_MULTIPLIER * kernel.gaussian_equivalence_factor() * (data.n() as f64).powf(-1.0 / (4.0 + d as f64))
}

/// `F̂(w | xᵢ, zᵢ) = Σⱼ 1{Wⱼ ≤ w} Kᵢⱼ / Σⱼ Kᵢⱼ` on a shared grid, with product
/// kernel weights in the standardised continuous conditioning columns.
pub fn estimate_conditional_cdf(data: &Dataset, bandwidth_fs: f64, w_grid_size: usize) -> Result<CdfOnGrid> {
    estimate_conditional_cdf_with(data, 0, bandwidth_fs, w_grid_size, &KernelSpec::default())
}

pub fn estimate_conditional_cdf_with(data: &Dataset, proxy: usize, bandwidth_fs: f64, w_grid_size: usize, kernel: &KernelSpec) -> Result<CdfOnGrid> {
    if !(bandwidth_fs > 0.0 && bandwidth_fs.is_finite()) {
        return Err(AsfError::InvalidArgument(format!("first-stage bandwidth must be positive, got {bandwidth_fs}")));
    }
    let w = data.proxy(proxy)?;
    let grid = w_grid(w, w_grid_size)?;
    let n = data.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| w[a].total_cmp(&w[b]).then(a.cmp(&b)));
    let cond = Conditioning::new(data);

    let rows: Vec<Option<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut total = NeumaierSum::default();
            let mut out = Vec::with_capacity(grid.len());
            let mut pos = 0;
            for &g in &grid {
                while pos < n && w[order[pos]] <= g {
                    total.add(cond.weight(kernel, bandwidth_fs, i, order[pos]));
                    pos += 1;
                }
                out.push(total.value());
            }
            while pos < n {
                total.add(cond.weight(kernel, bandwidth_fs, i, order[pos]));
                pos += 1;
            }
            let den = total.value();
            (den > 0.0).then(|| out.into_iter().map(|v| v / den).collect())
        })
        .collect();
    let zero: Vec<usize> = rows.iter().enumerate().filter(|(_, r)| r.is_none()).map(|(i, _)| i).collect();
    if !zero.is_empty() {
        return Err(AsfError::ZeroDenominator(zero));
    }
    CdfOnGrid::new(grid, rows.into_iter().flatten().collect())
}

/// `F(w | Xᵢ, Zᵢ)` implied by a fitted location-scale first stage, on the
/// same kind of grid as [`estimate_conditional_cdf`].
pub fn parametric_cdfs(data: &Dataset, fs: &FirstStageFit, w_grid_size: usize) -> Result<CdfOnGrid> {
    let grid = w_grid(data.proxy(fs.model.proxy_column)?, w_grid_size)?;
    let values = (0..data.n())
        .map(|i| {
            let z = data.z_row(i);
            grid.iter().map(|&g| conditional_cdf(g, data.x[i], &z, fs)).collect()
        })
        .collect();
    CdfOnGrid::new(grid, values)
}

/// Second-stage smoothing parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NwConfig {
    pub bandwidth: f64,
    pub mode: SmoothingMode,
    #[serde(default)]
    pub kernel: KernelSpec,
}

/// Observations with a positive `X` weight at `x0`, and that weight.
fn x_neighbours(x0: f64, data: &Dataset, cfg: &NwConfig) -> Vec<(usize, f64)> {
    (0..data.n())
        .filter_map(|j| {
            let k = match cfg.mode {
                SmoothingMode::ContinuousX => cfg.kernel.eval((data.x[j] - x0) / cfg.bandwidth),
                SmoothingMode::DiscreteX => f64::from(u8::from(data.x[j] == x0)),
            };
            (k > 0.0).then_some((j, k))
        })
        .collect()
}

/// Weighted mean of `Y` over `neighbours` with the functional kernel at
/// `target` (scaled row); `None` if every weight vanishes.
fn nw_at(target: &[f64], scaled: &[Vec<f64>], y: &[f64], neighbours: &[(usize, f64)], cfg: &NwConfig) -> Option<(f64, usize)> {
    let b2 = cfg.bandwidth * cfg.bandwidth;
    let mut num = NeumaierSum::default();
    let mut den = NeumaierSum::default();
    let mut used = 0;
    for &(j, kx) in neighbours {
        let mut d2 = 0.0;
        for (a, b) in target.iter().zip(&scaled[j]) {
            d2 += (a - b) * (a - b);
            if d2 >= b2 {
                break;
            }
        }
        let kv = cfg.kernel.eval(d2.sqrt() / cfg.bandwidth);
        if kv > 0.0 {
            let w = kx * kv;
            num.add(w * y[j]);
            den.add(w);
            used += 1;
        }
    }
    (den.value() > 0.0).then(|| (num.value() / den.value(), used))
}

fn check_bandwidth(cfg: &NwConfig) -> Result<()> {
    if !(cfg.bandwidth > 0.0 && cfg.bandwidth.is_finite()) {
        return Err(AsfError::InvalidArgument(format!("bandwidth must be positive, got {}", cfg.bandwidth)));
    }
    Ok(())
}

/// `Σ Yᵢ K((Xᵢ−x0)/b) K(‖V̂ᵢ−v‖/b) / Σ K K`; in discrete mode the `X` kernel
/// is the indicator `1{Xᵢ = x0}`.
pub fn nw_functional(x0: f64, v: &[f64], data: &Dataset, cdfs: &CdfOnGrid, cfg: &NwConfig) -> Result<f64> {
    check_bandwidth(cfg)?;
    if cdfs.n() != data.n() {
        return Err(AsfError::DimensionMismatch { expected: data.n(), got: cdfs.n() });
    }
    if v.len() != cdfs.grid.len() {
        return Err(AsfError::GridMismatch);
    }
    let root: Vec<f64> = cdfs.norm().weights.iter().map(|w| w.sqrt()).collect();
    let target: Vec<f64> = v.iter().zip(&root).map(|(a, s)| a * s).collect();
    let scaled = cdfs.scaled_rows();
    let neighbours = x_neighbours(x0, data, cfg);
    nw_at(&target, &scaled, &data.y, &neighbours, cfg).map(|r| r.0).ok_or(AsfError::EmptyNeighborhood)
}

/// Settings of the nonparametric pipeline; absent bandwidths take their
/// rule-of-thumb defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonparametricConfig {
    #[serde(default)]
    pub bandwidth: Option<f64>,
    #[serde(default)]
    pub bandwidth_fs: Option<f64>,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default)]
    pub kernel: KernelSpec,
}

fn default_grid_size() -> usize {
    DEFAULT_GRID_SIZE
}

impl Default for NonparametricConfig {
    fn default() -> Self {
        Self { bandwidth: None, bandwidth_fs: None, grid_size: DEFAULT_GRID_SIZE, kernel: KernelSpec::default() }
    }
}

/// `c·s·n^{-1/(4+d)}` with `s` pooling the standard deviation of `X`
/// (continuous mode only) and the root mean squared distance of the CDFs to
/// their average, and `d` counting `X` plus one effective control dimension.
pub fn second_stage_bandwidth(data: &Dataset, cdfs: &CdfOnGrid, mode: SmoothingMode, kernel: &KernelSpec) -> f64 {
    let n = cdfs.n();
    let g = cdfs.grid.len();
    let avg: Vec<f64> = (0..g).map(|k| stats::compensated_sum(cdfs.values.iter().map(|r| r[k])) / n as f64).collect();
    let norm = cdfs.norm();
    let spread = (stats::compensated_sum(cdfs.values.iter().map(|r| norm.distance(r, &avg).unwrap_or(0.0).powi(2))) / n as f64).sqrt();
    let (scales, d) = match mode {
        SmoothingMode::ContinuousX => (vec![stats::sample_sd(&data.x), spread], 2.0),
        SmoothingMode::DiscreteX => (vec![spread], 1.0),
    };
    let pooled = (scales.iter().map(|s| s * s).sum::<f64>() / scales.len() as f64).sqrt();
    ROT_MULTIPLIER * kernel.gaussian_equivalence_factor() * pooled * (n as f64).powf(-1.0 / (4.0 + d))
}

fn mode_for(data: &Dataset) -> SmoothingMode {
    match data.x_kind {
        XKind::Continuous => SmoothingMode::ContinuousX,
        XKind::Discrete => SmoothingMode::DiscreteX,
    }
}

/// Point estimate `(1/|T|) Σ_{i∈T} m̂(x0, V̂ᵢ)`; no variance is attached.
/// Observations whose neighbourhood is empty are dropped, up to the same
/// failure share as the semiparametric estimator.
pub fn asf_nonparametric(x0: f64, data: &Dataset, trim: &TrimmingSet, cfg: &NonparametricConfig) -> Result<AsfEstimate> {
    let b_fs = cfg.bandwidth_fs.unwrap_or_else(|| first_stage_bandwidth(data, &cfg.kernel));
    let cdfs = estimate_conditional_cdf_with(data, 0, b_fs, cfg.grid_size, &cfg.kernel)?;
    asf_nonparametric_with_cdfs(x0, data, &cdfs, trim, cfg)
}

/// [`asf_nonparametric`] with precomputed first-stage CDFs.
pub fn asf_nonparametric_with_cdfs(x0: f64, data: &Dataset, cdfs: &CdfOnGrid, trim: &TrimmingSet, cfg: &NonparametricConfig) -> Result<AsfEstimate> {
    if cdfs.n() != data.n() {
        return Err(AsfError::DimensionMismatch { expected: data.n(), got: cdfs.n() });
    }
    let mode = mode_for(data);
    if mode == SmoothingMode::DiscreteX && !data.x.contains(&x0) {
        return Err(AsfError::NoObservationsAtLevel(x0));
    }
    let bandwidth = cfg.bandwidth.unwrap_or_else(|| second_stage_bandwidth(data, cdfs, mode, &cfg.kernel));
    let nw = NwConfig { bandwidth, mode, kernel: cfg.kernel };
    check_bandwidth(&nw)?;
    let t = trim.indicators(data)?;
    let evals: Vec<usize> = (0..data.n()).filter(|&i| t[i]).collect();
    let scaled = cdfs.scaled_rows();
    let neighbours = x_neighbours(x0, data, &nw);
    let fits: Vec<Option<(f64, usize)>> = evals.par_iter().map(|&i| nw_at(&scaled[i], &scaled, &data.y, &neighbours, &nw)).collect();
    let failed: Vec<usize> = evals.iter().zip(&fits).filter(|(_, f)| f.is_none()).map(|(&i, _)| i).collect();
    if failed.len() == evals.len() {
        return Err(AsfError::EmptyNeighborhood);
    }
    if failed.len() as f64 > MAX_FAILURE_SHARE * evals.len() as f64 {
        return Err(AsfError::LocalFitFailures { failed: failed.len(), total: evals.len(), indices: failed });
    }
    let used = evals.len() - failed.len();
    let mu = stats::compensated_sum(fits.iter().flatten().map(|f| f.0)) / used as f64;
    let mean_eff = fits.iter().flatten().map(|f| f.1 as f64).sum::<f64>() / used as f64;
    let n = data.n();
    let diagnostics = Diagnostics {
        n,
        n_trimmed: evals.len(),
        trim_share: evals.len() as f64 / n as f64,
        bandwidth: Some(bandwidth),
        failed_fits: failed.len(),
        mean_effective_n: Some(mean_eff),
        ..Diagnostics::default()
    };
    Ok(AsfEstimate::point_only(x0, mu, diagnostics))
}

/// One row of the small-ball table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallBallRow {
    pub radius: f64,
    pub probability: f64,
    /// `Δ log p / Δ log r` against the previous (larger) radius.
    pub slope: Option<f64>,
}

/// Average over `i` of the share of `j ≠ i` with `‖V̂ᵢ − V̂ⱼ‖ ≤ r`, for each
/// radius, and the local log-log slope between consecutive radii, which
/// estimates the effective dimension of the control.
pub fn small_ball_diagnostic(cdfs: &CdfOnGrid, radii: &[f64]) -> Result<Vec<SmallBallRow>> {
    if radii.len() < 2 {
        return Err(AsfError::InvalidArgument("need at least two radii".into()));
    }
    if radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) || radii.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(AsfError::InvalidArgument("radii must be positive and strictly decreasing".into()));
    }
    let n = cdfs.n();
    if n < 2 {
        return Err(AsfError::InvalidArgument("need at least two observations".into()));
    }
    let scaled = cdfs.scaled_rows();
    let r2: Vec<f64> = radii.iter().map(|r| r * r).collect();
    let counts: Vec<Vec<u64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut c = vec![0u64; radii.len()];
            for j in i + 1..n {
                let d2: f64 = scaled[i].iter().zip(&scaled[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                for (k, r) in r2.iter().enumerate() {
                    if d2 <= *r {
                        c[k] += 1;
                    } else {
                        break;
                    }
                }
            }
            c
        })
        .collect();
    let pairs = (n * (n - 1) / 2) as f64;
    let probs: Vec<f64> = (0..radii.len()).map(|k| counts.iter().map(|c| c[k]).sum::<u64>() as f64 / pairs).collect();
    Ok((0..radii.len())
        .map(|k| {
            let slope = (k > 0 && probs[k] > 0.0 && probs[k - 1] > 0.0)
                .then(|| (probs[k] / probs[k - 1]).ln() / (radii[k] / radii[k - 1]).ln());
            SmallBallRow { radius: radii[k], probability: probs[k], slope }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(size: usize) -> Vec<f64> {
        (0..size).map(|k| k as f64 / (size - 1) as f64).collect()
    }

    #[test]
    fn unit_difference_has_unit_norm() {
        let g = unit_grid(11);
        let a = vec![0.0; 11];
        let b = vec![1.0; 11];
        let d = functional_norm_distance(CdfRow { grid: &g, values: &a }, CdfRow { grid: &g, values: &b }).unwrap();
        assert!((d - 1.0).abs() < 1e-14);
        assert_eq!(functional_norm_distance(CdfRow { grid: &g, values: &a }, CdfRow { grid: &g, values: &a }).unwrap(), 0.0);
    }

    #[test]
    fn shifted_steps_match_closed_form() {
        let g = unit_grid(10001);
        let step = |c: f64| g.iter().map(|&w| f64::from(u8::from(w >= c))).collect::<Vec<f64>>();
        for delta in [0.1, 0.25, 0.5] {
            let (a, b) = (step(0.2), step(0.2 + delta));
            let d = functional_norm_distance(CdfRow { grid: &g, values: &a }, CdfRow { grid: &g, values: &b }).unwrap();
            assert!((d - delta.sqrt()).abs() < 1e-3, "delta {delta}: {d}");
        }
    }

    #[test]
    fn grid_mismatch() {
        let g1 = unit_grid(5);
        let g2 = unit_grid(6);
        let a = vec![0.0; 5];
        let b = vec![0.0; 6];
        assert_eq!(
            functional_norm_distance(CdfRow { grid: &g1, values: &a }, CdfRow { grid: &g2, values: &b }),
            Err(AsfError::GridMismatch)
        );
    }

    #[test]
    fn clamp_is_monotone_and_bounded() {
        let mut v = vec![-0.1, 0.3, 0.2, 0.9, 1.2, 1.0];
        monotone_clamp(&mut v);
        assert_eq!(v, vec![0.0, 0.3, 0.3, 0.9, 1.0, 1.0]);
    }

    fn tiny(x: Vec<f64>, z: Vec<f64>, w: Vec<f64>, y: Vec<f64>) -> Dataset {
        Dataset::new(y, x, vec![z], vec![w], XKind::Continuous).unwrap()
    }

    #[test]
    fn single_conditioning_value_gives_empirical_cdf() {
        let w = vec![0.3, -1.0, 2.0, 0.3, 1.1];
        let d = tiny(vec![1.0; 5], vec![2.0; 5], w.clone(), vec![0.0; 5]);
        let c = estimate_conditional_cdf(&d, 0.5, 21).unwrap();
        for row in &c.values {
            for (g, v) in c.grid.iter().zip(row) {
                let ecdf = w.iter().filter(|&&wi| wi <= *g).count() as f64 / 5.0;
                assert!((v - ecdf).abs() < 1e-15);
            }
        }
        assert_eq!(c.values[0][0], 0.0);
        assert_eq!(*c.values[0].last().unwrap(), 1.0);
    }

    #[test]
    fn constant_outcome_and_identical_controls() {
        let n = 30;
        let x: Vec<f64> = (0..n).map(|i| i as f64 / 10.0).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        let d = tiny(x.clone(), vec![0.0; n], vec![1.0; n], y.clone());
        let grid = unit_grid(11);
        let cdfs = CdfOnGrid::new(grid.clone(), vec![vec![0.5; 11]; n]).unwrap();
        let cfg = NwConfig { bandwidth: 0.4, mode: SmoothingMode::ContinuousX, kernel: KernelSpec::default() };
        let got = nw_functional(1.3, &vec![0.5; 11], &d, &cdfs, &cfg).unwrap();
        let k0 = cfg.kernel.eval(0.0);
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            let k = cfg.kernel.eval((x[i] - 1.3) / 0.4) * k0;
            num += k * y[i];
            den += k;
        }
        assert!((got - num / den).abs() < 1e-12);
        let dc = d.with_outcome(vec![2.5; n]).unwrap();
        assert!((nw_functional(1.3, &vec![0.5; 11], &dc, &cdfs, &cfg).unwrap() - 2.5).abs() < 1e-14);
        let far = NwConfig { bandwidth: 0.01, ..cfg };
        assert_eq!(nw_functional(10.0, &vec![0.5; 11], &d, &cdfs, &far), Err(AsfError::EmptyNeighborhood));
    }

    #[test]
    fn constant_controls_have_zero_dimension() {
        let cdfs = CdfOnGrid::new(unit_grid(11), vec![vec![0.3; 11]; 20]).unwrap();
        let t = small_ball_diagnostic(&cdfs, &[0.5, 0.25, 0.1]).unwrap();
        for r in &t {
            assert_eq!(r.probability, 1.0);
        }
        assert_eq!(t[1].slope, Some(0.0));
        assert!(small_ball_diagnostic(&cdfs, &[0.5]).is_err());
        assert!(small_ball_diagnostic(&cdfs, &[0.1, 0.5]).is_err());
    }
}
