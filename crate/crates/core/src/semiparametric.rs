//! Partial-means ASF estimators on generated controls, for continuous and
//! discrete `X`, with their plug-in variances.
//!
//! The second stage is a local polynomial fit of `Y` on `(X, V̂)` (or on
//! `V̂` among observations with `X = x0`), evaluated at `(x0, V̂ᵢ)` for every
//! trimmed observation; the third stage averages those fits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, XKind};
use crate::error::{AsfError, Result};
use crate::estimate::{AsfEstimate, Diagnostics, Rate};
use crate::first_stage::{Controls, FirstStageFit};
use crate::kernel::{ell_kappa_with_gradient, KernelSpec, MultiIndexBasis};
use crate::locpoly::{LocPolyConfig, LocPolyFit, LocalSystem, SmoothingMode};
use crate::stats::{self, NeumaierSum};
use crate::trimming::TrimmingSet;

/// Largest share of failed local fits that may be dropped silently.
pub const MAX_FAILURE_SHARE: f64 = 0.05;
/// Support coverage below this triggers a warning.
pub const SUPPORT_WARNING: f64 = 0.95;
/// Rule-of-thumb multiplier on the pooled standard deviation.
pub const ROT_MULTIPLIER: f64 = 1.06;

/// Admissible open interval for `γ` in `b = c·n^{-γ}`.
pub fn bandwidth_window(dim_x: usize, dim_v: usize, q: u32, mode: SmoothingMode) -> Result<(f64, f64)> {
    let dx = dim_x as f64;
    let dv = dim_v as f64;
    let q1 = f64::from(q) + 1.0;
    let (lo, hi, what) = match mode {
        SmoothingMode::ContinuousX => {
            let lo = 1.0 / (dx + 2.0 * q1);
            let hi = (1.0 / (dx + 2.0 * dv)).min(1.0 / (3.0 * dx));
            (lo, hi, "n b^(dx+2(q+1)) -> 0 against n b^(dx+2dv) -> inf and n b^(3dx) -> inf")
        }
        SmoothingMode::DiscreteX => {
            let lo = 1.0 / (2.0 * q1);
            let hi = 0.25_f64.min(1.0 / (2.0 * dv.max(1.5)));
            (lo, hi, "n b^(2(q+1)) -> 0 against n b^4 -> inf")
        }
    };
    if lo < hi {
        Ok((lo, hi))
    } else {
        Err(AsfError::InfeasibleWindow(format!(
            "{what}: need gamma > {lo:.4} and gamma < {hi:.4} (dx={dim_x}, dv={dim_v}, q={q})"
        )))
    }
}

/// Midpoint of [`bandwidth_window`].
pub fn bandwidth_exponent(dim_x: usize, dim_v: usize, q: u32, mode: SmoothingMode) -> Result<f64> {
    let (lo, hi) = bandwidth_window(dim_x, dim_v, q, mode)?;
    Ok(0.5 * (lo + hi))
}

/// `1.06 × pooled sd × kernel factor`. The factor converts a
/// Gaussian-kernel bandwidth to the equivalent one for `kernel`.
pub fn rule_of_thumb_constant(columns: &[Vec<f64>], kernel: &KernelSpec) -> f64 {
    let vars: Vec<f64> = columns.iter().map(|c| stats::sample_variance(c)).collect();
    let pooled = stats::mean(&vars).sqrt();
    ROT_MULTIPLIER * pooled * kernel.gaussian_equivalence_factor()
}

/// `c · n^{-γ}` with `γ` at the midpoint of the admissible window.
pub fn default_bandwidth(n: usize, dim_x: usize, dim_v: usize, q: u32, mode: SmoothingMode, constant: f64) -> Result<f64> {
    if n < 2 {
        return Err(AsfError::InvalidArgument("bandwidth needs n >= 2".into()));
    }
    if !(constant > 0.0) {
        return Err(AsfError::InvalidArgument("bandwidth constant must be positive".into()));
    }
    let gamma = bandwidth_exponent(dim_x, dim_v, q, mode)?;
    Ok(constant * (n as f64).powf(-gamma))
}

/// Default bandwidth for a sample: the constant is built from the smoothed
/// coordinates, `(x, v̂)` for continuous `X` and `v̂` for discrete `X`.
pub fn bandwidth_for(data: &Dataset, controls: &Controls, q: u32, mode: SmoothingMode, kernel: &KernelSpec) -> Result<f64> {
    let mut cols: Vec<Vec<f64>> = (0..controls.dim).map(|k| controls.column(k)).collect();
    if mode == SmoothingMode::ContinuousX {
        cols.push(data.x.clone());
    }
    let c = rule_of_thumb_constant(&cols, kernel);
    default_bandwidth(data.n(), 1, controls.dim, q, mode, c)
}

/// Default second-stage configuration for a sample.
pub fn default_config(data: &Dataset, fs: &FirstStageFit, kernel: KernelSpec) -> Result<LocPolyConfig> {
    let (mode, q) = match data.x_kind {
        XKind::Continuous => (SmoothingMode::ContinuousX, 1),
        XKind::Discrete => (SmoothingMode::DiscreteX, 2),
    };
    let b = bandwidth_for(data, &fs.control_values, q, mode, &kernel)?;
    let mut cfg = LocPolyConfig::new(q, b, mode, 1);
    cfg.kernel = kernel;
    Ok(cfg)
}

/// Observation ids sorted by the first control coordinate.
struct SortedIndex {
    keys: Vec<f64>,
    ids: Vec<usize>,
}

impl SortedIndex {
    fn new(ids: impl Iterator<Item = usize>, v: &Controls) -> Self {
        let mut ids: Vec<usize> = ids.collect();
        ids.sort_by(|&a, &b| v.row(a)[0].total_cmp(&v.row(b)[0]).then(a.cmp(&b)));
        let keys = ids.iter().map(|&i| v.row(i)[0]).collect();
        Self { keys, ids }
    }

    fn window(&self, lo: f64, hi: f64) -> &[usize] {
        let a = self.keys.partition_point(|k| *k < lo);
        let b = self.keys.partition_point(|k| *k <= hi);
        &self.ids[a..b]
    }

    fn range(&self) -> Option<(f64, f64)> {
        Some((*self.keys.first()?, *self.keys.last()?))
    }
}

fn is_local_failure(e: &AsfError) -> bool {
    matches!(e, AsfError::InsufficientLocalData { .. } | AsfError::SingularDesign { .. })
}

/// Everything the second and third stages share.
struct Problem<'a> {
    y: &'a [f64],
    x: &'a [f64],
    v: &'a Controls,
    t: &'a [bool],
    cfg: &'a LocPolyConfig,
    basis: MultiIndexBasis,
    radius: f64,
}

impl<'a> Problem<'a> {
    fn new(data: &'a Dataset, v: &'a Controls, t: &'a [bool], cfg: &'a LocPolyConfig) -> Result<Self> {
        cfg.validate()?;
        if v.n() != data.n() || t.len() != data.n() {
            return Err(AsfError::DimensionMismatch { expected: data.n(), got: v.n().min(t.len()) });
        }
        if cfg.dim_x != 1 {
            return Err(AsfError::InvalidArgument("x is scalar: dim_x must be 1".into()));
        }
        let smoothed = match cfg.mode {
            SmoothingMode::ContinuousX => 1 + v.dim,
            SmoothingMode::DiscreteX => v.dim,
        };
        Ok(Self {
            y: &data.y,
            x: &data.x,
            v,
            t,
            cfg,
            basis: MultiIndexBasis::enumerate(smoothed, cfg.degree)?,
            radius: cfg.kernel.support_radius() * cfg.bandwidth,
        })
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    fn smoothed_dims(&self) -> usize {
        self.basis.dim()
    }

    /// Local fit at `(xe, ve)` over the candidates in `index`. In discrete
    /// mode the candidates must already satisfy `X = x0`.
    fn fit(&self, index: &SortedIndex, xe: f64, ve: &[f64]) -> Result<LocPolyFit> {
        let r = self.radius;
        let mut system = LocalSystem::new(&self.basis, self.cfg.kernel, self.cfg.bandwidth);
        let mut offset = vec![0.0; self.smoothed_dims()];
        let continuous = self.cfg.mode == SmoothingMode::ContinuousX;
        for &j in index.window(ve[0] - r, ve[0] + r) {
            let vj = self.v.row(j);
            if continuous {
                let dxj = self.x[j] - xe;
                if dxj.abs() > r {
                    continue;
                }
                offset[0] = dxj;
                for k in 0..vj.len() {
                    offset[1 + k] = vj[k] - ve[k];
                }
            } else {
                for k in 0..vj.len() {
                    offset[k] = vj[k] - ve[k];
                }
            }
            system.add(&offset, self.y[j]);
        }
        system.solve(self.n(), self.cfg.degree, self.cfg.ridge_epsilon, self.cfg.v_offset())
    }

    fn gradient_v(&self, fit: &LocPolyFit) -> Result<Vec<f64>> {
        fit.gradient_v(&self.basis)
    }

    /// `ℓ'κ(u)` with `ℓ = e1'S⁻¹` and `κ(u) = t(u) ΠK(u_k)`.
    fn smoother_weight(&self, ell: &[f64], u: &[f64], buf: &mut [f64]) -> f64 {
        let w = self.cfg.kernel.product(u);
        if w == 0.0 {
            return 0.0;
        }
        self.basis.evaluate_into(u, buf);
        w * ell.iter().zip(buf.iter()).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Fits at `(x0, V̂ᵢ)` for the trimmed observations after the failure policy.
struct PartialMean {
    fits: Vec<Option<LocPolyFit>>,
    used: Vec<bool>,
    n_used: usize,
    failed: Vec<usize>,
    mu_hat: f64,
}

fn partial_mean(p: &Problem<'_>, index: &SortedIndex, x0: f64) -> Result<PartialMean> {
    let n = p.n();
    let evals: Vec<usize> = (0..n).filter(|&i| p.t[i]).collect();
    if evals.is_empty() {
        return Err(AsfError::EmptyTrim);
    }
    let results: Vec<Result<LocPolyFit>> = evals.par_iter().map(|&i| p.fit(index, x0, p.v.row(i))).collect();
    let mut fits: Vec<Option<LocPolyFit>> = vec![None; n];
    let mut failed = Vec::new();
    for (&i, r) in evals.iter().zip(results) {
        match r {
            Ok(f) => fits[i] = Some(f),
            Err(e) if is_local_failure(&e) => failed.push(i),
            Err(e) => return Err(e),
        }
    }
    if failed.len() == evals.len() || failed.len() as f64 > MAX_FAILURE_SHARE * evals.len() as f64 {
        return Err(AsfError::LocalFitFailures { failed: failed.len(), total: evals.len(), indices: failed });
    }
    let used: Vec<bool> = fits.iter().map(Option::is_some).collect();
    let n_used = evals.len() - failed.len();
    let mu_hat = stats::compensated_sum(fits.iter().flatten().map(LocPolyFit::value)) / n_used as f64;
    Ok(PartialMean { fits, used, n_used, failed, mu_hat })
}

fn diagnostics(p: &Problem<'_>, pm: &PartialMean, near_range: Option<(f64, f64)>) -> Diagnostics {
    let n = p.n();
    let n_trimmed = p.t.iter().filter(|&&t| t).count();
    let eff: Vec<f64> = pm.fits.iter().flatten().map(|f| f.effective_n as f64).collect();
    let coverage = near_range.map(|(lo, hi)| {
        let inside = (0..n).filter(|&i| p.t[i]).filter(|&i| (lo..=hi).contains(&p.v.row(i)[0])).count();
        inside as f64 / n_trimmed as f64
    });
    let mut warnings = Vec::new();
    if let Some(c) = coverage {
        if c < SUPPORT_WARNING {
            warnings.push(format!(
                "only {:.1}% of trimmed controls lie in the control range observed near x0; common support is doubtful",
                100.0 * c
            ));
        }
    }
    if !pm.failed.is_empty() {
        warnings.push(format!("{} local fits failed and were dropped from the partial mean", pm.failed.len()));
    }
    Diagnostics {
        n,
        n_trimmed,
        trim_share: n_trimmed as f64 / n as f64,
        bandwidth: Some(p.cfg.bandwidth),
        degree: Some(p.cfg.degree),
        failed_fits: pm.failed.len(),
        mean_effective_n: Some(stats::mean(&eff)),
        support_coverage: coverage,
        warnings,
    }
}

fn check_mode(cfg: &LocPolyConfig, want: SmoothingMode) -> Result<()> {
    if cfg.mode != want {
        return Err(AsfError::InvalidArgument(format!("estimator needs smoothing mode {want:?}, got {:?}", cfg.mode)));
    }
    Ok(())
}

// ---------------------------------------------------------------- continuous

struct ContinuousRun<'a> {
    p: Problem<'a>,
    pm: PartialMean,
    all: SortedIndex,
    x0: f64,
}

impl<'a> ContinuousRun<'a> {
    fn new(x0: f64, data: &'a Dataset, v: &'a Controls, t: &'a [bool], cfg: &'a LocPolyConfig) -> Result<Self> {
        check_mode(cfg, SmoothingMode::ContinuousX)?;
        let p = Problem::new(data, v, t, cfg)?;
        let all = SortedIndex::new(0..data.n(), v);
        let pm = partial_mean(&p, &all, x0)?;
        Ok(Self { p, pm, all, x0 })
    }

    fn near_range(&self) -> Option<(f64, f64)> {
        let r = self.p.radius;
        SortedIndex::new((0..self.p.n()).filter(|&j| (self.p.x[j] - self.x0).abs() <= r), self.p.v).range()
    }

    /// `b^{dx} · (1/n) Σᵢ (cᵢ ε̂ᵢ / τ̂)²`.
    fn variance(&self) -> Result<(f64, usize)> {
        let p = &self.p;
        let n = p.n();
        let b = p.cfg.bandwidth;
        let r = p.radius;
        let d = p.smoothed_dims() as i32;
        let norm = 1.0 / (n as f64 * b.powi(d));
        let tau = self.pm.n_used as f64 / n as f64;
        let used = SortedIndex::new((0..n).filter(|&j| self.pm.used[j]), p.v);
        let near: Vec<usize> = (0..n).filter(|&i| (p.x[i] - self.x0).abs() <= r).collect();
        let terms: Vec<Result<Option<f64>>> = near
            .par_iter()
            .map(|&i| {
                let vi = p.v.row(i);
                let mut u = vec![0.0; p.smoothed_dims()];
                let mut buf = vec![0.0; p.basis.len()];
                u[0] = (p.x[i] - self.x0) / b;
                let mut c = NeumaierSum::default();
                for &j in used.window(vi[0] - r, vi[0] + r) {
                    let vj = p.v.row(j);
                    for k in 0..vi.len() {
                        u[1 + k] = (vi[k] - vj[k]) / b;
                    }
                    let ell = &self.pm.fits[j].as_ref().expect("used fit").e1_s_inv;
                    c.add(p.smoother_weight(ell, &u, &mut buf));
                }
                let c = c.value() * norm;
                if c == 0.0 {
                    return Ok(Some(0.0));
                }
                match p.fit(&self.all, p.x[i], vi) {
                    Ok(f) => Ok(Some((c * (p.y[i] - f.value()) / tau).powi(2))),
                    Err(e) if is_local_failure(&e) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect();
        let mut acc = NeumaierSum::default();
        let mut failed = Vec::new();
        for (&i, t) in near.iter().zip(terms) {
            match t? {
                Some(v) => acc.add(v),
                None => failed.push(i),
            }
        }
        if failed.len() as f64 > MAX_FAILURE_SHARE * near.len().max(1) as f64 {
            return Err(AsfError::LocalFitFailures { failed: failed.len(), total: near.len(), indices: failed });
        }
        // scalar x: the b^{dx} factor is b
        Ok((b * acc.value() / n as f64, failed.len()))
    }
}

/// Partial mean at `x0` for continuous `X` with arbitrary controls.
pub fn partial_mean_continuous(x0: f64, data: &Dataset, controls: &Controls, t: &[bool], config: &LocPolyConfig) -> Result<f64> {
    Ok(ContinuousRun::new(x0, data, controls, t, config)?.pm.mu_hat)
}

/// ASF at `x0` for continuous `X`, with the plug-in variance on the
/// `√(n b^{dx})` scale.
pub fn estimate_asf_continuous(x0: f64, data: &Dataset, fs: &FirstStageFit, trim: &TrimmingSet, config: &LocPolyConfig) -> Result<AsfEstimate> {
    if data.x_kind != XKind::Continuous {
        return Err(AsfError::InvalidArgument("continuous estimator needs continuous x".into()));
    }
    let t = trim.indicators(data)?;
    let run = ContinuousRun::new(x0, data, &fs.control_values, &t, config)?;
    let (sigma2, residual_failures) = run.variance()?;
    let mut diag = diagnostics(&run.p, &run.pm, run.near_range());
    if residual_failures > 0 {
        diag.warnings.push(format!("{residual_failures} residual fits failed; their variance terms were dropped"));
    }
    let denom = Rate::SqrtNBdx.denominator(data.n(), config.bandwidth, 1);
    AsfEstimate::with_variance(x0, run.pm.mu_hat, sigma2, Rate::SqrtNBdx, denom, diag)
}

/// Plug-in variance of the continuous estimator (`√(n b^{dx})` scale).
pub fn variance_continuous(x0: f64, data: &Dataset, fs: &FirstStageFit, trim: &TrimmingSet, config: &LocPolyConfig) -> Result<f64> {
    let t = trim.indicators(data)?;
    Ok(ContinuousRun::new(x0, data, &fs.control_values, &t, config)?.variance()?.0)
}

// ------------------------------------------------------------------ discrete

/// Components of the discrete-`X` variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteVariance {
    /// `(1/n) Σ (ψ̂ᵢ + Γ̂ φ̂ᵢ)²`.
    pub sigma2: f64,
    /// `(1/n) Σ ψ̂ᵢ²`, the variance ignoring first-stage estimation.
    pub sigma2_known_control: f64,
    pub psi: Vec<f64>,
    /// `Γ̂`, one entry per first-stage parameter.
    pub gamma: Vec<f64>,
    /// The three summands of `Γ̂` (already divided by `τ̂`).
    pub gamma_terms: [Vec<f64>; 3],
    /// Observations at `x0` whose residual fit failed.
    pub residual_failures: usize,
}

struct DiscreteRun<'a> {
    p: Problem<'a>,
    pm: PartialMean,
    level: SortedIndex,
    at_level: Vec<bool>,
    x0: f64,
}

impl<'a> DiscreteRun<'a> {
    fn new(x0: f64, data: &'a Dataset, v: &'a Controls, t: &'a [bool], cfg: &'a LocPolyConfig) -> Result<Self> {
        check_mode(cfg, SmoothingMode::DiscreteX)?;
        let p = Problem::new(data, v, t, cfg)?;
        let at_level: Vec<bool> = data.x.iter().map(|&x| x == x0).collect();
        if !at_level.iter().any(|&d| d) {
            return Err(AsfError::NoObservationsAtLevel(x0));
        }
        let level = SortedIndex::new((0..data.n()).filter(|&j| at_level[j]), v);
        let pm = partial_mean(&p, &level, x0)?;
        Ok(Self { p, pm, level, at_level, x0 })
    }

    fn variance(&self, fs: &FirstStageFit) -> Result<DiscreteVariance> {
        let p = &self.p;
        let n = p.n();
        let nf = n as f64;
        let b = p.cfg.bandwidth;
        let r = p.radius;
        let dv = p.v.dim;
        let k = fs.influence.ncols();
        if fs.influence.nrows() != n || fs.theta_jacobian.len() != n {
            return Err(AsfError::DimensionMismatch { expected: n, got: fs.influence.nrows() });
        }
        let tau = self.pm.n_used as f64 / nf;
        let used = SortedIndex::new((0..n).filter(|&j| self.pm.used[j]), p.v);

        // residuals and slopes at every observation with X = x0
        let level_ids: Vec<usize> = (0..n).filter(|&j| self.at_level[j]).collect();
        let level_fits: Vec<Result<Option<(f64, Vec<f64>)>>> = level_ids
            .par_iter()
            .map(|&j| {
                let fit = match &self.pm.fits[j] {
                    Some(f) => f.clone(),
                    None => match p.fit(&self.level, self.x0, p.v.row(j)) {
                        Ok(f) => f,
                        Err(e) if is_local_failure(&e) => return Ok(None),
                        Err(e) => return Err(e),
                    },
                };
                Ok(Some((p.y[j] - fit.value(), p.gradient_v(&fit)?)))
            })
            .collect();
        let mut eps = vec![0.0; n];
        let mut slope = vec![vec![0.0; dv]; n];
        let mut residual_failures = 0;
        for (&j, r) in level_ids.iter().zip(level_fits) {
            match r? {
                Some((e, g)) => {
                    eps[j] = e;
                    slope[j] = g;
                }
                None => residual_failures += 1,
            }
        }
        let mut have_slope = vec![false; n];
        for &j in &level_ids {
            have_slope[j] = true;
        }
        for i in 0..n {
            if let (Some(f), false) = (&self.pm.fits[i], have_slope[i]) {
                slope[i] = p.gradient_v(f)?;
            }
        }

        // ψ̂ᵢ
        let norm_v = 1.0 / (nf * b.powi(dv as i32));
        let corrections: Vec<f64> = level_ids
            .par_iter()
            .map(|&i| {
                let vi = p.v.row(i);
                let mut u = vec![0.0; dv];
                let mut buf = vec![0.0; p.basis.len()];
                let mut c = NeumaierSum::default();
                for &j in used.window(vi[0] - r, vi[0] + r) {
                    let vj = p.v.row(j);
                    for m in 0..dv {
                        u[m] = (vi[m] - vj[m]) / b;
                    }
                    let ell = &self.pm.fits[j].as_ref().expect("used fit").e1_s_inv;
                    c.add(p.smoother_weight(ell, &u, &mut buf));
                }
                c.value() * norm_v * eps[i] / tau
            })
            .collect();
        let mut psi: Vec<f64> = (0..n)
            .map(|i| match &self.pm.fits[i] {
                Some(f) => f.value() / tau - self.pm.mu_hat,
                None => -self.pm.mu_hat,
            })
            .collect();
        for (&i, c) in level_ids.iter().zip(corrections) {
            psi[i] += c;
        }

        // Γ̂: double sums over (i trimmed, j at level)
        let used_ids: Vec<usize> = (0..n).filter(|&i| self.pm.used[i]).collect();
        let pair_sums: Vec<(Vec<f64>, Vec<f64>)> = used_ids
            .par_iter()
            .map(|&i| {
                let vi = p.v.row(i);
                let ell = &self.pm.fits[i].as_ref().expect("used fit").e1_s_inv;
                let mut u = vec![0.0; dv];
                let mut buf = vec![0.0; p.basis.len()];
                let mut a = vec![0.0; dv];
                let mut g1 = vec![NeumaierSum::default(); k];
                let mut g2 = vec![NeumaierSum::default(); k];
                for &j in self.level.window(vi[0] - r, vi[0] + r) {
                    let vj = p.v.row(j);
                    for m in 0..dv {
                        u[m] = (vj[m] - vi[m]) / b;
                    }
                    if p.cfg.kernel.product(&u) == 0.0 {
                        continue;
                    }
                    let jac = &fs.theta_jacobian[j];
                    let w = ell_kappa_with_gradient(&p.basis, &p.cfg.kernel, ell, &u, &mut buf, &mut a);
                    for c in 0..k {
                        let mut t1 = 0.0;
                        let mut t2 = 0.0;
                        for m in 0..dv {
                            t1 += a[m] * jac[(m, c)];
                            t2 += slope[j][m] * jac[(m, c)];
                        }
                        g1[c].add(t1 * eps[j]);
                        g2[c].add(w * t2);
                    }
                }
                (g1.iter().map(NeumaierSum::value).collect(), g2.iter().map(NeumaierSum::value).collect())
            })
            .collect();
        let mut term1 = vec![NeumaierSum::default(); k];
        let mut term2 = vec![NeumaierSum::default(); k];
        let mut term3 = vec![NeumaierSum::default(); k];
        for ((g1, g2), &i) in pair_sums.iter().zip(&used_ids) {
            let jac = &fs.theta_jacobian[i];
            for c in 0..k {
                term1[c].add(g1[c]);
                term2[c].add(g2[c]);
                let mut t3 = 0.0;
                for m in 0..dv {
                    t3 += slope[i][m] * jac[(m, c)];
                }
                term3[c].add(t3);
            }
        }
        let s1 = 1.0 / (nf * nf * b.powi(dv as i32 + 1) * tau);
        let s2 = -1.0 / (nf * nf * b.powi(dv as i32) * tau);
        let s3 = 1.0 / (nf * tau);
        let gamma_terms = [
            term1.iter().map(|s| s.value() * s1).collect::<Vec<_>>(),
            term2.iter().map(|s| s.value() * s2).collect::<Vec<_>>(),
            term3.iter().map(|s| s.value() * s3).collect::<Vec<_>>(),
        ];
        let gamma: Vec<f64> = (0..k).map(|c| gamma_terms[0][c] + gamma_terms[1][c] + gamma_terms[2][c]).collect();

        let mut full = NeumaierSum::default();
        let mut known = NeumaierSum::default();
        for i in 0..n {
            let gphi: f64 = (0..k).map(|c| gamma[c] * fs.influence[(i, c)]).sum();
            full.add((psi[i] + gphi).powi(2));
            known.add(psi[i].powi(2));
        }
        Ok(DiscreteVariance {
            sigma2: full.value() / nf,
            sigma2_known_control: known.value() / nf,
            psi,
            gamma,
            gamma_terms,
            residual_failures,
        })
    }
}

/// Partial mean at the level `x0` with arbitrary controls.
pub fn partial_mean_discrete(x0: f64, data: &Dataset, controls: &Controls, t: &[bool], config: &LocPolyConfig) -> Result<f64> {
    Ok(DiscreteRun::new(x0, data, controls, t, config)?.pm.mu_hat)
}

/// ASF at the discrete level `x0`, with the `√n` plug-in variance that
/// accounts for first-stage estimation.
pub fn estimate_asf_discrete(x0: f64, data: &Dataset, fs: &FirstStageFit, trim: &TrimmingSet, config: &LocPolyConfig) -> Result<AsfEstimate> {
    if data.x_kind != XKind::Discrete {
        return Err(AsfError::InvalidArgument("discrete estimator needs discrete x".into()));
    }
    let t = trim.indicators(data)?;
    let run = DiscreteRun::new(x0, data, &fs.control_values, &t, config)?;
    let var = run.variance(fs)?;
    let mut diag = diagnostics(&run.p, &run.pm, run.level.range());
    if var.residual_failures > 0 {
        diag.warnings.push(format!("{} residual fits at x0 failed; their terms were dropped", var.residual_failures));
    }
    AsfEstimate::with_variance(x0, run.pm.mu_hat, var.sigma2, Rate::SqrtN, data.n() as f64, diag)
}

/// Variance components of the discrete estimator.
pub fn variance_discrete(x0: f64, data: &Dataset, fs: &FirstStageFit, trim: &TrimmingSet, config: &LocPolyConfig) -> Result<DiscreteVariance> {
    let t = trim.indicators(data)?;
    DiscreteRun::new(x0, data, &fs.control_values, &t, config)?.variance(fs)
}

/// `∂μ̂/∂β'` by central differences with the data, trimming and bandwidth
/// held fixed; the controls are recomputed at each perturbed `β`.
pub fn partial_mean_beta_derivative(x0: f64, data: &Dataset, fs: &FirstStageFit, trim: &TrimmingSet, config: &LocPolyConfig, step: f64) -> Result<Vec<f64>> {
    let t = trim.indicators(data)?;
    let eval = |beta: &[f64]| -> Result<f64> {
        let moved = fs.with_beta(beta, data);
        match config.mode {
            SmoothingMode::ContinuousX => partial_mean_continuous(x0, data, &moved.control_values, &t, config),
            SmoothingMode::DiscreteX => partial_mean_discrete(x0, data, &moved.control_values, &t, config),
        }
    };
    (0..fs.beta_hat.len())
        .map(|c| {
            let mut up = fs.beta_hat.clone();
            let mut dn = fs.beta_hat.clone();
            let h = step * fs.beta_hat[c].abs().max(1.0);
            up[c] += h;
            dn[c] -= h;
            Ok((eval(&up)? - eval(&dn)?) / (2.0 * h))
        })
        .collect()
}
