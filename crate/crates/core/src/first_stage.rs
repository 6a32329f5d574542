//! Parametric proxy model `W | X, Z ~ N(location, scale²)` fitted by
//! maximum likelihood, with generated controls and influence values.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{AsfError, Result};
use crate::linalg;
use crate::stats;
use crate::terms::{Term, Var};

/// Lower bound on the proxy standard deviation.
pub const SCALE_FLOOR: f64 = 1e-8;
const MAX_ITERATIONS: usize = 500;
const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProxyFamily {
    #[default]
    GaussianLocationScale,
}

/// Matrix whose inverse maps scores to influence values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InformationKind {
    /// Average observed information (negative Hessian).
    #[default]
    Hessian,
    /// Average outer product of scores.
    OuterProduct,
}

fn default_log_scale() -> Vec<Term> {
    vec![Term::constant()]
}

/// Location is linear in `location` terms; log-scale is linear in
/// `log_scale` terms unless `fixed_scale` pins the standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyModel {
    #[serde(default)]
    pub family: ProxyFamily,
    pub location: Vec<Term>,
    #[serde(default = "default_log_scale")]
    pub log_scale: Vec<Term>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_scale: Option<f64>,
    #[serde(default)]
    pub information: InformationKind,
    /// Which `w` column is the proxy.
    #[serde(default)]
    pub proxy_column: usize,
}

impl ProxyModel {
    /// Location `1 + x + z1 + … + zK`, constant scale.
    pub fn linear(dim_z: usize) -> Self {
        let mut location = vec![Term::constant(), Term::power(Var::X, 1)];
        location.extend((0..dim_z).map(|k| Term::power(Var::Z(k), 1)));
        Self {
            family: ProxyFamily::GaussianLocationScale,
            location,
            log_scale: default_log_scale(),
            fixed_scale: None,
            information: InformationKind::Hessian,
            proxy_column: 0,
        }
    }

    pub fn dim_location(&self) -> usize {
        self.location.len()
    }

    /// Number of free log-scale parameters.
    pub fn dim_scale(&self) -> usize {
        if self.fixed_scale.is_some() {
            0
        } else {
            self.log_scale.len()
        }
    }

    pub fn dim_beta(&self) -> usize {
        self.dim_location() + self.dim_scale()
    }

    /// The control is the location index, plus the log-scale index when the
    /// scale varies with `(x, z)`.
    pub fn dim_v(&self) -> usize {
        1 + usize::from(self.scale_varies())
    }

    fn scale_varies(&self) -> bool {
        self.fixed_scale.is_none() && self.log_scale.iter().any(|t| !t.is_constant())
    }

    pub fn validate(&self, dim_z: usize) -> Result<()> {
        for t in self.location.iter().chain(&self.log_scale) {
            t.check_dims(dim_z, 0)?;
            if t.uses_v() {
                return Err(AsfError::InvalidArgument(format!("proxy model term '{t}' cannot depend on v")));
            }
        }
        if !self.location.iter().any(Term::is_constant) {
            return Err(AsfError::InvalidArgument("location index needs an intercept".into()));
        }
        if self.fixed_scale.is_none() && !self.log_scale.iter().any(Term::is_constant) {
            return Err(AsfError::InvalidArgument("log-scale index needs an intercept".into()));
        }
        if let Some(s) = self.fixed_scale {
            if !(s > 0.0) {
                return Err(AsfError::InvalidArgument("fixed scale must be positive".into()));
            }
        }
        Ok(())
    }

    fn location_row(&self, x: f64, z: &[f64]) -> Vec<f64> {
        self.location.iter().map(|t| t.eval(x, z, &[])).collect()
    }

    fn scale_row(&self, x: f64, z: &[f64]) -> Vec<f64> {
        self.log_scale.iter().map(|t| t.eval(x, z, &[])).collect()
    }

    /// `(location, log-scale index, standard deviation)` at `(x, z)`.
    pub fn location_scale(&self, beta: &[f64], x: f64, z: &[f64]) -> (f64, f64, f64) {
        let k1 = self.dim_location();
        let mu: f64 = self.location_row(x, z).iter().zip(&beta[..k1]).map(|(p, b)| p * b).sum();
        match self.fixed_scale {
            Some(s) => (mu, s.ln(), s),
            None => {
                let eta: f64 = self.scale_row(x, z).iter().zip(&beta[k1..]).map(|(p, b)| p * b).sum();
                (mu, eta, eta.exp().max(SCALE_FLOOR))
            }
        }
    }

    /// `θ(x, z, β)`.
    pub fn theta(&self, beta: &[f64], x: f64, z: &[f64]) -> Vec<f64> {
        let (mu, eta, _) = self.location_scale(beta, x, z);
        if self.scale_varies() {
            vec![mu, eta]
        } else {
            vec![mu]
        }
    }

    /// `∂θ/∂β'` at `(x, z)`, a `d_v × dim(β)` matrix. The index is linear in
    /// `β`, so this does not depend on `β`.
    pub fn theta_jacobian(&self, x: f64, z: &[f64]) -> DMatrix<f64> {
        let k1 = self.dim_location();
        let mut j = DMatrix::zeros(self.dim_v(), self.dim_beta());
        for (c, p) in self.location_row(x, z).into_iter().enumerate() {
            j[(0, c)] = p;
        }
        if self.scale_varies() {
            for (c, s) in self.scale_row(x, z).into_iter().enumerate() {
                j[(1, k1 + c)] = s;
            }
        }
        j
    }
}

/// Generated control values stored row-major, `dim` entries per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Controls {
    pub dim: usize,
    pub values: Vec<f64>,
}

impl Controls {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(1, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(AsfError::InvalidArgument("ragged control rows".into()));
        }
        Ok(Self { dim, values: rows.concat() })
    }

    pub fn scalar(values: Vec<f64>) -> Self {
        Self { dim: 1, values }
    }

    pub fn n(&self) -> usize {
        self.values.len() / self.dim.max(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Values of coordinate `k` across observations.
    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.n()).map(|i| self.values[i * self.dim + k]).collect()
    }
}

/// Fitted proxy model.
#[derive(Debug, Clone)]
pub struct FirstStageFit {
    pub model: ProxyModel,
    pub beta_hat: Vec<f64>,
    pub loglik: f64,
    pub control_values: Controls,
    /// `n × dim(β)`, row `i` is `φ̂ᵢ`.
    pub influence: DMatrix<f64>,
    /// Per-observation `∂θ/∂β'`.
    pub theta_jacobian: Vec<DMatrix<f64>>,
    pub iterations: usize,
    /// Largest absolute entry of the summed score at `β̂`.
    pub gradient_norm: f64,
    /// The scale floor is active (noiseless proxy).
    pub at_scale_floor: bool,
}

impl FirstStageFit {
    pub fn n(&self) -> usize {
        self.control_values.n()
    }

    pub fn dim_v(&self) -> usize {
        self.control_values.dim
    }

    pub fn phi(&self, i: usize) -> Vec<f64> {
        self.influence.row(i).iter().copied().collect()
    }

    /// A fit with `β` held at a known value and zero influence, used for
    /// known-control reference runs.
    pub fn fixed(model: &ProxyModel, beta: &[f64], data: &Dataset) -> Result<Self> {
        model.validate(data.dim_z())?;
        if beta.len() != model.dim_beta() {
            return Err(AsfError::DimensionMismatch { expected: model.dim_beta(), got: beta.len() });
        }
        let loglik = Design::new(data, model)?.loglik(beta);
        Ok(Self {
            model: model.clone(),
            beta_hat: beta.to_vec(),
            loglik,
            control_values: control_values(beta, data, model),
            influence: DMatrix::zeros(data.n(), beta.len()),
            theta_jacobian: jacobians(model, data),
            iterations: 0,
            gradient_norm: f64::NAN,
            at_scale_floor: false,
        })
    }

    /// Copy of this fit with the controls recomputed at another `β`.
    pub fn with_beta(&self, beta: &[f64], data: &Dataset) -> Self {
        Self {
            beta_hat: beta.to_vec(),
            control_values: control_values(beta, data, &self.model),
            ..self.clone()
        }
    }
}

/// `V̂ᵢ = θ(Xᵢ, Zᵢ, β)` for every observation.
pub fn control_values(beta: &[f64], data: &Dataset, model: &ProxyModel) -> Controls {
    let dim = model.dim_v();
    let mut values = Vec::with_capacity(data.n() * dim);
    let mut z = vec![0.0; data.dim_z()];
    for i in 0..data.n() {
        fill_z(data, i, &mut z);
        values.extend(model.theta(beta, data.x[i], &z));
    }
    Controls { dim, values }
}

/// `P(W ≤ w | x, z)` under the fitted model.
pub fn conditional_cdf(w: f64, x: f64, z: &[f64], fit: &FirstStageFit) -> f64 {
    let (mu, _, sigma) = fit.model.location_scale(&fit.beta_hat, x, z);
    stats::normal_cdf((w - mu) / sigma)
}

fn fill_z(data: &Dataset, i: usize, z: &mut [f64]) {
    for (k, col) in data.z.iter().enumerate() {
        z[k] = col[i];
    }
}

fn jacobians(model: &ProxyModel, data: &Dataset) -> Vec<DMatrix<f64>> {
    let mut z = vec![0.0; data.dim_z()];
    (0..data.n())
        .map(|i| {
            fill_z(data, i, &mut z);
            model.theta_jacobian(data.x[i], &z)
        })
        .collect()
}

/// Sample log-likelihood at `beta`.
pub fn log_likelihood(beta: &[f64], data: &Dataset, model: &ProxyModel) -> Result<f64> {
    Ok(Design::new(data, model)?.loglik(beta))
}

/// Per-observation design rows and proxy values, built once per fit.
/// Rows are stored in a canonical order so every sum, and hence the fit,
/// is invariant to the row order of the dataset.
struct Design {
    /// Dataset row of each design row.
    order: Vec<usize>,
    p: Vec<Vec<f64>>,
    s: Vec<Vec<f64>>,
    w: Vec<f64>,
    k1: usize,
    fixed: Option<f64>,
}

impl Design {
    fn new(data: &Dataset, model: &ProxyModel) -> Result<Self> {
        let proxy = data.proxy(model.proxy_column)?;
        let mut order: Vec<usize> = (0..data.n()).collect();
        order.sort_by(|&a, &b| {
            proxy[a]
                .total_cmp(&proxy[b])
                .then(data.x[a].total_cmp(&data.x[b]))
                .then_with(|| data.z.iter().fold(std::cmp::Ordering::Equal, |o, col| o.then(col[a].total_cmp(&col[b]))))
        });
        let mut z = vec![0.0; data.dim_z()];
        let mut p = Vec::with_capacity(data.n());
        let mut s = Vec::with_capacity(data.n());
        for &i in &order {
            fill_z(data, i, &mut z);
            p.push(model.location_row(data.x[i], &z));
            s.push(if model.fixed_scale.is_some() { Vec::new() } else { model.scale_row(data.x[i], &z) });
        }
        let w = order.iter().map(|&i| proxy[i]).collect();
        Ok(Self { order, p, s, w, k1: model.dim_location(), fixed: model.fixed_scale })
    }

    fn n(&self) -> usize {
        self.w.len()
    }

    fn dim(&self) -> usize {
        self.k1 + self.s.first().map_or(0, Vec::len)
    }

    fn moments(&self, beta: &[f64], i: usize) -> (f64, f64) {
        let mu: f64 = self.p[i].iter().zip(beta).map(|(a, b)| a * b).sum();
        let sigma = match self.fixed {
            Some(s) => s,
            None => self.s[i].iter().zip(&beta[self.k1..]).map(|(a, b)| a * b).sum::<f64>().exp().max(SCALE_FLOOR),
        };
        (mu, sigma)
    }

    fn loglik(&self, beta: &[f64]) -> f64 {
        stats::compensated_sum((0..self.n()).map(|i| {
            let (mu, sigma) = self.moments(beta, i);
            let r = (self.w[i] - mu) / sigma;
            -0.5 * (2.0 * std::f64::consts::PI).ln() - sigma.ln() - 0.5 * r * r
        }))
    }

    fn score(&self, beta: &[f64], i: usize) -> Vec<f64> {
        let (mu, sigma) = self.moments(beta, i);
        let r = self.w[i] - mu;
        let s2 = sigma * sigma;
        let mut g: Vec<f64> = self.p[i].iter().map(|p| r / s2 * p).collect();
        let a = r * r / s2 - 1.0;
        g.extend(self.s[i].iter().map(|s| a * s));
        g
    }

    fn score_sum(&self, beta: &[f64]) -> Vec<f64> {
        let mut acc = vec![stats::NeumaierSum::default(); self.dim()];
        for i in 0..self.n() {
            for (a, v) in acc.iter_mut().zip(self.score(beta, i)) {
                a.add(v);
            }
        }
        acc.iter().map(|a| a.value()).collect()
    }

    /// Summed expected information (Fisher) or observed information.
    fn information(&self, beta: &[f64], observed: bool) -> DMatrix<f64> {
        let k = self.dim();
        let k1 = self.k1;
        let mut info = DMatrix::zeros(k, k);
        for i in 0..self.n() {
            let (mu, sigma) = self.moments(beta, i);
            let r = self.w[i] - mu;
            let s2 = sigma * sigma;
            let p = &self.p[i];
            let s = &self.s[i];
            for a in 0..k1 {
                for b in 0..k1 {
                    info[(a, b)] += p[a] * p[b] / s2;
                }
            }
            let ss = if observed { 2.0 * r * r / s2 } else { 2.0 };
            for a in 0..s.len() {
                for b in 0..s.len() {
                    info[(k1 + a, k1 + b)] += ss * s[a] * s[b];
                }
                if observed {
                    for b in 0..k1 {
                        let v = 2.0 * r / s2 * p[b] * s[a];
                        info[(k1 + a, b)] += v;
                        info[(b, k1 + a)] += v;
                    }
                }
            }
        }
        info
    }
}

fn ols(p: &[Vec<f64>], w: &[f64]) -> Result<Vec<f64>> {
    let g = linalg::gram(p);
    if linalg::scaled_condition(&g) > MAX_CONDITION {
        return Err(AsfError::RankDeficientDesign);
    }
    let k = g.nrows();
    let mut rhs = DVector::zeros(k);
    for (row, &wi) in p.iter().zip(w) {
        for a in 0..k {
            rhs[a] += row[a] * wi;
        }
    }
    let chol = linalg::cholesky(&g).ok_or(AsfError::RankDeficientDesign)?;
    Ok(linalg::to_vec(&chol.solve(&rhs)))
}

/// Maximum likelihood fit of the proxy model.
///
/// Fisher scoring with backtracking from the least-squares start. A fixed
/// scale reduces the problem to least squares, solved in closed form.
pub fn fit_mle(data: &Dataset, model: &ProxyModel) -> Result<FirstStageFit> {
    model.validate(data.dim_z())?;
    let n = data.n();
    if n <= model.dim_beta() {
        return Err(AsfError::InvalidArgument(format!("need more than {} observations, got {n}", model.dim_beta())));
    }
    let design = Design::new(data, model)?;
    let beta_loc = ols(&design.p, &design.w)?;
    if model.fixed_scale.is_none() {
        let g = linalg::gram(&design.s);
        if linalg::scaled_condition(&g) > MAX_CONDITION {
            return Err(AsfError::RankDeficientDesign);
        }
    }

    let resid: Vec<f64> = (0..n)
        .map(|i| design.w[i] - design.p[i].iter().zip(&beta_loc).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let rms = (stats::compensated_sum(resid.iter().map(|r| r * r)) / n as f64).sqrt();
    let scale_of_w = 1.0 + stats::sample_sd(&design.w);

    let mut beta = beta_loc.clone();
    let mut iterations = 0;
    let mut at_floor = false;
    if model.fixed_scale.is_none() {
        let intercept = model.log_scale.iter().position(Term::is_constant).unwrap_or(0);
        let mut gamma = vec![0.0; model.log_scale.len()];
        gamma[intercept] = rms.max(SCALE_FLOOR).ln();
        beta.extend(gamma);
        if rms <= SCALE_FLOOR * scale_of_w {
            // noiseless proxy: the likelihood is unbounded, the boundary
            // solution is the interpolating location with the floored scale
            at_floor = true;
        } else {
            iterations = scoring(&design, &mut beta)?;
        }
    }

    let score_sum = design.score_sum(&beta);
    let gradient_norm = score_sum.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let influence = influence_matrix(&design, &beta, model, at_floor)?;
    Ok(FirstStageFit {
        model: model.clone(),
        loglik: design.loglik(&beta),
        control_values: control_values(&beta, data, model),
        theta_jacobian: jacobians(model, data),
        beta_hat: beta,
        influence,
        iterations,
        gradient_norm,
        at_scale_floor: at_floor,
    })
}

fn scoring(design: &Design, beta: &mut Vec<f64>) -> Result<usize> {
    let n = design.n() as f64;
    let tol = 1e-8 * n;
    let mut ll = design.loglik(beta);
    let mut grad = design.score_sum(beta);
    for it in 0..MAX_ITERATIONS {
        let gmax = grad.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if gmax <= tol {
            polish(design, beta, ll);
            return Ok(it);
        }
        // Fisher scoring far from the optimum, Newton once close
        let observed = it > 3;
        let mut info = design.information(beta, observed);
        if linalg::cholesky(&info).is_none() {
            info = design.information(beta, false);
        }
        let chol = linalg::cholesky(&info).ok_or(AsfError::RankDeficientDesign)?;
        let step = chol.solve(&DVector::from_vec(grad.clone()));
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let trial_ll = design.loglik(&trial);
            if trial_ll.is_finite() && trial_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                *beta = trial;
                ll = trial_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        grad = design.score_sum(beta);
        if !accepted {
            let gmax = grad.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            return if gmax <= tol {
                Ok(it)
            } else {
                Err(AsfError::NonConvergence { iterations: it, gradient: gmax })
            };
        }
    }
    let gmax = grad.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if gmax <= tol {
        Ok(MAX_ITERATIONS)
    } else {
        Err(AsfError::NonConvergence { iterations: MAX_ITERATIONS, gradient: gmax })
    }
}

/// Extra Newton steps after convergence so the optimum is pinned down to
/// rounding and does not depend on the iteration path.
fn polish(design: &Design, beta: &mut Vec<f64>, mut ll: f64) {
    for _ in 0..4 {
        let grad = design.score_sum(beta);
        let Some(chol) = linalg::cholesky(&design.information(beta, true)) else { return };
        let step = chol.solve(&DVector::from_vec(grad));
        let size = step.amax();
        let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + s).collect();
        let trial_ll = design.loglik(&trial);
        if !(trial_ll >= ll) {
            return;
        }
        *beta = trial;
        ll = trial_ll;
        if size <= 1e-15 * (1.0 + beta.iter().fold(0.0_f64, |m, b| m.max(b.abs()))) {
            return;
        }
    }
}

fn influence_matrix(design: &Design, beta: &[f64], model: &ProxyModel, at_floor: bool) -> Result<DMatrix<f64>> {
    let n = design.n();
    let k = design.dim();
    // at the scale floor only the location block is identified
    let active = if at_floor { design.k1 } else { k };
    let scores: Vec<Vec<f64>> = (0..n).map(|i| design.score(beta, i)).collect();
    let mut info = match model.information {
        InformationKind::Hessian => design.information(beta, true),
        InformationKind::OuterProduct => linalg::gram(&scores),
    };
    info /= n as f64;
    let sub = info.view((0, 0), (active, active)).clone_owned();
    let chol = linalg::cholesky(&sub).ok_or(AsfError::RankDeficientDesign)?;
    let mut out = DMatrix::zeros(n, k);
    for (r, s) in scores.iter().enumerate() {
        let phi = chol.solve(&DVector::from_column_slice(&s[..active]));
        for a in 0..active {
            out[(design.order[r], a)] = phi[a];
        }
    }
    Ok(out)
}

/// Outcome of [`influence_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    /// `‖mean φ̂‖∞`.
    pub mean_norm: f64,
    /// Column scale used for the mean check.
    pub scale: f64,
    pub mean_ok: bool,
    /// Median over checked `i` of `‖n(β̂ − β̂₍₋ᵢ₎) − φ̂ᵢ‖ / ‖φ̂ᵢ‖`.
    pub jackknife_median_error: f64,
    pub jackknife_checked: usize,
    pub jackknife_ok: bool,
}

/// Mean-zero check on `φ̂` and a leave-one-out comparison on the first
/// `leave_out` observations.
pub fn influence_check(fit: &FirstStageFit, data: &Dataset, model: &ProxyModel, leave_out: usize) -> Result<InfluenceReport> {
    let n = data.n();
    let k = fit.influence.ncols();
    let mut mean_norm = 0.0_f64;
    let mut scale = 0.0_f64;
    for c in 0..k {
        let col: Vec<f64> = fit.influence.column(c).iter().copied().collect();
        mean_norm = mean_norm.max(stats::mean(&col).abs());
        scale = scale.max((stats::compensated_sum(col.iter().map(|v| v * v)) / n as f64).sqrt());
    }
    let mean_ok = mean_norm <= 1e-6 * scale.max(1e-300);

    let checked = leave_out.min(n);
    let mut errors = Vec::with_capacity(checked);
    for i in 0..checked {
        let keep: Vec<bool> = (0..n).map(|j| j != i).collect();
        let sub = fit_mle(&data.filter(&keep), model)?;
        let diff: Vec<f64> = fit
            .beta_hat
            .iter()
            .zip(&sub.beta_hat)
            .zip(fit.influence.row(i).iter())
            .map(|((b, bi), phi)| n as f64 * (b - bi) - phi)
            .collect();
        let num = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        let den = fit.influence.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if den > 0.0 {
            errors.push(num / den);
        }
    }
    let jackknife_median_error = if errors.is_empty() { 0.0 } else { stats::median(&errors) };
    Ok(InfluenceReport {
        mean_norm,
        scale,
        mean_ok,
        jackknife_median_error,
        jackknife_checked: checked,
        jackknife_ok: jackknife_median_error <= 0.05,
    })
}

/// Summed score at `beta`, exposed for diagnostics.
pub fn score(beta: &[f64], data: &Dataset, model: &ProxyModel) -> Result<Vec<f64>> {
    Ok(Design::new(data, model)?.score_sum(beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::XKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn sample(n: usize, seed: u64, heteroskedastic: bool) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut z = Vec::new();
        let mut w = Vec::new();
        for _ in 0..n {
            let xi: f64 = StandardNormal.sample(&mut rng);
            let zi: f64 = StandardNormal.sample(&mut rng);
            let e: f64 = StandardNormal.sample(&mut rng);
            let sd = if heteroskedastic { (0.2 + 0.3 * zi).exp() } else { 0.8 };
            x.push(xi);
            z.push(zi);
            w.push(0.3 + 0.5 * xi + zi + sd * e);
        }
        Dataset::new(vec![0.0; n], x, vec![z], vec![w], XKind::Continuous).unwrap()
    }

    #[test]
    fn fixed_scale_is_least_squares() {
        let d = sample(200, 3, false);
        let mut model = ProxyModel::linear(1);
        model.fixed_scale = Some(0.8);
        let fit = fit_mle(&d, &model).unwrap();
        let rows: Vec<Vec<f64>> = (0..d.n()).map(|i| vec![1.0, d.x[i], d.z[0][i]]).collect();
        let ols = ols(&rows, &d.w[0]).unwrap();
        for (a, b) in fit.beta_hat.iter().zip(&ols) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn noiseless_proxy_recovers_index() {
        let mut d = sample(50, 4, false);
        d.w[0] = (0..50).map(|i| 1.0 + 2.0 * d.x[i] - d.z[0][i]).collect();
        let fit = fit_mle(&d, &ProxyModel::linear(1)).unwrap();
        assert!(fit.at_scale_floor);
        for (a, b) in fit.beta_hat.iter().zip([1.0, 2.0, -1.0]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn score_vanishes_and_matches_finite_differences() {
        let d = sample(300, 5, true);
        let mut model = ProxyModel::linear(1);
        model.log_scale = crate::terms::parse_terms(&["1", "z1"]).unwrap();
        let fit = fit_mle(&d, &model).unwrap();
        assert!(fit.gradient_norm <= 1e-8 * 300.0);
        assert_eq!(fit.dim_v(), 2);
        let beta: Vec<f64> = fit.beta_hat.iter().map(|b| b + 0.05).collect();
        let g = score(&beta, &d, &model).unwrap();
        for k in 0..beta.len() {
            let h = 1e-5;
            let mut up = beta.clone();
            let mut dn = beta.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (log_likelihood(&up, &d, &model).unwrap() - log_likelihood(&dn, &d, &model).unwrap()) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-5 * g[k].abs().max(1.0), "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn controls_and_cdf() {
        let d = Dataset::new(vec![0.0], vec![2.0], vec![vec![3.0]], vec![vec![0.0]], XKind::Continuous).unwrap();
        let model = ProxyModel {
            location: crate::terms::parse_terms(&["1", "x", "z1"]).unwrap(),
            ..ProxyModel::linear(1)
        };
        let v = control_values(&[0.0, 1.0, 1.0, 0.0], &d, &model);
        assert_eq!(v.row(0), &[5.0]);
        let fit = FirstStageFit::fixed(&model, &[0.0, 1.0, 1.0, 0.0], &d).unwrap();
        assert_eq!(conditional_cdf(5.0, 2.0, &[3.0], &fit), 0.5);
        let p = conditional_cdf(6.0, 2.0, &[3.0], &fit);
        assert!((p - 0.841344746068543).abs() < 1e-12, "{p}");
        assert!(conditional_cdf(-5.0, 2.0, &[3.0], &fit) <= 1e-15);
    }

    #[test]
    fn rank_deficient_design() {
        let mut d = sample(40, 6, false);
        d.z[0] = d.x.clone();
        assert!(matches!(fit_mle(&d, &ProxyModel::linear(1)), Err(AsfError::RankDeficientDesign)));
    }
}
