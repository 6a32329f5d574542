//! Flexible parametric ASF: least squares of `Y` on `r(X, V̂) = p₁(X) ⊗ p₂(V̂)`
//! followed by averaging `γ̂'r(x0, V̂ᵢ)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{distinct_levels, Dataset, XKind};
use crate::error::{AsfError, Result};
use crate::estimate::{AsfEstimate, Diagnostics, Rate};
use crate::first_stage::{Controls, FirstStageFit};
use crate::linalg;
use crate::stats::{self, NeumaierSum};
use crate::terms::{polynomial_terms, Term, Var};
use crate::trimming::TrimmingSet;

/// Largest admissible condition number of the second-moment matrix.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KroneckerBasis {
    pub p1: Vec<Term>,
    pub p2: Vec<Term>,
}

impl KroneckerBasis {
    pub fn new(p1: Vec<Term>, p2: Vec<Term>) -> Result<Self> {
        let b = Self { p1, p2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.p1 {
            if t.uses(|v| !matches!(v, Var::X)) {
                return Err(AsfError::InvalidArgument(format!("p1 term '{t}' may only use x")));
            }
        }
        for t in &self.p2 {
            if t.uses(|v| !matches!(v, Var::V(_))) {
                return Err(AsfError::InvalidArgument(format!("p2 term '{t}' may only use v")));
            }
        }
        if !self.p1.iter().any(Term::is_constant) || !self.p2.iter().any(Term::is_constant) {
            return Err(AsfError::InvalidArgument("both Kronecker blocks need a constant term".into()));
        }
        Ok(())
    }

    /// Quadratics in `x` (or level indicators for discrete `x`) times
    /// quadratics in the first control coordinate.
    pub fn default_for(data: &Dataset) -> Self {
        Self { p1: default_p1(data), p2: polynomial_terms(Var::V(0), 2) }
    }

    /// `p₂ = {1}`: a regression on `x` alone, ignoring the control.
    pub fn without_control(data: &Dataset) -> Self {
        Self { p1: default_p1(data), p2: vec![Term::constant()] }
    }

    pub fn len(&self) -> usize {
        self.p1.len() * self.p2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn eval(&self, x: f64, v: &[f64]) -> Vec<f64> {
        let a: Vec<f64> = self.p1.iter().map(|t| t.eval(x, &[], v)).collect();
        let b: Vec<f64> = self.p2.iter().map(|t| t.eval(x, &[], v)).collect();
        a.iter().flat_map(|ai| b.iter().map(move |bj| ai * bj)).collect()
    }

    /// `∂r(x, v)/∂v'`, an `L × d_v` matrix.
    pub fn v_jacobian(&self, x: f64, v: &[f64]) -> DMatrix<f64> {
        let a: Vec<f64> = self.p1.iter().map(|t| t.eval(x, &[], v)).collect();
        let nb = self.p2.len();
        DMatrix::from_fn(self.len(), v.len(), |row, k| {
            a[row / nb] * self.p2[row % nb].derivative(Var::V(k), x, &[], v)
        })
    }
}

fn default_p1(data: &Dataset) -> Vec<Term> {
    match data.x_kind {
        XKind::Continuous => polynomial_terms(Var::X, 2),
        XKind::Discrete => {
            let levels = distinct_levels(&data.x);
            let mut p1 = vec![Term::constant()];
            p1.extend(levels.iter().skip(1).map(|&l| Term::indicator(Var::X, l)));
            p1
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParametricAsfFit {
    pub basis: KroneckerBasis,
    pub gamma_hat: Vec<f64>,
    /// `Q̂ = (1/n) Σ rᵢrᵢ'`.
    pub second_moment: DMatrix<f64>,
    pub second_moment_inv: DMatrix<f64>,
    /// Condition number of `Q̂` after unit-diagonal scaling.
    pub condition: f64,
    pub residuals: Vec<f64>,
    /// `r(Xᵢ, V̂ᵢ)` per observation.
    pub design: Vec<Vec<f64>>,
    pub x: Vec<f64>,
    pub controls: Controls,
}

/// Least squares of `Y` on `r(X, V̂)`.
pub fn fit_ols(data: &Dataset, fs: &FirstStageFit, basis: &KroneckerBasis) -> Result<ParametricAsfFit> {
    fit_ols_with_controls(data, &fs.control_values, basis)
}

pub fn fit_ols_with_controls(data: &Dataset, controls: &Controls, basis: &KroneckerBasis) -> Result<ParametricAsfFit> {
    basis.validate()?;
    for t in &basis.p2 {
        t.check_dims(0, controls.dim)?;
    }
    let n = data.n();
    if controls.n() != n {
        return Err(AsfError::DimensionMismatch { expected: n, got: controls.n() });
    }
    let l = basis.len();
    if n <= l {
        return Err(AsfError::InvalidArgument(format!("need more than {l} observations, got {n}")));
    }
    let design: Vec<Vec<f64>> = (0..n).map(|i| basis.eval(data.x[i], controls.row(i))).collect();
    let q = linalg::gram(&design) / n as f64;
    let condition = linalg::scaled_condition(&q);
    if !(condition <= MAX_CONDITION) {
        return Err(AsfError::SingularSecondMoment { condition });
    }
    let chol = linalg::cholesky(&q).ok_or(AsfError::SingularSecondMoment { condition })?;
    let mut rhs = vec![NeumaierSum::default(); l];
    for (r, y) in design.iter().zip(&data.y) {
        for a in 0..l {
            rhs[a].add(r[a] * y);
        }
    }
    let rhs = DVector::from_iterator(l, rhs.iter().map(|s| s.value() / n as f64));
    let gamma = chol.solve(&rhs);
    let residuals = design
        .iter()
        .zip(&data.y)
        .map(|(r, y)| y - r.iter().zip(gamma.iter()).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    Ok(ParametricAsfFit {
        basis: basis.clone(),
        gamma_hat: linalg::to_vec(&gamma),
        second_moment_inv: chol.inverse(),
        second_moment: q,
        condition,
        residuals,
        design,
        x: data.x.clone(),
        controls: controls.clone(),
    })
}

impl ParametricAsfFit {
    fn n(&self) -> usize {
        self.residuals.len()
    }

    /// `γ̂'r(x0, V̂ᵢ)`.
    pub fn surface(&self, x0: f64, i: usize) -> f64 {
        dot(&self.gamma_hat, &self.basis.eval(x0, self.controls.row(i)))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Influence decomposition of the parametric ASF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricVariance {
    pub mu_hat: f64,
    pub sigma2: f64,
    pub psi: Vec<f64>,
    /// Coefficient on `φ̂ᵢ`, equal to `∂μ̂/∂β'`.
    pub first_stage_gradient: Vec<f64>,
}

/// `ψ̂ᵢ` and `σ̂² = (1/n) Σ ψ̂ᵢ²` for the partial mean over `weights`
/// (all ones for the unconditional ASF).
///
/// The first-stage coefficient differentiates `γ̂` through the regressors
/// `r(Xⱼ, V̂ⱼ)` at the observed `Xⱼ`, and the averaged surface through
/// `r(x0, V̂ᵢ)`; it equals the exact derivative of `μ̂` in `β`.
fn influence(x0: f64, fit: &ParametricAsfFit, fs: &FirstStageFit, weights: &[bool]) -> Result<ParametricVariance> {
    let n = fit.n();
    let nf = n as f64;
    let l = fit.basis.len();
    let k = fs.influence.ncols();
    if fs.influence.nrows() != n || fs.theta_jacobian.len() != n {
        return Err(AsfError::DimensionMismatch { expected: n, got: fs.influence.nrows() });
    }
    let n_t = weights.iter().filter(|&&t| t).count();
    if n_t == 0 {
        return Err(AsfError::EmptyTrim);
    }
    let tau = n_t as f64 / nf;
    let g = DVector::from_column_slice(&fit.gamma_hat);

    let at_x0: Vec<f64> = (0..n).map(|i| fit.surface(x0, i)).collect();
    let mu = stats::compensated_sum((0..n).filter(|&i| weights[i]).map(|i| at_x0[i])) / n_t as f64;

    let mut rbar = vec![NeumaierSum::default(); l];
    let mut dbar = vec![NeumaierSum::default(); k];
    let mut a = DMatrix::<f64>::zeros(l, k);
    for i in 0..n {
        let v = fit.controls.row(i);
        let jac = &fs.theta_jacobian[i];
        if weights[i] {
            for (acc, r) in rbar.iter_mut().zip(fit.basis.eval(x0, v)) {
                acc.add(r);
            }
            let d = fit.basis.v_jacobian(x0, v) * jac;
            let gd = d.transpose() * &g;
            for c in 0..k {
                dbar[c].add(gd[c]);
            }
        }
        let r_obs = fit.basis.v_jacobian(fit.x[i], v) * jac;
        let gr = r_obs.transpose() * &g;
        for row in 0..l {
            for c in 0..k {
                a[(row, c)] += fit.residuals[i] * r_obs[(row, c)] - fit.design[i][row] * gr[c];
            }
        }
    }
    a /= nf;
    let rbar = DVector::from_iterator(l, rbar.iter().map(|s| s.value() / n_t as f64));
    let h = &fit.second_moment_inv * &rbar;
    let grad: Vec<f64> = (0..k)
        .map(|c| (0..l).map(|row| h[row] * a[(row, c)]).sum::<f64>() + dbar[c].value() / n_t as f64)
        .collect();

    let psi: Vec<f64> = (0..n)
        .map(|i| {
            let own = if weights[i] { (at_x0[i] - mu) / tau } else { 0.0 };
            let ls = dot(h.as_slice(), &fit.design[i]) * fit.residuals[i];
            let fs_term: f64 = (0..k).map(|c| grad[c] * fs.influence[(i, c)]).sum();
            own + ls + fs_term
        })
        .collect();
    let sigma2 = stats::compensated_sum(psi.iter().map(|p| p * p)) / nf;
    Ok(ParametricVariance { mu_hat: mu, sigma2, psi, first_stage_gradient: grad })
}

/// Plug-in variance of the unconditional ASF.
pub fn variance_parametric(x0: f64, fit: &ParametricAsfFit, fs: &FirstStageFit) -> Result<ParametricVariance> {
    influence(x0, fit, fs, &vec![true; fit.n()])
}

fn diagnostics(fit: &ParametricAsfFit, n_t: usize) -> Diagnostics {
    let n = fit.n();
    let mut warnings = Vec::new();
    if fit.condition > 1e8 {
        warnings.push(format!("second-moment matrix is ill-conditioned (condition {:.3e})", fit.condition));
    }
    Diagnostics { n, n_trimmed: n_t, trim_share: n_t as f64 / n as f64, warnings, ..Diagnostics::default() }
}

/// `(1/n) Σ γ̂'r(x0, V̂ᵢ)` over the full sample.
pub fn asf_unconditional(x0: f64, fit: &ParametricAsfFit, fs: &FirstStageFit) -> Result<AsfEstimate> {
    let v = variance_parametric(x0, fit, fs)?;
    let n = fit.n();
    AsfEstimate::with_variance(x0, v.mu_hat, v.sigma2, Rate::SqrtN, n as f64, diagnostics(fit, n))
}

/// Trimmed average of `γ̂'r(x0, V̂ᵢ)`.
pub fn asf_conditional(x0: f64, data: &Dataset, fit: &ParametricAsfFit, fs: &FirstStageFit, trim: &TrimmingSet) -> Result<AsfEstimate> {
    let t = trim.indicators(data)?;
    let v = influence(x0, fit, fs, &t)?;
    let n_t = t.iter().filter(|&&b| b).count();
    AsfEstimate::with_variance(x0, v.mu_hat, v.sigma2, Rate::SqrtN, fit.n() as f64, diagnostics(fit, n_t))
}

/// Variance components of the conditional ASF.
pub fn variance_parametric_conditional(x0: f64, data: &Dataset, fit: &ParametricAsfFit, fs: &FirstStageFit, trim: &TrimmingSet) -> Result<ParametricVariance> {
    influence(x0, fit, fs, &trim.indicators(data)?)
}
