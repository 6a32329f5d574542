//! Point estimates of the ASF with their inference summary.

use serde::{Deserialize, Serialize};

use crate::error::{AsfError, Result};
use crate::stats;
use crate::trimming::Interval;

/// Nominal level attached to every estimate.
pub const DEFAULT_CI_LEVEL: f64 = 0.95;

/// Normalisation under which `σ̂²` is the asymptotic variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rate {
    #[serde(rename = "sqrt-n")]
    SqrtN,
    #[serde(rename = "sqrt-n-b^dx")]
    SqrtNBdx,
}

impl Rate {
    /// `D` in `Var(μ̂) ≈ σ̂² / D`.
    pub fn denominator(self, n: usize, bandwidth: f64, dim_x: usize) -> f64 {
        match self {
            Rate::SqrtN => n as f64,
            Rate::SqrtNBdx => n as f64 * bandwidth.powi(dim_x as i32),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n: usize,
    pub n_trimmed: usize,
    pub trim_share: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degree: Option<u32>,
    /// Trimmed evaluation points whose local fit failed and were dropped.
    pub failed_fits: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_effective_n: Option<f64>,
    /// Share of trimmed controls inside the control range seen near `x0`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub support_coverage: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsfEstimate {
    pub x0: f64,
    pub mu_hat: f64,
    /// Absent for estimators without a variance formula.
    pub sigma2_hat: Option<f64>,
    pub rate: Option<Rate>,
    pub rate_denominator: Option<f64>,
    pub ci_level: f64,
    pub ci: Option<Interval>,
    pub diagnostics: Diagnostics,
}

impl AsfEstimate {
    /// Estimate with a normal-approximation interval at the default level.
    pub fn with_variance(x0: f64, mu_hat: f64, sigma2_hat: f64, rate: Rate, denominator: f64, diagnostics: Diagnostics) -> Result<Self> {
        let ci = normal_interval(mu_hat, sigma2_hat, denominator, DEFAULT_CI_LEVEL)?;
        Ok(Self {
            x0,
            mu_hat,
            sigma2_hat: Some(sigma2_hat),
            rate: Some(rate),
            rate_denominator: Some(denominator),
            ci_level: DEFAULT_CI_LEVEL,
            ci: Some(ci),
            diagnostics,
        })
    }

    pub fn point_only(x0: f64, mu_hat: f64, diagnostics: Diagnostics) -> Self {
        Self {
            x0,
            mu_hat,
            sigma2_hat: None,
            rate: None,
            rate_denominator: None,
            ci_level: DEFAULT_CI_LEVEL,
            ci: None,
            diagnostics,
        }
    }

    /// Standard error of `μ̂`.
    pub fn std_error(&self) -> Option<f64> {
        Some((self.sigma2_hat? / self.rate_denominator?).sqrt())
    }
}

/// `μ̂ ± z_{1−α/2} √(σ̂²/D)`.
pub fn normal_interval(mu: f64, sigma2: f64, denominator: f64, level: f64) -> Result<Interval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(AsfError::InvalidArgument(format!("confidence level must lie in (0, 1), got {level}")));
    }
    if !sigma2.is_finite() || sigma2 < 0.0 || !(denominator > 0.0) {
        return Err(AsfError::InvalidArgument("variance must be finite and non-negative".into()));
    }
    let z = stats::normal_quantile(0.5 + 0.5 * level);
    let half = z * (sigma2 / denominator).sqrt();
    Ok(Interval::new(mu - half, mu + half))
}

/// Interval for an estimate at another level.
pub fn confidence_interval(est: &AsfEstimate, level: f64) -> Result<Interval> {
    match (est.sigma2_hat, est.rate_denominator) {
        (Some(s), Some(d)) => normal_interval(est.mu_hat, s, d, level),
        _ => Err(AsfError::InvalidArgument("estimate carries no variance".into())),
    }
}
