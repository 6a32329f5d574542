//! One entry point running any estimator end to end on a dataset.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, XKind};
use crate::error::{AsfError, Result};
use crate::estimate::AsfEstimate;
use crate::first_stage::{fit_mle, FirstStageFit, ProxyModel};
use crate::kernel::KernelSpec;
use crate::locpoly::{LocPolyConfig, SmoothingMode};
use crate::nonparametric::{self, NonparametricConfig};
use crate::parametric::{self, KroneckerBasis};
use crate::semiparametric::{self, bandwidth_exponent};
use crate::trimming::TrimmingSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    SemiparametricContinuous,
    SemiparametricDiscrete,
    Parametric,
    Nonparametric,
    /// Regression of `Y` on `X` alone, ignoring the control.
    Naive,
}

impl EstimatorKind {
    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::SemiparametricContinuous => "semiparametric-continuous",
            EstimatorKind::SemiparametricDiscrete => "semiparametric-discrete",
            EstimatorKind::Parametric => "parametric",
            EstimatorKind::Nonparametric => "nonparametric",
            EstimatorKind::Naive => "naive",
        }
    }

    /// The semiparametric estimator matching the type of `X`.
    pub fn semiparametric_for(kind: XKind) -> Self {
        match kind {
            XKind::Continuous => EstimatorKind::SemiparametricContinuous,
            XKind::Discrete => EstimatorKind::SemiparametricDiscrete,
        }
    }

    /// Exponent `r` in `RMSE ∝ n^r` implied by the default tuning, for
    /// estimators with a stated rate.
    pub fn rate_exponent(self, dim_v: usize) -> Option<f64> {
        match self {
            EstimatorKind::SemiparametricDiscrete | EstimatorKind::Parametric => Some(-0.5),
            EstimatorKind::SemiparametricContinuous => {
                let gamma = bandwidth_exponent(1, dim_v, 1, SmoothingMode::ContinuousX).ok()?;
                Some(-(1.0 - gamma) / 2.0)
            }
            EstimatorKind::Nonparametric | EstimatorKind::Naive => None,
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = AsfError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "semiparametric-continuous" => Ok(EstimatorKind::SemiparametricContinuous),
            "semiparametric-discrete" => Ok(EstimatorKind::SemiparametricDiscrete),
            "parametric" => Ok(EstimatorKind::Parametric),
            "nonparametric" => Ok(EstimatorKind::Nonparametric),
            "naive" => Ok(EstimatorKind::Naive),
            _ => Err(AsfError::InvalidArgument(format!("unknown estimator '{s}'"))),
        }
    }
}

/// Tuning shared by every estimator. Absent values take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorOptions {
    pub trim: TrimmingSet,
    pub kernel: KernelSpec,
    /// Second-stage bandwidth override.
    pub bandwidth: Option<f64>,
    /// Local polynomial degree override.
    pub degree: Option<u32>,
    /// First-stage model; defaults to a linear location in `(x, z)` with
    /// constant scale.
    pub proxy_model: Option<ProxyModel>,
    /// Parametric regressor basis; defaults to [`KroneckerBasis::default_for`].
    pub basis: Option<KroneckerBasis>,
    /// First-stage bandwidth of the nonparametric pipeline.
    pub bandwidth_fs: Option<f64>,
    pub grid_size: Option<usize>,
    /// Treat the first stage as known at this `β`: controls are computed
    /// from it and its estimation noise is ignored.
    pub known_beta: Option<Vec<f64>>,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            trim: TrimmingSet::default(),
            kernel: KernelSpec::default(),
            bandwidth: None,
            degree: None,
            proxy_model: None,
            basis: None,
            bandwidth_fs: None,
            grid_size: None,
            known_beta: None,
        }
    }
}

impl EstimatorOptions {
    pub fn with_trim(trim: TrimmingSet) -> Self {
        Self { trim, ..Self::default() }
    }

    fn proxy_model(&self, data: &Dataset) -> ProxyModel {
        self.proxy_model.clone().unwrap_or_else(|| ProxyModel::linear(data.dim_z()))
    }

    /// Fitted or fixed first stage.
    pub fn first_stage(&self, data: &Dataset) -> Result<FirstStageFit> {
        let model = self.proxy_model(data);
        match &self.known_beta {
            Some(beta) => FirstStageFit::fixed(&model, beta, data),
            None => fit_mle(data, &model),
        }
    }

    /// Second-stage configuration of the semiparametric estimators.
    pub fn locpoly_config(&self, data: &Dataset, fs: &FirstStageFit) -> Result<LocPolyConfig> {
        let mut cfg = semiparametric::default_config(data, fs, self.kernel)?;
        if let Some(q) = self.degree {
            cfg.degree = q;
            if self.bandwidth.is_none() {
                cfg.bandwidth = semiparametric::bandwidth_for(data, &fs.control_values, q, cfg.mode, &self.kernel)?;
            }
        }
        if let Some(b) = self.bandwidth {
            cfg.bandwidth = b;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn nonparametric_config(&self) -> NonparametricConfig {
        NonparametricConfig {
            bandwidth: self.bandwidth,
            bandwidth_fs: self.bandwidth_fs,
            grid_size: self.grid_size.unwrap_or(nonparametric::DEFAULT_GRID_SIZE),
            kernel: self.kernel,
        }
    }
}

/// Runs `kind` at every point of `x0s`, sharing the first stage.
pub fn estimate(kind: EstimatorKind, data: &Dataset, x0s: &[f64], opts: &EstimatorOptions) -> Result<Vec<AsfEstimate>> {
    if x0s.is_empty() {
        return Err(AsfError::InvalidArgument("no evaluation points".into()));
    }
    opts.trim.validate()?;
    match kind {
        EstimatorKind::SemiparametricContinuous | EstimatorKind::SemiparametricDiscrete => {
            let fs = opts.first_stage(data)?;
            let cfg = opts.locpoly_config(data, &fs)?;
            x0s.iter()
                .map(|&x0| match kind {
                    EstimatorKind::SemiparametricContinuous => semiparametric::estimate_asf_continuous(x0, data, &fs, &opts.trim, &cfg),
                    _ => semiparametric::estimate_asf_discrete(x0, data, &fs, &opts.trim, &cfg),
                })
                .collect()
        }
        EstimatorKind::Parametric | EstimatorKind::Naive => {
            let fs = opts.first_stage(data)?;
            let basis = match (kind, &opts.basis) {
                (EstimatorKind::Naive, _) => KroneckerBasis::without_control(data),
                (_, Some(b)) => b.clone(),
                (_, None) => KroneckerBasis::default_for(data),
            };
            let fit = parametric::fit_ols(data, &fs, &basis)?;
            x0s.iter().map(|&x0| parametric::asf_conditional(x0, data, &fit, &fs, &opts.trim)).collect()
        }
        EstimatorKind::Nonparametric => {
            let cfg = opts.nonparametric_config();
            let b_fs = cfg.bandwidth_fs.unwrap_or_else(|| nonparametric::first_stage_bandwidth(data, &cfg.kernel));
            let cdfs = nonparametric::estimate_conditional_cdf_with(data, 0, b_fs, cfg.grid_size, &cfg.kernel)?;
            x0s.iter()
                .map(|&x0| nonparametric::asf_nonparametric_with_cdfs(x0, data, &cdfs, &opts.trim, &cfg))
                .collect()
        }
    }
}
