//! Reference data generating processes with known structural functions.
//!
//! Every design draws `ε | X, Z ~ N(β₁X + β₂Z, s²)` and a proxy
//! `W = ε + τ_w ξ`, so `W ⟂ (X, Z) | ε`, the Gaussian location model for `W`
//! is correctly specified, and `V = β₁X + β₂Z` is a valid control with
//! `E[ε | V] = V`.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, XKind};
use crate::error::{AsfError, Result};
use crate::first_stage::ProxyModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DgpName {
    /// Continuous `X`, outcome `(a₀+ε) + (a₁+δε)X + ζ`.
    #[serde(rename = "DGP-C", alias = "dgp-c", alias = "c")]
    C,
    /// Binary `X` with logistic selection on `Z`.
    #[serde(rename = "DGP-D", alias = "dgp-d", alias = "d")]
    D,
    /// Random coefficients `Y = ε₁ + ε₂X`.
    #[serde(rename = "DGP-P", alias = "dgp-p", alias = "p")]
    P,
    /// `DGP-C` with `β₁ = 0` and `δ = 0`.
    #[serde(rename = "DGP-EXO", alias = "dgp-exo", alias = "exo")]
    Exo,
    /// `Y` constant, design otherwise as `DGP-C`.
    #[serde(rename = "CONSTANT", alias = "constant")]
    Constant,
}

impl DgpName {
    pub fn x_kind(self) -> XKind {
        match self {
            DgpName::D => XKind::Discrete,
            _ => XKind::Continuous,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DgpName::C => "DGP-C",
            DgpName::D => "DGP-D",
            DgpName::P => "DGP-P",
            DgpName::Exo => "DGP-EXO",
            DgpName::Constant => "CONSTANT",
        }
    }

    /// Suggested evaluation point.
    pub fn default_x0(self) -> f64 {
        match self {
            DgpName::D => 1.0,
            _ => 0.5,
        }
    }
}

impl std::str::FromStr for DgpName {
    type Err = AsfError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "DGP-C" | "C" => Ok(DgpName::C),
            "DGP-D" | "D" => Ok(DgpName::D),
            "DGP-P" | "P" => Ok(DgpName::P),
            "DGP-EXO" | "EXO" => Ok(DgpName::Exo),
            "CONSTANT" => Ok(DgpName::Constant),
            _ => Err(AsfError::InvalidArgument(format!("unknown DGP '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpParams {
    pub a0: f64,
    pub a1: f64,
    pub delta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub tau_w: f64,
    pub s: f64,
    /// `ε·X` interaction in `DGP-D`.
    pub c: f64,
    /// Noise scale of the random slope in `DGP-P`.
    pub slope_noise: f64,
    /// Outcome value of the constant design.
    pub level: f64,
}

impl Default for DgpParams {
    fn default() -> Self {
        Self {
            a0: 1.0,
            a1: 1.0,
            delta: 0.5,
            beta1: 0.5,
            beta2: 1.0,
            tau_w: 0.5,
            s: 1.0,
            c: 0.5,
            slope_noise: 0.5,
            level: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub name: DgpName,
    #[serde(default)]
    pub params: DgpParams,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(name: DgpName, n: usize, seed: u64) -> Self {
        Self { name, params: DgpParams::default(), n, seed }
    }

    /// Parameters after the design's own overrides.
    pub fn effective_params(&self) -> DgpParams {
        let mut p = self.params;
        if self.name == DgpName::Exo {
            p.beta1 = 0.0;
            p.delta = 0.0;
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.effective_params();
        if self.n < 10 {
            return Err(AsfError::InvalidArgument(format!("DGP needs n >= 10, got {}", self.n)));
        }
        if !(p.tau_w > 0.0) {
            return Err(AsfError::InvalidArgument("tau_w must be positive".into()));
        }
        if !(p.s > 0.0) {
            return Err(AsfError::InvalidArgument("s must be positive".into()));
        }
        if !(p.slope_noise >= 0.0) {
            return Err(AsfError::InvalidArgument("slope_noise must be non-negative".into()));
        }
        let all = [p.a0, p.a1, p.delta, p.beta1, p.beta2, p.tau_w, p.s, p.c, p.slope_noise, p.level];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(AsfError::InvalidArgument("DGP parameters must be finite".into()));
        }
        Ok(())
    }

    /// Proxy model under which the first stage is correctly specified.
    pub fn proxy_model(&self) -> ProxyModel {
        ProxyModel::linear(1)
    }

    /// `β` of [`Self::proxy_model`] at the truth: location `(0, β₁, β₂)` and
    /// log-scale `ln √(s² + τ_w²)`.
    pub fn true_first_stage(&self) -> Vec<f64> {
        let p = self.effective_params();
        vec![0.0, p.beta1, p.beta2, (p.s * p.s + p.tau_w * p.tau_w).sqrt().ln()]
    }

    /// True control `V = β₁x + β₂z`.
    pub fn control(&self, x: f64, z: f64) -> f64 {
        let p = self.effective_params();
        p.beta1 * x + p.beta2 * z
    }

    /// `E[Y | X = x, ε = e]`.
    pub fn g_bar(&self, x: f64, e: f64) -> f64 {
        let p = self.effective_params();
        match self.name {
            DgpName::C | DgpName::Exo | DgpName::P => p.a0 + e + (p.a1 + p.delta * e) * x,
            DgpName::D => p.a0 + e + p.a1 * x + p.c * e * x,
            DgpName::Constant => p.level,
        }
    }

    /// `m₀(x, v) = E[Y | X = x, V = v]`; every outcome is linear in `ε` and
    /// `E[ε | V = v] = v`.
    pub fn m0(&self, x: f64, v: f64) -> f64 {
        self.g_bar(x, v)
    }

    /// `P(X = 1 | Z = z)` in `DGP-D`.
    pub fn selection_probability(z: f64) -> f64 {
        1.0 / (1.0 + (-z).exp())
    }

    /// Draws the sample. The latent `ε` is returned alongside the dataset.
    pub fn generate_with_latent(&self, rng: &mut ChaCha20Rng) -> Result<(Dataset, Vec<f64>)> {
        self.validate()?;
        let p = self.effective_params();
        let n = self.n;
        let mut y = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n);
        let mut z = Vec::with_capacity(n);
        let mut w = Vec::with_capacity(n);
        let mut eps = Vec::with_capacity(n);
        for _ in 0..n {
            let zi: f64 = StandardNormal.sample(rng);
            let xi = match self.name {
                DgpName::D => f64::from(u8::from(rng.random::<f64>() < Self::selection_probability(zi))),
                _ => StandardNormal.sample(rng),
            };
            let eta: f64 = StandardNormal.sample(rng);
            let xi_w: f64 = StandardNormal.sample(rng);
            let zeta: f64 = StandardNormal.sample(rng);
            let e = p.beta1 * xi + p.beta2 * zi + p.s * eta;
            let yi = match self.name {
                DgpName::P => {
                    let zeta2: f64 = StandardNormal.sample(rng);
                    let e1 = p.a0 + e + zeta;
                    let e2 = p.a1 + p.delta * e + p.slope_noise * zeta2;
                    e1 + e2 * xi
                }
                DgpName::Constant => p.level,
                _ => self.g_bar(xi, e) + zeta,
            };
            y.push(yi);
            x.push(xi);
            z.push(zi);
            w.push(e + p.tau_w * xi_w);
            eps.push(e);
        }
        Ok((Dataset::new(y, x, vec![z], vec![w], self.name.x_kind())?, eps))
    }

    pub fn generate(&self, rng: &mut ChaCha20Rng) -> Result<Dataset> {
        Ok(self.generate_with_latent(rng)?.0)
    }

    /// Draws with a generator seeded from `self.seed`.
    pub fn generate_seeded(&self) -> Result<Dataset> {
        let mut rng = super::seeded_rng(self.seed);
        self.generate(&mut rng)
    }
}
