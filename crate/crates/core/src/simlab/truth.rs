//! Ground-truth ASF values for the reference designs.

use serde::{Deserialize, Serialize};

use super::dgp::{DgpName, DgpSpec};
use crate::quadrature::{gauss_hermite_normal, gauss_legendre, Rule};
use crate::stats::{self, NeumaierSum};
use crate::trimming::{Interval, TrimmingSet};

const OUTER_NODES: usize = 64;
const HERMITE_OUTER: usize = 48;
const INNER_NODES: usize = 24;

/// Conditioning region on `(X, Z)`; `None` leaves a coordinate unrestricted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x: Option<Interval>,
    pub z: Option<Interval>,
}

impl Region {
    pub fn full() -> Self {
        Self::default()
    }

    /// Box between population quantiles of each continuous coordinate. A
    /// binary `X` is left unrestricted.
    pub fn population_box(name: DgpName, lo: f64, hi: f64) -> Self {
        let b = Interval::new(stats::normal_quantile(lo), stats::normal_quantile(hi));
        Self {
            x: match name {
                DgpName::D => None,
                _ => Some(b),
            },
            z: Some(b),
        }
    }

    /// The same region as a sample trimming rule.
    pub fn trimming_set(&self) -> TrimmingSet {
        match (self.x, self.z) {
            (None, None) => TrimmingSet::Full,
            (x, z) => TrimmingSet::Rectangle { x, z: vec![z] },
        }
    }

    pub fn contains(&self, x: f64, z: f64) -> bool {
        self.x.is_none_or(|b| b.contains(x)) && self.z.is_none_or(|b| b.contains(z))
    }
}

/// Rule integrating `E[f(U) 1{U ∈ b}]` for `U ~ N(0, 1)`.
fn normal_rule(bounds: Option<Interval>) -> Rule {
    match bounds {
        None => gauss_hermite_normal(HERMITE_OUTER),
        Some(b) => {
            let r = gauss_legendre(OUTER_NODES).rescaled(b.lo, b.hi);
            Rule {
                weights: r.weights.iter().zip(&r.nodes).map(|(w, u)| w * stats::normal_pdf(*u)).collect(),
                nodes: r.nodes,
            }
        }
    }
}

/// `E[h(X, Z) 1{(X, Z) ∈ region}]` under the design's law of `(X, Z)`.
fn integrate_xz(spec: &DgpSpec, region: &Region, h: impl Fn(f64, f64) -> f64) -> f64 {
    let zr = normal_rule(region.z);
    let mut acc = NeumaierSum::default();
    match spec.name {
        DgpName::D => {
            for (&z, &wz) in zr.nodes.iter().zip(&zr.weights) {
                let p1 = DgpSpec::selection_probability(z);
                for (x, px) in [(0.0, 1.0 - p1), (1.0, p1)] {
                    if region.x.is_none_or(|b| b.contains(x)) {
                        acc.add(wz * px * h(x, z));
                    }
                }
            }
        }
        _ => {
            let xr = normal_rule(region.x);
            for (&x, &wx) in xr.nodes.iter().zip(&xr.weights) {
                for (&z, &wz) in zr.nodes.iter().zip(&zr.weights) {
                    acc.add(wx * wz * h(x, z));
                }
            }
        }
    }
    acc.value()
}

/// `P((X, Z) ∈ region)`.
pub fn region_probability(spec: &DgpSpec, region: &Region) -> f64 {
    integrate_xz(spec, region, |_, _| 1.0)
}

/// `μ(x0) = E[g(x0, ε, ζ) | (X, Z) ∈ region]` by nested Gauss quadrature:
/// Legendre (bounded) or Hermite (unbounded) over `(X, Z)`, Hermite over the
/// Gaussian noise in `ε`.
pub fn true_asf(spec: &DgpSpec, x0: f64, region: &Region) -> f64 {
    let p = spec.effective_params();
    if spec.name == DgpName::Constant {
        return p.level;
    }
    let inner = gauss_hermite_normal(INNER_NODES);
    let num = integrate_xz(spec, region, |x, z| {
        let v = spec.control(x, z);
        inner.integrate(|eta| spec.g_bar(x0, v + p.s * eta))
    });
    num / region_probability(spec, region)
}

/// Monte Carlo version of [`true_asf`]: mean and standard error over
/// `draws` simulated units.
pub fn true_asf_mc(spec: &DgpSpec, x0: f64, region: &Region, draws: usize, seed: u64) -> (f64, f64) {
    let sim = DgpSpec { n: draws.max(10), seed, ..spec.clone() };
    let mut rng = super::seeded_rng(seed);
    let (data, eps) = sim.generate_with_latent(&mut rng).expect("valid design");
    let vals: Vec<f64> = (0..data.n())
        .filter(|&i| region.contains(data.x[i], data.z[0][i]))
        .map(|i| spec.g_bar(x0, eps[i]))
        .collect();
    (stats::mean(&vals), stats::sample_sd(&vals) / (vals.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn untrimmed_linear_design() {
        let spec = DgpSpec::new(DgpName::C, 100, 0);
        let mu = true_asf(&spec, 0.5, &Region::full());
        assert!((mu - 1.5).abs() < 1e-12);
        assert!((region_probability(&spec, &Region::full()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_design() {
        let mut spec = DgpSpec::new(DgpName::Constant, 100, 0);
        spec.params.level = 3.25;
        let r = Region::population_box(DgpName::Constant, 0.05, 0.95);
        assert!((true_asf(&spec, 0.3, &r) - 3.25).abs() < 1e-12);
    }

    #[test]
    fn no_interaction_gives_slope_a1() {
        let mut spec = DgpSpec::new(DgpName::C, 100, 0);
        spec.params.delta = 0.0;
        spec.params.a1 = 0.7;
        let r = Region::population_box(DgpName::C, 0.1, 0.8);
        let (m0, m1) = (true_asf(&spec, 0.0, &r), true_asf(&spec, 1.0, &r));
        assert!((m1 - m0 - 0.7).abs() < 1e-12);
    }

    #[test]
    fn discrete_design_closed_form() {
        let spec = DgpSpec::new(DgpName::D, 100, 0);
        let r = Region::population_box(DgpName::D, 0.05, 0.95);
        // symmetric selection: P(X = 1 | box) = 1/2, E[V | box] = β₁/2
        assert!((true_asf(&spec, 1.0, &r) - 2.375).abs() < 1e-12);
    }
}
