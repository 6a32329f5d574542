//! Multivariate local polynomial regression by kernel-weighted least squares.
//!
//! Regressors are centred at the evaluation point and scaled by the
//! bandwidth, so the solved coefficient vector lives on the
//! `b^{|π|}`-scaled scale. [`LocPolyFit::coefficients`] undoes the scaling:
//! the entry for `π` estimates `∂^π m / π!` at the evaluation point.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{AsfError, Result};
use crate::kernel::{KernelSpec, MultiIndexBasis};

/// How the `x` block of the regressor enters the local weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmoothingMode {
    /// Kernel in every coordinate of `(x, v)`.
    ContinuousX,
    /// Exact-match indicator on the `x` block, kernel in `v` only.
    DiscreteX,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocPolyConfig {
    pub degree: u32,
    pub bandwidth: f64,
    pub kernel: KernelSpec,
    /// Ridge added to the local design as a multiple of its mean diagonal.
    pub ridge_epsilon: f64,
    pub mode: SmoothingMode,
    /// Leading regressor coordinates forming the `x` block.
    pub dim_x: usize,
}

/// Default relative ridge, applied only when the plain factorization fails.
pub const DEFAULT_RIDGE: f64 = 1e-12;
/// Squared Cholesky pivots below this fraction of the largest diagonal entry
/// are treated as rank deficiency.
pub const PIVOT_TOLERANCE: f64 = 1e-10;

impl LocPolyConfig {
    pub fn new(degree: u32, bandwidth: f64, mode: SmoothingMode, dim_x: usize) -> Self {
        Self {
            degree,
            bandwidth,
            kernel: KernelSpec::default(),
            ridge_epsilon: DEFAULT_RIDGE,
            mode,
            dim_x,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0) || !self.bandwidth.is_finite() {
            return Err(AsfError::InvalidArgument(format!("bandwidth must be positive, got {}", self.bandwidth)));
        }
        if !(0.0..=1e-8).contains(&self.ridge_epsilon) {
            return Err(AsfError::InvalidArgument("ridge_epsilon must lie in [0, 1e-8]".into()));
        }
        Ok(())
    }

    /// Number of kernel-smoothed coordinates for a regressor of length `dim`.
    pub fn smoothed_dims(&self, dim: usize) -> usize {
        match self.mode {
            SmoothingMode::ContinuousX => dim,
            SmoothingMode::DiscreteX => dim - self.dim_x,
        }
    }

    /// Position of the first `v` coordinate among the smoothed coordinates.
    pub fn v_offset(&self) -> usize {
        match self.mode {
            SmoothingMode::ContinuousX => self.dim_x,
            SmoothingMode::DiscreteX => 0,
        }
    }
}

/// Result of one local fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LocPolyFit {
    coefficients: Vec<f64>,
    scaled: Vec<f64>,
    /// `X'WX / (n b^d)` on the scaled regressors.
    pub s_n: DMatrix<f64>,
    /// First row of `S_n^{-1}`.
    pub e1_s_inv: Vec<f64>,
    pub effective_n: usize,
    pub bandwidth: f64,
    degree: u32,
    v_offset: usize,
    smoothed_dims: usize,
}

impl LocPolyFit {
    /// Coefficients in derivative units (`∂^π m / π!`).
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Coefficients on the bandwidth-scaled regressors.
    pub fn scaled_coefficients(&self) -> &[f64] {
        &self.scaled
    }

    /// Fitted regression value.
    pub fn value(&self) -> f64 {
        self.coefficients[0]
    }

    /// Estimated gradient in the `v` coordinates.
    pub fn gradient_v(&self, basis: &MultiIndexBasis) -> Result<Vec<f64>> {
        if self.degree == 0 {
            return Err(AsfError::DegreeTooLow);
        }
        (self.v_offset..self.smoothed_dims)
            .map(|k| {
                basis
                    .linear_position(k)
                    .map(|p| self.coefficients[p])
                    .ok_or(AsfError::DegreeTooLow)
            })
            .collect()
    }
}

/// Accumulates the kernel-weighted normal equations for a single evaluation
/// point. Callers feed it only the observations that may carry weight.
pub struct LocalSystem<'a> {
    basis: &'a MultiIndexBasis,
    kernel: KernelSpec,
    bandwidth: f64,
    // upper triangle, row-major Q×Q
    gram: Vec<f64>,
    rhs: Vec<f64>,
    t: Vec<f64>,
    u: Vec<f64>,
    effective: usize,
}

impl<'a> LocalSystem<'a> {
    pub fn new(basis: &'a MultiIndexBasis, kernel: KernelSpec, bandwidth: f64) -> Self {
        let q = basis.len();
        Self {
            basis,
            kernel,
            bandwidth,
            gram: vec![0.0; q * q],
            rhs: vec![0.0; q],
            t: vec![0.0; q],
            u: vec![0.0; basis.dim()],
            effective: 0,
        }
    }

    /// Adds an observation whose smoothed regressors sit `offset` away from
    /// the evaluation point (`offset = regressor - eval`, unscaled).
    /// Returns the kernel weight used.
    #[inline]
    pub fn add(&mut self, offset: &[f64], y: f64) -> f64 {
        for (u, &o) in self.u.iter_mut().zip(offset) {
            *u = o / self.bandwidth;
        }
        let w = self.kernel.product(&self.u);
        if w == 0.0 {
            return 0.0;
        }
        self.effective += 1;
        self.basis.evaluate_into(&self.u, &mut self.t);
        let q = self.t.len();
        for i in 0..q {
            let wti = w * self.t[i];
            self.rhs[i] += wti * y;
            for j in i..q {
                self.gram[i * q + j] += wti * self.t[j];
            }
        }
        w
    }

    pub fn effective_n(&self) -> usize {
        self.effective
    }

    /// Solves `S_n β = X'Wy / (n b^d)` where `n` is the full sample size.
    pub fn solve(self, n_total: usize, degree: u32, ridge_epsilon: f64, v_offset: usize) -> Result<LocPolyFit> {
        let q = self.basis.len();
        if self.effective < q {
            return Err(AsfError::InsufficientLocalData { effective_n: self.effective, required: q });
        }
        let d = self.basis.dim() as i32;
        let scale = 1.0 / (n_total as f64 * self.bandwidth.powi(d));
        let mut s = DMatrix::zeros(q, q);
        for i in 0..q {
            for j in i..q {
                let v = self.gram[i * q + j] * scale;
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        let rhs = DVector::from_iterator(q, self.rhs.iter().map(|v| v * scale));
        let mean_diag = s.diagonal().mean();
        let max_diag = s.diagonal().max();
        let factor = |eps: f64| {
            let mut m = s.clone();
            for i in 0..q {
                m[(i, i)] += eps * mean_diag;
            }
            let chol = Cholesky::new(m).ok_or(AsfError::SingularDesign { pivot_ratio: 0.0 })?;
            let min_pivot = chol.l_dirty().diagonal().iter().map(|p| p * p).fold(f64::INFINITY, f64::min);
            let pivot_ratio = min_pivot / max_diag;
            if pivot_ratio > PIVOT_TOLERANCE {
                Ok(chol)
            } else {
                Err(AsfError::SingularDesign { pivot_ratio })
            }
        };
        // the ridge is a fallback so well-posed fits reproduce polynomials exactly
        let chol = match factor(0.0) {
            Ok(c) => c,
            Err(e) if ridge_epsilon > 0.0 => factor(ridge_epsilon).map_err(|_| e)?,
            Err(e) => return Err(e),
        };
        let scaled = chol.solve(&rhs);
        let mut e1 = DVector::zeros(q);
        e1[0] = 1.0;
        let e1_s_inv = chol.solve(&e1);
        let coefficients = scaled
            .iter()
            .zip(self.basis.indices())
            .map(|(c, p)| c / self.bandwidth.powi(p.order() as i32))
            .collect();
        Ok(LocPolyFit {
            coefficients,
            scaled: scaled.iter().copied().collect(),
            s_n: s,
            e1_s_inv: e1_s_inv.iter().copied().collect(),
            effective_n: self.effective,
            bandwidth: self.bandwidth,
            degree,
            v_offset,
            smoothed_dims: self.basis.dim(),
        })
    }
}

/// Local polynomial fit at `eval` from `(regressor, response)` pairs.
///
/// In [`SmoothingMode::DiscreteX`] the first `dim_x` regressor coordinates
/// must match `eval` exactly for an observation to carry weight.
pub fn fit_at(points: &[(Vec<f64>, f64)], eval: &[f64], config: &LocPolyConfig) -> Result<LocPolyFit> {
    config.validate()?;
    let dim = eval.len();
    if config.dim_x > dim {
        return Err(AsfError::DimensionMismatch { expected: dim, got: config.dim_x });
    }
    let smoothed = config.smoothed_dims(dim);
    if smoothed == 0 {
        return Err(AsfError::InvalidArgument("no smoothed coordinates".into()));
    }
    let basis = MultiIndexBasis::enumerate(smoothed, config.degree)?;
    let first_smoothed = dim - smoothed;
    let mut system = LocalSystem::new(&basis, config.kernel, config.bandwidth);
    let mut offset = vec![0.0; smoothed];
    for (regressor, y) in points {
        if regressor.len() != dim {
            return Err(AsfError::DimensionMismatch { expected: dim, got: regressor.len() });
        }
        if regressor[..first_smoothed] != eval[..first_smoothed] {
            continue;
        }
        for k in 0..smoothed {
            offset[k] = regressor[first_smoothed + k] - eval[first_smoothed + k];
        }
        system.add(&offset, *y);
    }
    system.solve(points.len(), config.degree, config.ridge_epsilon, config.v_offset())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cont(q: u32, b: f64, dim_x: usize) -> LocPolyConfig {
        LocPolyConfig::new(q, b, SmoothingMode::ContinuousX, dim_x)
    }

    #[test]
    fn reproduces_linear_surface() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<(Vec<f64>, f64)> = (0..60)
            .map(|_| {
                let x: f64 = rng.random_range(-1.0..1.0);
                let v: f64 = rng.random_range(-1.0..1.0);
                (vec![x, v], 2.0 + 3.0 * x - v)
            })
            .collect();
        let fit = fit_at(&pts, &[0.1, -0.2], &cont(1, 0.8, 1)).unwrap();
        assert!((fit.value() - (2.0 + 0.3 + 0.2)).abs() < 1e-8);
        let g = fit.gradient_v(&MultiIndexBasis::enumerate(2, 1).unwrap()).unwrap();
        assert!((g[0] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn degree_zero_is_weighted_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<(Vec<f64>, f64)> = (0..40)
            .map(|_| (vec![rng.random_range(-1.0..1.0)], rng.random_range(0.0..1.0)))
            .collect();
        let k = KernelSpec::triweight();
        let b = 0.7;
        let eval = 0.15;
        let (mut num, mut den) = (0.0, 0.0);
        for (r, y) in &pts {
            let w = k.eval((r[0] - eval) / b);
            num += w * y;
            den += w;
        }
        let mut cfg = cont(0, b, 0);
        cfg.ridge_epsilon = 0.0;
        let fit = fit_at(&pts, &[eval], &cfg).unwrap();
        assert!((fit.value() - num / den).abs() < 1e-12);
        assert!(matches!(
            fit.gradient_v(&MultiIndexBasis::enumerate(1, 0).unwrap()),
            Err(AsfError::DegreeTooLow)
        ));
    }

    #[test]
    fn gradient_of_linear_in_v() {
        let pts: Vec<(Vec<f64>, f64)> = (0..21).map(|i| {
            let v = -1.0 + 0.1 * i as f64;
            (vec![v], 5.0 - 2.0 * v)
        }).collect();
        let fit = fit_at(&pts, &[0.05], &cont(1, 0.5, 0)).unwrap();
        let g = fit.gradient_v(&MultiIndexBasis::enumerate(1, 1).unwrap()).unwrap();
        assert!((g[0] + 2.0).abs() < 1e-8);
    }

    #[test]
    fn constant_data() {
        let pts: Vec<(Vec<f64>, f64)> = (0..30).map(|i| (vec![i as f64 / 30.0, (i % 7) as f64 / 7.0], 4.25)).collect();
        let fit = fit_at(&pts, &[0.5, 0.5], &cont(1, 0.6, 1)).unwrap();
        assert!((fit.value() - 4.25).abs() < 1e-10);
        let g = fit.gradient_v(&MultiIndexBasis::enumerate(2, 1).unwrap()).unwrap();
        assert!(g[0].abs() < 1e-10);
        assert_eq!(fit.coefficients()[0], fit.value());
    }

    #[test]
    fn insufficient_and_singular() {
        let pts = vec![(vec![0.0], 1.0), (vec![5.0], 2.0)];
        assert!(matches!(
            fit_at(&pts, &[0.0], &cont(1, 1.0, 0)),
            Err(AsfError::InsufficientLocalData { effective_n: 1, required: 2 })
        ));
        // three points on a line in 2-D: rank 2 < Q = 3
        let pts = vec![(vec![0.0, 0.0], 1.0), (vec![0.1, 0.1], 2.0), (vec![-0.1, -0.1], 0.5)];
        assert!(matches!(fit_at(&pts, &[0.0, 0.0], &cont(1, 1.0, 1)), Err(AsfError::SingularDesign { .. })));
    }

    #[test]
    fn discrete_mode_uses_exact_match() {
        let mut pts = Vec::new();
        for i in 0..30 {
            let v = -1.0 + i as f64 / 15.0;
            pts.push((vec![1.0, v], 1.0 + v));
            pts.push((vec![0.0, v], 100.0 - v));
        }
        let cfg = LocPolyConfig::new(1, 0.5, SmoothingMode::DiscreteX, 1);
        let fit = fit_at(&pts, &[1.0, 0.2], &cfg).unwrap();
        assert!((fit.value() - 1.2).abs() < 1e-10);
        assert_eq!(fit.effective_n, fit_at(&pts[..], &[1.0, 0.2], &cfg).unwrap().effective_n);
    }

    #[test]
    fn rejects_bad_bandwidth() {
        let pts = vec![(vec![0.0], 1.0)];
        assert!(fit_at(&pts, &[0.0], &cont(0, 0.0, 0)).is_err());
    }
}
