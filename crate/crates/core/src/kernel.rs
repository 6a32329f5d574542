//! Kernels, multi-index bookkeeping and kernel moment matrices.
//!
//! Multi-indices are ordered first by total degree and then, within a
//! degree, by comparing entries from the last position backwards with the
//! larger entry first. For `d = 2, q = 2` this gives
//! `(0,0), (0,1), (1,0), (0,2), (1,1), (2,0)`.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{AsfError, Result};
use crate::quadrature::{gauss_legendre, Rule};

/// A `d`-tuple of non-negative exponents.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(entries: Vec<u32>) -> Self {
        Self(entries)
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Total degree `|π|`.
    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }

    /// `π! = π_1! ⋯ π_d!`
    pub fn factorial(&self) -> f64 {
        self.0
            .iter()
            .map(|&p| (1..=p).map(f64::from).product::<f64>())
            .product()
    }

    /// `u^π = Π_j u_j^{π_j}`.
    pub fn monomial(&self, u: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(u)
            .map(|(&p, &x)| if p == 0 { 1.0 } else { x.powi(p as i32) })
            .product()
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, p) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, ")")
    }
}

/// All multi-indices of dimension `d` and total degree at most `q`, in the
/// order used for local-polynomial coefficient vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiIndexBasis {
    dim: usize,
    max_degree: u32,
    indices: Vec<MultiIndex>,
}

/// Number of `d`-tuples with total degree exactly `k`: `C(d+k-1, d-1)`.
pub fn count_of_degree(d: usize, k: u32) -> usize {
    binomial(d + k as usize - 1, d - 1)
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

impl MultiIndexBasis {
    /// Enumerates every `d`-tuple with `|π| ≤ q`.
    pub fn enumerate(d: usize, q: u32) -> Result<Self> {
        if d == 0 {
            return Err(AsfError::InvalidArgument("multi-index dimension must be at least 1".into()));
        }
        let mut indices = Vec::new();
        for k in 0..=q {
            let mut buf = Vec::with_capacity(d);
            of_degree(d, k, &mut buf, &mut indices);
        }
        Ok(Self { dim: d, max_degree: q, indices })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_degree(&self) -> u32 {
        self.max_degree
    }

    /// `Q`, the number of coefficients.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn get(&self, i: usize) -> &MultiIndex {
        &self.indices[i]
    }

    /// Position of the degree-one index on coordinate `coord`.
    pub fn linear_position(&self, coord: usize) -> Option<usize> {
        self.indices.iter().position(|p| {
            p.order() == 1 && p.entries()[coord] == 1
        })
    }

    /// `t(u) = [u^{π(1)}, …, u^{π(Q)}]`.
    pub fn evaluate(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.dim {
            return Err(AsfError::DimensionMismatch { expected: self.dim, got: u.len() });
        }
        let mut out = vec![0.0; self.len()];
        self.evaluate_into(u, &mut out);
        Ok(out)
    }

    /// Unchecked variant of [`evaluate`](Self::evaluate) writing into `out`.
    pub fn evaluate_into(&self, u: &[f64], out: &mut [f64]) {
        for (slot, p) in out.iter_mut().zip(&self.indices) {
            *slot = p.monomial(u);
        }
    }

    /// Jacobian of `t(u)`: row `i` holds `∂u^{π(i)}/∂u'`.
    pub fn jacobian(&self, u: &[f64]) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.len(), self.dim);
        for (i, p) in self.indices.iter().enumerate() {
            for k in 0..self.dim {
                let e = p.entries()[k];
                if e == 0 {
                    continue;
                }
                let mut val = f64::from(e) * if e == 1 { 1.0 } else { u[k].powi(e as i32 - 1) };
                for (l, (&el, &ul)) in p.entries().iter().zip(u).enumerate() {
                    if l != k && el > 0 {
                        val *= ul.powi(el as i32);
                    }
                }
                jac[(i, k)] = val;
            }
        }
        jac
    }
}

// Appends all tuples of length `d` with sum `k`, last entry descending.
fn of_degree(d: usize, k: u32, suffix: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
    if d == 1 {
        let mut entries = Vec::with_capacity(suffix.len() + 1);
        entries.push(k);
        entries.extend(suffix.iter().rev());
        out.push(MultiIndex(entries));
        return;
    }
    for last in (0..=k).rev() {
        suffix.push(last);
        of_degree(d - 1, k - last, suffix, out);
        suffix.pop();
    }
}

/// Supported univariate kernels. Both are even, non-negative, supported on
/// `[-1, 1]` and twice continuously differentiable on the real line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    /// `35/32 (1 - u²)³`
    #[default]
    Triweight,
    /// `70/81 (1 - |u|³)³`
    Tricube,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct KernelSpec {
    pub family: KernelFamily,
}

impl KernelSpec {
    pub const fn triweight() -> Self {
        Self { family: KernelFamily::Triweight }
    }

    pub const fn tricube() -> Self {
        Self { family: KernelFamily::Tricube }
    }

    pub fn support_radius(&self) -> f64 {
        1.0
    }

    pub fn normalization(&self) -> f64 {
        match self.family {
            KernelFamily::Triweight => 35.0 / 32.0,
            KernelFamily::Tricube => 70.0 / 81.0,
        }
    }

    /// `K(u)`.
    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        let a = u.abs();
        if a >= 1.0 {
            return 0.0;
        }
        match self.family {
            KernelFamily::Triweight => {
                let t = 1.0 - u * u;
                self.normalization() * t * t * t
            }
            KernelFamily::Tricube => {
                let t = 1.0 - a * a * a;
                self.normalization() * t * t * t
            }
        }
    }

    /// `K'(u)`.
    #[inline]
    pub fn derivative(&self, u: f64) -> f64 {
        let a = u.abs();
        if a >= 1.0 {
            return 0.0;
        }
        match self.family {
            KernelFamily::Triweight => {
                let t = 1.0 - u * u;
                -6.0 * self.normalization() * u * t * t
            }
            KernelFamily::Tricube => {
                let t = 1.0 - a * a * a;
                -9.0 * self.normalization() * u * a * t * t
            }
        }
    }

    /// Product kernel `Π_k K(u_k)`.
    #[inline]
    pub fn product(&self, u: &[f64]) -> f64 {
        let mut w = 1.0;
        for &x in u {
            w *= self.eval(x);
            if w == 0.0 {
                return 0.0;
            }
        }
        w
    }

    /// `∫ u^m K(u)^power du`, integrated piecewise on `[-1,0]` and `[0,1]`
    /// where both kernels are polynomials.
    pub fn moment(&self, m: u32, power: i32, nodes: usize) -> f64 {
        let rule = gauss_legendre(nodes);
        self.moment_with(&rule, m, power)
    }

    fn moment_with(&self, rule: &Rule, m: u32, power: i32) -> f64 {
        let f = |u: f64| u.powi(m as i32) * self.eval(u).powi(power);
        rule.rescaled(-1.0, 0.0).integrate(f) + rule.rescaled(0.0, 1.0).integrate(f)
    }

    /// Ratio of this kernel's canonical bandwidth `(R(K)/μ₂²)^{1/5}` to the
    /// Gaussian one. Multiplying a Gaussian rule-of-thumb bandwidth by this
    /// factor gives the equivalent bandwidth for this kernel.
    pub fn gaussian_equivalence_factor(&self) -> f64 {
        let roughness = self.moment(0, 2, 32);
        let mu2 = self.moment(2, 1, 32);
        let canonical = (roughness / (mu2 * mu2)).powf(0.2);
        let gaussian = (1.0 / (2.0 * std::f64::consts::PI.sqrt())).powf(0.2);
        canonical / gaussian
    }
}

/// `κ(u) = t(u) Π_k K(u_k)`.
pub fn kappa(basis: &MultiIndexBasis, kernel: &KernelSpec, u: &[f64]) -> Vec<f64> {
    let k = kernel.product(u);
    let mut t = vec![0.0; basis.len()];
    if k != 0.0 {
        basis.evaluate_into(u, &mut t);
        for v in &mut t {
            *v *= k;
        }
    }
    t
}

/// `∂κ(u)/∂u'`, a `Q × d` matrix.
pub fn kappa_jacobian(basis: &MultiIndexBasis, kernel: &KernelSpec, u: &[f64]) -> DMatrix<f64> {
    let d = u.len();
    let q = basis.len();
    let kvals: Vec<f64> = u.iter().map(|&x| kernel.eval(x)).collect();
    let kders: Vec<f64> = u.iter().map(|&x| kernel.derivative(x)).collect();
    let prod: f64 = kvals.iter().product();
    let mut out = basis.jacobian(u) * prod;
    let mut t = vec![0.0; q];
    basis.evaluate_into(u, &mut t);
    for k in 0..d {
        if kders[k] == 0.0 {
            continue;
        }
        let others: f64 = (0..d).filter(|&l| l != k).map(|l| kvals[l]).product();
        let scale = kders[k] * others;
        for i in 0..q {
            out[(i, k)] += t[i] * scale;
        }
    }
    out
}

/// `ℓ'κ(u)`, with `ℓ'∂κ(u)/∂u_k` written to `grad`. Allocation free;
/// `t_buf` needs length `Q`.
pub fn ell_kappa_with_gradient(basis: &MultiIndexBasis, kernel: &KernelSpec, ell: &[f64], u: &[f64], t_buf: &mut [f64], grad: &mut [f64]) -> f64 {
    let d = u.len();
    let mut prod = 1.0;
    for &x in u {
        prod *= kernel.eval(x);
    }
    basis.evaluate_into(u, t_buf);
    let tval: f64 = ell.iter().zip(t_buf.iter()).map(|(a, b)| a * b).sum();
    for k in 0..d {
        let mut dt = 0.0;
        for (i, p) in basis.indices().iter().enumerate() {
            let e = p.entries()[k];
            if e == 0 || ell[i] == 0.0 {
                continue;
            }
            let mut val = f64::from(e) * if e == 1 { 1.0 } else { u[k].powi(e as i32 - 1) };
            for (l, (&el, &ul)) in p.entries().iter().zip(u).enumerate() {
                if l != k && el > 0 {
                    val *= ul.powi(el as i32);
                }
            }
            dt += ell[i] * val;
        }
        let kd = kernel.derivative(u[k]);
        let others = if kd == 0.0 { 0.0 } else { (0..d).filter(|&l| l != k).map(|l| kernel.eval(u[l])).product() };
        grad[k] = prod * dt + tval * kd * others;
    }
    prod * tval
}

/// Kernel moment matrices for a product kernel over `dim_x + dim_v`
/// coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMatrices {
    /// `S0[i,j] = ∫ u^{π(i)+π(j)} Π K(u_k) du`
    pub s0: DMatrix<f64>,
    /// `M[i,j] = ∫ [u1,u2]^{π(i)} [u1,ũ2]^{π(j)} K²(u1) K(u2) K(ũ2)`
    pub m: DMatrix<f64>,
    pub dim_x: usize,
    pub dim_v: usize,
    /// Gauss–Legendre nodes per half-interval used for the returned values.
    pub nodes: usize,
    pub rule: &'static str,
}

/// Maximum change tolerated under node doubling.
pub const MOMENT_DOUBLING_TOLERANCE: f64 = 1e-6;

pub fn compute_moment_matrices(
    kernel: &KernelSpec,
    dim_x: usize,
    dim_v: usize,
    q: u32,
    nodes: usize,
) -> Result<MomentMatrices> {
    if dim_x + dim_v == 0 {
        return Err(AsfError::InvalidArgument("moment matrices need at least one coordinate".into()));
    }
    if nodes < 16 {
        return Err(AsfError::InvalidArgument("at least 16 quadrature nodes are required".into()));
    }
    let basis = MultiIndexBasis::enumerate(dim_x + dim_v, q)?;
    let coarse = moment_matrices_with(kernel, &basis, dim_x, q, nodes);
    let fine = moment_matrices_with(kernel, &basis, dim_x, q, 2 * nodes);
    let change = coarse
        .0
        .iter()
        .zip(fine.0.iter())
        .chain(coarse.1.iter().zip(fine.1.iter()))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if change > MOMENT_DOUBLING_TOLERANCE {
        return Err(AsfError::QuadratureNonConvergence { change });
    }
    Ok(MomentMatrices {
        s0: fine.0,
        m: fine.1,
        dim_x,
        dim_v,
        nodes: 2 * nodes,
        rule: "tensor Gauss-Legendre",
    })
}

// The tensor rule applied to a product integrand factorises into products
// of one-dimensional rules, so the tables below are the tensor rule exactly.
fn moment_matrices_with(
    kernel: &KernelSpec,
    basis: &MultiIndexBasis,
    dim_x: usize,
    q: u32,
    nodes: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let rule = gauss_legendre(nodes);
    let top = 2 * q + 1;
    let mu: Vec<f64> = (0..=top).map(|m| kernel.moment_with(&rule, m, 1)).collect();
    let nu: Vec<f64> = (0..=top).map(|m| kernel.moment_with(&rule, m, 2)).collect();
    let qn = basis.len();
    let d = basis.dim();
    let mut s0 = DMatrix::zeros(qn, qn);
    let mut m = DMatrix::zeros(qn, qn);
    for i in 0..qn {
        let pi = basis.get(i).entries();
        for j in 0..qn {
            let pj = basis.get(j).entries();
            let mut s = 1.0;
            let mut mm = 1.0;
            for k in 0..d {
                s *= mu[(pi[k] + pj[k]) as usize];
                if k < dim_x {
                    mm *= nu[(pi[k] + pj[k]) as usize];
                } else {
                    mm *= mu[pi[k] as usize] * mu[pj[k] as usize];
                }
            }
            s0[(i, j)] = s;
            m[(i, j)] = mm;
        }
    }
    (s0, m)
}
