//! Gauss–Legendre and Gauss–Hermite rules.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights of an `n`-point rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    /// Applies the rule to `f`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Maps a rule on `[-1, 1]` to `[a, b]`.
    pub fn rescaled(&self, a: f64, b: f64) -> Rule {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        Rule {
            nodes: self.nodes.iter().map(|&x| mid + half * x).collect(),
            weights: self.weights.iter().map(|&w| w * half).collect(),
        }
    }
}

/// `n`-point Gauss–Legendre rule on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Rule { nodes, weights }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// `n`-point Gauss–Hermite rule for the standard normal weight, so that
/// `rule.integrate(f)` approximates `E[f(Z)]` with `Z ~ N(0, 1)`.
///
/// Built with the Golub–Welsch eigenvalue method on the probabilists'
/// Hermite recurrence.
pub fn gauss_hermite_normal(n: usize) -> Rule {
    assert!(n >= 1, "Gauss-Hermite rule needs at least one node");
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let off = (k as f64).sqrt();
        jacobi[(k, k - 1)] = off;
        jacobi[(k - 1, k)] = off;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        let rule = gauss_legendre(5);
        // exact up to degree 9
        for p in 0..10 {
            let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
            let got = rule.integrate(|x| x.powi(p));
            assert!((got - exact).abs() < 1e-14, "degree {p}: {got} vs {exact}");
        }
        assert!((rule.weights.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn legendre_nodes_symmetric_and_sorted() {
        for n in [1, 2, 7, 16, 64] {
            let r = gauss_legendre(n);
            for i in 0..n {
                assert_eq!(r.nodes[i], -r.nodes[n - 1 - i]);
                if i > 0 {
                    assert!(r.nodes[i] > r.nodes[i - 1]);
                }
            }
        }
    }

    #[test]
    fn hermite_matches_normal_moments() {
        let rule = gauss_hermite_normal(20);
        let mut double_fact = 1.0;
        for p in (0..20).step_by(2) {
            if p > 0 {
                double_fact *= (p - 1) as f64;
            }
            let got = rule.integrate(|x| x.powi(p as i32));
            assert!((got - double_fact).abs() < 1e-9 * double_fact, "moment {p}");
        }
        assert!(rule.integrate(|x| x.powi(3)).abs() < 1e-12);
    }

    #[test]
    fn rescaled_rule_integrates_interval() {
        let r = gauss_legendre(8).rescaled(0.0, 3.0);
        assert!((r.integrate(|x| x * x) - 9.0).abs() < 1e-12);
    }
}
