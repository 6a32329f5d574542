//! Basis terms written as small strings: `"1"`, `"x"`, `"z2"`, `"x^2"`,
//! `"x*z1"`, `"x==1"`, `"v"`, `"v2^3"`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{AsfError, Result};

/// A variable a term may depend on. Indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Z(usize),
    V(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FactorKind {
    Power(u32),
    Equals(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Factor {
    pub var: Var,
    pub kind: FactorKind,
}

/// Product of factors; the empty product is the constant `1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Term {
    factors: Vec<Factor>,
}

impl Term {
    pub fn constant() -> Self {
        Self { factors: Vec::new() }
    }

    pub fn power(var: Var, p: u32) -> Self {
        if p == 0 {
            Self::constant()
        } else {
            Self { factors: vec![Factor { var, kind: FactorKind::Power(p) }] }
        }
    }

    pub fn indicator(var: Var, level: f64) -> Self {
        Self { factors: vec![Factor { var, kind: FactorKind::Equals(level) }] }
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn is_constant(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn uses(&self, pred: impl Fn(Var) -> bool) -> bool {
        self.factors.iter().any(|f| pred(f.var))
    }

    pub fn uses_v(&self) -> bool {
        self.uses(|v| matches!(v, Var::V(_)))
    }

    /// Checks that every variable index exists.
    pub fn check_dims(&self, dim_z: usize, dim_v: usize) -> Result<()> {
        for f in &self.factors {
            match f.var {
                Var::Z(k) if k >= dim_z => {
                    return Err(AsfError::InvalidArgument(format!("term '{self}' refers to z{} but only {dim_z} z columns exist", k + 1)))
                }
                Var::V(k) if k >= dim_v => {
                    return Err(AsfError::InvalidArgument(format!("term '{self}' refers to v{} but the control has dimension {dim_v}", k + 1)))
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn lookup(var: Var, x: f64, z: &[f64], v: &[f64]) -> f64 {
        match var {
            Var::X => x,
            Var::Z(k) => z[k],
            Var::V(k) => v[k],
        }
    }

    fn factor_value(f: &Factor, value: f64) -> f64 {
        match f.kind {
            FactorKind::Power(p) => value.powi(p as i32),
            FactorKind::Equals(level) => f64::from(u8::from(value == level)),
        }
    }

    pub fn eval(&self, x: f64, z: &[f64], v: &[f64]) -> f64 {
        self.factors
            .iter()
            .map(|f| Self::factor_value(f, Self::lookup(f.var, x, z, v)))
            .product()
    }

    /// Partial derivative with respect to `var`. Indicator factors are
    /// treated as locally constant.
    pub fn derivative(&self, var: Var, x: f64, z: &[f64], v: &[f64]) -> f64 {
        let mut total = 0.0;
        for (k, f) in self.factors.iter().enumerate() {
            if f.var != var {
                continue;
            }
            let FactorKind::Power(p) = f.kind else { continue };
            let mut term = p as f64 * Self::lookup(var, x, z, v).powi(p as i32 - 1);
            for (m, g) in self.factors.iter().enumerate() {
                if m != k {
                    term *= Self::factor_value(g, Self::lookup(g.var, x, z, v));
                }
            }
            total += term;
        }
        total
    }

    /// Product of two terms.
    pub fn times(&self, other: &Term) -> Term {
        let mut factors = self.factors.clone();
        factors.extend(other.factors.iter().copied());
        Term { factors }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.factors.is_empty() {
            return write!(f, "1");
        }
        for (k, factor) in self.factors.iter().enumerate() {
            if k > 0 {
                write!(f, "*")?;
            }
            match factor.var {
                Var::X => write!(f, "x")?,
                Var::Z(i) => write!(f, "z{}", i + 1)?,
                Var::V(i) => write!(f, "v{}", i + 1)?,
            }
            match factor.kind {
                FactorKind::Power(1) => {}
                FactorKind::Power(p) => write!(f, "^{p}")?,
                FactorKind::Equals(level) => write!(f, "=={level}")?,
            }
        }
        Ok(())
    }
}

fn parse_var(s: &str) -> Result<Var> {
    let bad = || AsfError::InvalidArgument(format!("unknown variable '{s}'"));
    let index = |rest: &str| -> Result<usize> {
        if rest.is_empty() {
            return Ok(0);
        }
        let k: usize = rest.parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(bad());
        }
        Ok(k - 1)
    };
    match s.chars().next() {
        Some('x') if s.len() == 1 => Ok(Var::X),
        Some('z') => Ok(Var::Z(index(&s[1..])?)),
        Some('v') => Ok(Var::V(index(&s[1..])?)),
        _ => Err(bad()),
    }
}

fn parse_factor(s: &str) -> Result<Factor> {
    if let Some((lhs, rhs)) = s.split_once("==") {
        let level: f64 = rhs
            .trim()
            .parse()
            .map_err(|_| AsfError::InvalidArgument(format!("bad level in '{s}'")))?;
        return Ok(Factor { var: parse_var(lhs.trim())?, kind: FactorKind::Equals(level) });
    }
    let (name, power) = match s.split_once('^') {
        Some((name, p)) => {
            let p: u32 = p
                .trim()
                .parse()
                .map_err(|_| AsfError::InvalidArgument(format!("bad exponent in '{s}'")))?;
            (name.trim(), p)
        }
        None => (s, 1),
    };
    if power == 0 {
        return Err(AsfError::InvalidArgument(format!("zero exponent in '{s}'")));
    }
    Ok(Factor { var: parse_var(name)?, kind: FactorKind::Power(power) })
}

impl FromStr for Term {
    type Err = AsfError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "1" {
            return Ok(Term::constant());
        }
        if s.is_empty() {
            return Err(AsfError::InvalidArgument("empty term".into()));
        }
        let factors = s.split('*').map(|f| parse_factor(f.trim())).collect::<Result<Vec<_>>>()?;
        Ok(Term { factors })
    }
}

impl TryFrom<String> for Term {
    type Error = AsfError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Term> for String {
    fn from(t: Term) -> String {
        t.to_string()
    }
}

/// Parses a list of term strings.
pub fn parse_terms<S: AsRef<str>>(items: &[S]) -> Result<Vec<Term>> {
    items.iter().map(|s| s.as_ref().parse()).collect()
}

/// `1, var, var^2, …, var^degree`.
pub fn polynomial_terms(var: Var, degree: u32) -> Vec<Term> {
    (0..=degree).map(|p| Term::power(var, p)).collect()
}
