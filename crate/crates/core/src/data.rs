//! Columnar observations `(Y, X, Z, W)` consumed by every estimator.

use serde::{Deserialize, Serialize};

use crate::error::{AsfError, Result};

/// Whether the endogenous regressor is treated as continuous or discrete.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum XKind {
    Continuous,
    Discrete,
}

/// Columns with role metadata. `z` and `w` are stored column-major, one
/// `Vec` per named column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub z_names: Vec<String>,
    pub w_names: Vec<String>,
    pub x_kind: XKind,
}

/// Discreteness threshold used when the caller does not say.
pub const MAX_DISCRETE_LEVELS: usize = 20;

impl Dataset {
    /// Builds a dataset with default column names `z1..`, `w1..`.
    pub fn new(y: Vec<f64>, x: Vec<f64>, z: Vec<Vec<f64>>, w: Vec<Vec<f64>>, x_kind: XKind) -> Result<Self> {
        let z_names = (1..=z.len()).map(|k| format!("z{k}")).collect();
        let w_names = (1..=w.len()).map(|k| format!("w{k}")).collect();
        Self::with_names(y, x, z, w, z_names, w_names, x_kind)
    }

    pub fn with_names(
        y: Vec<f64>,
        x: Vec<f64>,
        z: Vec<Vec<f64>>,
        w: Vec<Vec<f64>>,
        z_names: Vec<String>,
        w_names: Vec<String>,
        x_kind: XKind,
    ) -> Result<Self> {
        let n = y.len();
        if x.len() != n {
            return Err(AsfError::DimensionMismatch { expected: n, got: x.len() });
        }
        if z.is_empty() || w.is_empty() {
            return Err(AsfError::InvalidArgument(
                "at least one z and one w column are required".into(),
            ));
        }
        for col in z.iter().chain(w.iter()) {
            if col.len() != n {
                return Err(AsfError::DimensionMismatch { expected: n, got: col.len() });
            }
        }
        if z_names.len() != z.len() || w_names.len() != w.len() {
            return Err(AsfError::InvalidArgument("column name count mismatch".into()));
        }
        Ok(Self { y, x, z, w, z_names, w_names, x_kind })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn dim_z(&self) -> usize {
        self.z.len()
    }

    /// `z` values of observation `i`.
    pub fn z_row(&self, i: usize) -> Vec<f64> {
        self.z.iter().map(|c| c[i]).collect()
    }

    /// The proxy column used by single-proxy models.
    pub fn proxy(&self, index: usize) -> Result<&[f64]> {
        self.w
            .get(index)
            .map(Vec::as_slice)
            .ok_or_else(|| AsfError::InvalidArgument(format!("no proxy column {index}")))
    }

    /// Returns a copy with rows reordered by `perm` (`out[k] = self[perm[k]]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let pick = |v: &Vec<f64>| perm.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            y: pick(&self.y),
            x: pick(&self.x),
            z: self.z.iter().map(pick).collect(),
            w: self.w.iter().map(pick).collect(),
            z_names: self.z_names.clone(),
            w_names: self.w_names.clone(),
            x_kind: self.x_kind,
        }
    }

    /// Same observations with a transformed outcome.
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(AsfError::DimensionMismatch { expected: self.n(), got: y.len() });
        }
        Ok(Self { y, ..self.clone() })
    }

    /// Keeps the rows where `keep` is true.
    pub fn filter(&self, keep: &[bool]) -> Self {
        let idx: Vec<usize> = (0..self.n()).filter(|&i| keep[i]).collect();
        self.permuted(&idx)
    }
}

/// `true` when a column has at most `max_levels` distinct values.
pub fn looks_discrete(values: &[f64], max_levels: usize) -> bool {
    let mut levels: Vec<f64> = Vec::new();
    for &v in values {
        if !levels.iter().any(|&l| l == v) {
            levels.push(v);
            if levels.len() > max_levels {
                return false;
            }
        }
    }
    true
}

/// Sorted distinct values of a column.
pub fn distinct_levels(values: &[f64]) -> Vec<f64> {
    let mut levels = values.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    levels
}
