//! Conditioning sets on `(X, Z)` and their indicators `Tᵢ`.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, XKind};
use crate::error::{AsfError, Result};
use crate::stats;

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }
}

/// The trimming region. A discrete `X` is never quantile-trimmed: every
/// level stays in the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrimmingSet {
    Full,
    /// Per-column sample quantile box.
    QuantileBox { lo: f64, hi: f64 },
    /// Explicit bounds; `None` leaves a column unrestricted.
    Rectangle {
        #[serde(default)]
        x: Option<Interval>,
        #[serde(default)]
        z: Vec<Option<Interval>>,
    },
}

impl Default for TrimmingSet {
    fn default() -> Self {
        TrimmingSet::QuantileBox { lo: 0.05, hi: 0.95 }
    }
}

/// Bounds a trimming set resolves to on a particular sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedBox {
    pub x: Option<Interval>,
    pub z: Vec<Option<Interval>>,
}

impl ResolvedBox {
    pub fn contains(&self, x: f64, z: &[f64]) -> bool {
        self.x.is_none_or(|b| b.contains(x))
            && self.z.iter().zip(z).all(|(b, &v)| b.is_none_or(|b| b.contains(v)))
    }
}

impl TrimmingSet {
    pub fn validate(&self) -> Result<()> {
        match self {
            TrimmingSet::QuantileBox { lo, hi } if !(0.0 <= *lo && lo < hi && *hi <= 1.0) => {
                Err(AsfError::InvalidArgument(format!("quantile box needs 0 <= lo < hi <= 1, got [{lo}, {hi}]")))
            }
            TrimmingSet::Rectangle { x, z } => {
                for b in x.iter().chain(z.iter().flatten()) {
                    if !(b.lo <= b.hi) {
                        return Err(AsfError::InvalidArgument("rectangle bound with lo > hi".into()));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn resolve(&self, data: &Dataset) -> Result<ResolvedBox> {
        self.validate()?;
        Ok(match self {
            TrimmingSet::Full => ResolvedBox { x: None, z: vec![None; data.dim_z()] },
            TrimmingSet::QuantileBox { lo, hi } => {
                let bounds = |col: &[f64]| {
                    let mut s = col.to_vec();
                    s.sort_by(f64::total_cmp);
                    Some(Interval::new(stats::quantile_sorted(&s, *lo), stats::quantile_sorted(&s, *hi)))
                };
                ResolvedBox {
                    x: match data.x_kind {
                        XKind::Continuous => bounds(&data.x),
                        XKind::Discrete => None,
                    },
                    z: data.z.iter().map(|c| bounds(c)).collect(),
                }
            }
            TrimmingSet::Rectangle { x, z } => {
                if z.len() > data.dim_z() {
                    return Err(AsfError::DimensionMismatch { expected: data.dim_z(), got: z.len() });
                }
                let mut zb = z.clone();
                zb.resize(data.dim_z(), None);
                ResolvedBox { x: *x, z: zb }
            }
        })
    }

    /// `Tᵢ` for every observation. Errors when the set is empty.
    pub fn indicators(&self, data: &Dataset) -> Result<Vec<bool>> {
        let b = self.resolve(data)?;
        let mut z = vec![0.0; data.dim_z()];
        let t: Vec<bool> = (0..data.n())
            .map(|i| {
                for (k, col) in data.z.iter().enumerate() {
                    z[k] = col[i];
                }
                b.contains(data.x[i], &z)
            })
            .collect();
        if !t.iter().any(|&v| v) {
            return Err(AsfError::EmptyTrim);
        }
        Ok(t)
    }
}
