//! Control-function estimation of average structural functions when the
//! unobserved heterogeneity is only seen through a noisy proxy.

pub mod data;
pub mod error;
pub mod estimate;
pub mod first_stage;
pub mod kernel;
pub mod linalg;
pub mod locpoly;
pub mod nonparametric;
pub mod parametric;
pub mod pipeline;
pub mod quadrature;
pub mod semiparametric;
pub mod simlab;
pub mod stats;
pub mod terms;
pub mod trimming;

pub use data::{Dataset, XKind};
pub use error::{AsfError, Result};
pub use kernel::{KernelFamily, KernelSpec, MultiIndex, MultiIndexBasis};
pub use locpoly::{fit_at, LocPolyConfig, LocPolyFit, SmoothingMode};
pub use first_stage::{fit_mle, Controls, FirstStageFit, InformationKind, ProxyModel};
pub use terms::Term;
pub use estimate::{confidence_interval, AsfEstimate, Rate};
pub use semiparametric::{estimate_asf_continuous, estimate_asf_discrete, variance_continuous, variance_discrete};
pub use trimming::{Interval, TrimmingSet};
pub use parametric::{asf_conditional, asf_unconditional, fit_ols, variance_parametric, KroneckerBasis, ParametricAsfFit};
