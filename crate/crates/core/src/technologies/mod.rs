//! Constraint builders for the three emission-generating technologies.
//!
//! Each technology has a full-frontier least-squares model (sign-constrained
//! CNLS), an asymmetric expectile variant (CER) and, for by-production and
//! joint disposability, a DEA linear program whose optimal value coincides
//! with the CNLS residual of the evaluated unit.

mod dea;
mod equivalence;
mod fit;
mod model;

pub use dea::{build_dea, solve_dea, DeaModel, DeaScore};
pub use equivalence::{equivalence_check, EquivalenceReport, EquivalenceRow};
pub use fit::{DmuFit, FrontierFit, Residual};
pub use model::{build_cer, build_cnls, fit_frontier, groups, Estimator, FrontierModel, COEF_RIDGE};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qp::QpError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("weak G-disposability needs emission factors")]
    MissingEmissionFactors,
    #[error("quantile {0} outside (0, 1)")]
    InvalidTau(f64),
    #[error("invalid direction vector: {0}")]
    InvalidDirection(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("{0} has no DEA formulation here")]
    UnsupportedTechnology(Technology),
    #[error("DMU index {0} out of range")]
    InvalidDmu(usize),
    #[error("solver reported {0:?}")]
    NotOptimal(crate::qp::Status),
    #[error(transparent)]
    Qp(#[from] QpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Technology {
    /// By-production: intersection of an economic and an environmental
    /// sub-technology.
    #[serde(rename = "bp", alias = "BP")]
    ByProduction,
    /// Joint disposability with a single intensity vector.
    #[serde(rename = "jd", alias = "JD")]
    JointDisposability,
    /// Weak G-disposability (material-balance summing-up condition).
    #[serde(rename = "wgd", alias = "WGD")]
    WeakGDisposability,
}

impl Technology {
    pub const ALL: [Technology; 3] =
        [Technology::ByProduction, Technology::JointDisposability, Technology::WeakGDisposability];

    pub fn short(self) -> &'static str {
        match self {
            Technology::ByProduction => "BP",
            Technology::JointDisposability => "JD",
            Technology::WeakGDisposability => "WGD",
        }
    }
}

impl std::fmt::Display for Technology {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.short())
    }
}

impl std::str::FromStr for Technology {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "bp" => Ok(Technology::ByProduction),
            "jd" => Ok(Technology::JointDisposability),
            "wgd" => Ok(Technology::WeakGDisposability),
            other => Err(format!("unknown technology '{other}' (expected bp, jd or wgd)")),
        }
    }
}

/// Weights on the proportionate changes of the emission-generating input,
/// the desirable output and the undesirable output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub input: f64,
    pub desirable: f64,
    pub undesirable: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self { input: 0.0, desirable: 0.5, undesirable: 0.5 }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<(), ModelError> {
        let w = [self.input, self.desirable, self.undesirable];
        if w.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(ModelError::InvalidWeights(format!("{w:?} not in [0, 1]")));
        }
        if w.iter().sum::<f64>() <= 0.0 {
            return Err(ModelError::InvalidWeights("weights sum to zero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionVector {
    pub g_x: Vec<f64>,
    pub g_y: Vec<f64>,
    pub g_b: Vec<f64>,
}

impl DirectionVector {
    pub fn new(g_x: Vec<f64>, g_y: Vec<f64>, g_b: Vec<f64>) -> Result<Self, ModelError> {
        let g = Self { g_x, g_y, g_b };
        g.validate()?;
        Ok(g)
    }

    /// The all-ones direction used by weak G-disposability.
    pub fn ones(m2: usize, j: usize, k: usize) -> Self {
        Self { g_x: vec![1.0; m2], g_y: vec![1.0; j], g_b: vec![1.0; k] }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let all = self.g_x.iter().chain(&self.g_y).chain(&self.g_b);
        if all.clone().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ModelError::InvalidDirection("components must be finite and non-negative".into()));
        }
        if all.clone().all(|v| *v == 0.0) {
            return Err(ModelError::InvalidDirection("all components are zero".into()));
        }
        Ok(())
    }

    pub(crate) fn check_dims(&self, d: &crate::dataset::Dims) -> Result<(), ModelError> {
        if self.g_x.len() != d.m2 || self.g_y.len() != d.j || self.g_b.len() != d.k {
            return Err(ModelError::DimensionMismatch(format!(
                "direction has ({}, {}, {}) components for data with M2={}, J={}, K={}",
                self.g_x.len(),
                self.g_y.len(),
                self.g_b.len(),
                d.m2,
                d.j,
                d.k
            )));
        }
        Ok(())
    }
}
