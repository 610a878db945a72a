use serde::Serialize;

use super::dea::solve_dea;
use super::model::fit_frontier;
use super::{DirectionVector, Estimator, ModelError, Technology, Weights};
use crate::dataset::Dataset;
use crate::exec::{self, Execution};
use crate::qp::SolveOptions;

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceRow {
    pub dmu: usize,
    pub dea_objective: f64,
    pub cnls_residual: f64,
    pub discrepancy: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub technology: Technology,
    pub tol: f64,
    pub rows: Vec<EquivalenceRow>,
}

impl EquivalenceReport {
    pub fn max_discrepancy(&self) -> f64 {
        self.rows.iter().map(|r| r.discrepancy).fold(0.0, f64::max)
    }

    pub fn all_within_tol(&self) -> bool {
        self.rows.iter().all(|r| !r.flagged)
    }
}

/// Solves the DEA program once per DMU and the sign-constrained CNLS model
/// once, and compares the optimal DEA value of each DMU with its residual.
pub fn equivalence_check(
    d: &Dataset,
    tech: Technology,
    g: &DirectionVector,
    wts: &Weights,
    tol: f64,
    opts: &SolveOptions,
    exec: Execution,
) -> Result<EquivalenceReport, ModelError> {
    if tech == Technology::WeakGDisposability {
        return Err(ModelError::UnsupportedTechnology(tech));
    }
    let fit = fit_frontier(d, tech, Estimator::Cnls, g, None, wts, opts)?;
    let scores = exec::try_map(exec, 0..d.n_dmu(), |o| solve_dea(d, o, tech, g, wts, opts))?;
    let rows = scores
        .into_iter()
        .zip(fit.residuals())
        .map(|(s, eps)| {
            let discrepancy = (s.objective - eps).abs();
            EquivalenceRow {
                dmu: s.dmu,
                dea_objective: s.objective,
                cnls_residual: eps,
                discrepancy,
                flagged: discrepancy > tol,
            }
        })
        .collect();
    Ok(EquivalenceReport { technology: tech, tol, rows })
}
