//! Simulation scenarios, true quantile frontiers and RMSE scoring.

mod dgp;
mod rmse;

pub use dgp::{
    generate, half_normal, quantile_factor, s1_frontier, s2_frontier, true_quantile, DgpConfig, Scenario,
    SimulatedSample, TrueQuantile, EMISSION_COEF, INPUT_RANGE, S2_EMISSION_PENALTY,
};
pub use rmse::{exp_rmse, pro_rmse, rmse};

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::EmissionFactors;
use crate::direction::direction_for;
use crate::exec::{self, Execution};
use crate::qp::SolveOptions;
use crate::shadow::COEF_FLOOR;
use crate::technologies::{fit_frontier, Estimator, Technology, Weights};

#[derive(Debug, Error, PartialEq)]
pub enum McError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("quantile {0} outside (0, 1)")]
    InvalidTau(f64),
    #[error("replication mismatch: {0}")]
    ReplicationMismatch(String),
    #[error("emission-adjusted input stayed non-positive in replication {rep}")]
    NonPositiveBase { rep: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub scenarios: Vec<Scenario>,
    pub sigmas: Vec<f64>,
    pub technologies: Vec<Technology>,
    /// Score the full-frontier estimator (Pro-RMSE).
    pub full_frontier: bool,
    /// Expectile levels scored with Exp-RMSE.
    pub taus: Vec<f64>,
    pub n_dmu: usize,
    pub n_reps: usize,
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), McError> {
        if self.scenarios.is_empty() || self.sigmas.is_empty() || self.technologies.is_empty() {
            return Err(McError::InvalidConfig("empty scenario, sigma or technology list".into()));
        }
        if !self.full_frontier && self.taus.is_empty() {
            return Err(McError::InvalidConfig("no estimator requested".into()));
        }
        if let Some(&t) = self.taus.iter().find(|&&t| !(t > 0.0 && t < 1.0)) {
            return Err(McError::InvalidTau(t));
        }
        for &sigma in &self.sigmas {
            self.dgp(Scenario::S1, sigma).validate()?;
        }
        Ok(())
    }

    pub fn dgp(&self, scenario: Scenario, sigma: f64) -> DgpConfig {
        DgpConfig { scenario, sigma, n_dmu: self.n_dmu, n_reps: self.n_reps, seed: self.seed }
    }

    fn estimators(&self) -> Vec<Estimator> {
        let mut v = Vec::new();
        if self.full_frontier {
            v.push(Estimator::Cnls);
        }
        v.extend(self.taus.iter().map(|&tau| Estimator::Cer { tau }));
        v
    }

    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for &scenario in &self.scenarios {
            for &technology in &self.technologies {
                for estimator in self.estimators() {
                    for &sigma in &self.sigmas {
                        out.push(CellKey { scenario, sigma, technology, estimator });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub scenario: Scenario,
    pub sigma: f64,
    pub technology: Technology,
    pub estimator: Estimator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ProRmse,
    ExpRmse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseCell {
    pub key: CellKey,
    pub metric: Metric,
    /// Mean over the replications that solved; `None` if none did.
    pub value: Option<f64>,
    pub reps_completed: usize,
    pub reps_requested: usize,
    pub failures: Vec<String>,
    /// Scenario 2 emission redraws across all replications.
    pub resampled: usize,
}

impl RmseCell {
    pub fn is_complete(&self) -> bool {
        self.reps_completed == self.reps_requested
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub spec: ExperimentSpec,
    pub cells: Vec<RmseCell>,
}

/// Frontier value of the output at every DMU from one fitted model: the
/// unit's own hyperplane solved for `y`. Used for both metrics.
pub fn estimate_frontier(
    sample: &SimulatedSample,
    tech: Technology,
    est: Estimator,
    opts: &SolveOptions,
) -> Result<Vec<f64>, String> {
    let d = &sample.dataset;
    let g = direction_for(d, tech).map_err(|e| e.to_string())?;
    let u = EmissionFactors::from_ratio(d);
    let fit = fit_frontier(d, tech, est, &g, Some(&u), &Weights::default(), opts).map_err(|e| e.to_string())?;
    Ok((0..d.n_dmu()).map(|i| fit.fitted_output(d, i, COEF_FLOOR)).collect())
}

/// The value an estimator is scored against.
pub fn target(sample: &SimulatedSample, sigma: f64, est: Estimator) -> Result<Vec<f64>, McError> {
    match est {
        Estimator::Cnls => Ok(sample.true_f.clone()),
        Estimator::Cer { tau } => Ok(true_quantile(sample, sigma, tau)?.values),
    }
}

pub fn run_experiment(spec: &ExperimentSpec, exec: Execution, opts: &SolveOptions) -> Result<RmseReport, McError> {
    run_experiment_with(spec, exec, |s, key| estimate_frontier(s, key.technology, key.estimator, opts))
}

/// Runs every (cell, replication) pair through `estimator`. Solver failures
/// are recorded in the cell instead of aborting the run.
pub fn run_experiment_with<F>(spec: &ExperimentSpec, exec: Execution, estimator: F) -> Result<RmseReport, McError>
where
    F: Fn(&SimulatedSample, &CellKey) -> Result<Vec<f64>, String> + Sync + Send,
{
    spec.validate()?;
    let cells = spec.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..spec.n_reps).map(move |r| (c, r))).collect();
    type JobOut = (usize, Result<(Vec<f64>, Vec<f64>), String>, usize);
    let outcomes: Vec<JobOut> = exec::map(exec, jobs, |(c, rep)| {
        let key = cells[c];
        let run = || -> Result<(Vec<f64>, Vec<f64>, usize), String> {
            let sample = generate(&spec.dgp(key.scenario, key.sigma), rep).map_err(|e| e.to_string())?;
            let t = target(&sample, key.sigma, key.estimator).map_err(|e| e.to_string())?;
            let e = estimator(&sample, &key)?;
            Ok((e, t, sample.resampled))
        };
        match run() {
            Ok((e, t, resampled)) => (c, Ok((e, t)), resampled),
            Err(msg) => (c, Err(format!("rep {rep}: {msg}")), 0),
        }
    });

    // Estimates, targets, failures and redraw count per cell.
    type Slot = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<String>, usize);
    let mut per_cell: Vec<Slot> = vec![(Vec::new(), Vec::new(), Vec::new(), 0); cells.len()];
    for (c, out, resampled) in outcomes {
        let slot = &mut per_cell[c];
        slot.3 += resampled;
        match out {
            Ok((e, t)) => {
                slot.0.push(e);
                slot.1.push(t);
            }
            Err(msg) => slot.2.push(msg),
        }
    }
    let cells = cells
        .into_iter()
        .zip(per_cell)
        .map(|(key, (est, truth, failures, resampled))| {
            let metric = match key.estimator {
                Estimator::Cnls => Metric::ProRmse,
                Estimator::Cer { .. } => Metric::ExpRmse,
            };
            let value = if est.is_empty() { None } else { Some(pro_rmse(&est, &truth)?) };
            Ok(RmseCell {
                key,
                metric,
                value,
                reps_completed: est.len(),
                reps_requested: spec.n_reps,
                failures,
                resampled,
            })
        })
        .collect::<Result<Vec<_>, McError>>()?;
    Ok(RmseReport { spec: spec.clone(), cells })
}

fn estimator_label(e: Estimator) -> (&'static str, String) {
    match e {
        Estimator::Cnls => ("cnls", String::new()),
        Estimator::Cer { tau } => ("cer", tau.to_string()),
    }
}

impl RmseReport {
    pub fn cell(&self, scenario: Scenario, tech: Technology, est: Estimator, sigma: f64) -> Option<&RmseCell> {
        self.cells.iter().find(|c| {
            c.key.scenario == scenario && c.key.technology == tech && c.key.estimator == est && c.key.sigma == sigma
        })
    }

    pub fn incomplete(&self) -> Vec<&RmseCell> {
        self.cells.iter().filter(|c| !c.is_complete()).collect()
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    /// Rows are scenario x technology x estimator x tau, one column per sigma.
    pub fn write_table_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let sigmas = &self.spec.sigmas;
        let mut header =
            vec!["scenario".to_string(), "technology".into(), "estimator".into(), "tau".into(), "metric".into()];
        header.extend(sigmas.iter().map(|s| format!("sigma={s}")));
        w.write_record(&header)?;
        let mut rows: BTreeMap<(u8, Technology, usize), Vec<&RmseCell>> = BTreeMap::new();
        let order = self.spec.estimators();
        for c in &self.cells {
            let e = order.iter().position(|&e| e == c.key.estimator).unwrap_or(usize::MAX);
            rows.entry((c.key.scenario.number(), c.key.technology, e)).or_default().push(c);
        }
        for ((scenario, tech, _), cells) in rows {
            let first = cells[0];
            let (name, tau) = estimator_label(first.key.estimator);
            let metric = match first.metric {
                Metric::ProRmse => "pro_rmse",
                Metric::ExpRmse => "exp_rmse",
            };
            let mut rec =
                vec![format!("S{scenario}"), tech.short().to_string(), name.to_string(), tau, metric.to_string()];
            for &s in sigmas {
                let v = cells.iter().find(|c| c.key.sigma == s).and_then(|c| c.value);
                rec.push(v.map_or_else(|| "NA".to_string(), |v| v.to_string()));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Tidy long format: one row per cell.
    pub fn write_long_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "scenario",
            "technology",
            "estimator",
            "tau",
            "sigma",
            "metric",
            "value",
            "reps_completed",
            "reps_requested",
        ])?;
        for c in &self.cells {
            let (name, tau) = estimator_label(c.key.estimator);
            w.write_record([
                c.key.scenario.to_string(),
                c.key.technology.short().to_string(),
                name.to_string(),
                tau,
                c.key.sigma.to_string(),
                format!("{:?}", c.metric),
                c.value.map_or_else(|| "NA".to_string(), |v| v.to_string()),
                c.reps_completed.to_string(),
                c.reps_requested.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
