//! End-to-end runs: estimation with shadow prices, simulation, direction and
//! summary statistics, each with a reproducibility manifest.
//!
//! Nothing is written until a run has finished; [`RunOutput::write`] then
//! writes every file once from a single thread.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{load_csv, summary_stats, DatasetError, EmissionFactorSource, Schema};
use crate::direction::direction_for;
use crate::exec::{self, Execution};
use crate::montecarlo::{self, target, ExperimentSpec, McError, RmseReport, Scenario};
use crate::qp::SolveOptions;
use crate::shadow::{
    full_frontier_shadow_prices, quantile_shadow_prices, report, write_records_csv, MacReport, QuantileGrid,
    ShadowError, ShadowPriceRecord, COEF_FLOOR,
};
use crate::technologies::{fit_frontier, Estimator, FrontierFit, ModelError, Technology, Weights, COEF_RIDGE};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("the input has no price columns; map p and w in the schema")]
    MissingPrices,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Shadow(#[from] ShadowError),
    #[error(transparent)]
    Simulation(#[from] McError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Estimate,
    Simulate,
    Direction,
    Summary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Cnls,
    Cer,
}

impl std::str::FromStr for EstimatorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "cnls" => Ok(EstimatorKind::Cnls),
            "cer" => Ok(EstimatorKind::Cer),
            other => Err(format!("unknown estimator '{other}' (expected cnls or cer)")),
        }
    }
}

/// Fully resolved settings of one run. Every field is echoed in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub technologies: Vec<Technology>,
    pub estimators: Vec<EstimatorKind>,
    pub taus: Vec<f64>,
    pub input: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub scenarios: Vec<Scenario>,
    pub sigmas: Vec<f64>,
    pub n: usize,
    pub reps: usize,
    /// Feasibility tolerance of every accepted solve.
    pub tol: f64,
    /// Fallbacks for empty price cells, keyed by CSV header; added to (and
    /// overriding) the schema's own.
    pub fallback: BTreeMap<String, f64>,
    /// Overrides the schema's rule for emission factors when no `u` column is mapped.
    pub u_source: Option<EmissionFactorSource>,
    pub execution: Execution,
    /// Simulation only: score the true frontier instead of an estimator.
    pub oracle: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: Command::Estimate,
            technologies: vec![Technology::ByProduction],
            estimators: vec![EstimatorKind::Cer],
            taus: QuantileGrid::default().taus().to_vec(),
            input: None,
            schema: None,
            out_dir: PathBuf::from("out"),
            seed: 42,
            scenarios: vec![Scenario::S1],
            sigmas: vec![1.3],
            n: 100,
            reps: 10,
            tol: crate::qp::DEFAULT_TOL,
            fallback: BTreeMap::new(),
            u_source: None,
            execution: Execution::Parallel,
            oracle: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.technologies.is_empty() {
            return bad("no technology given");
        }
        if self.estimators.contains(&EstimatorKind::Cer) && self.taus.is_empty() {
            return bad("the cer estimator needs at least one tau");
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return bad("tol must be positive");
        }
        match self.command {
            Command::Estimate => {
                if self.input.is_none() || self.schema.is_none() {
                    return bad("estimate needs --input and --schema");
                }
                if self.technologies.len() != 1 || self.estimators.len() != 1 {
                    return bad("estimate takes exactly one technology and one estimator");
                }
                if self.estimators[0] == EstimatorKind::Cer {
                    QuantileGrid::new(self.taus.clone())?;
                }
            }
            Command::Direction => {
                if self.input.is_none() || self.schema.is_none() {
                    return bad("direction needs --input and --schema");
                }
            }
            Command::Summary => {
                if self.input.is_none() || self.schema.is_none() {
                    return bad("summary needs --input and --schema");
                }
            }
            Command::Simulate => {
                if self.estimators.is_empty() {
                    return bad("no estimator given");
                }
                self.experiment().validate()?;
            }
        }
        Ok(())
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions::with_tol(self.tol)
    }

    pub fn experiment(&self) -> ExperimentSpec {
        ExperimentSpec {
            scenarios: self.scenarios.clone(),
            sigmas: self.sigmas.clone(),
            technologies: self.technologies.clone(),
            full_frontier: self.estimators.contains(&EstimatorKind::Cnls),
            taus: if self.estimators.contains(&EstimatorKind::Cer) { self.taus.clone() } else { Vec::new() },
            n_dmu: self.n,
            n_reps: self.reps,
            seed: self.seed,
        }
    }

    fn effective_schema(&self) -> Result<Schema, PipelineError> {
        let path = self.schema.as_ref().expect("validated");
        let mut schema = Schema::from_json_file(path)?;
        for (k, v) in &self.fallback {
            schema.fallback.insert(k.clone(), *v);
        }
        if let Some(src) = self.u_source {
            schema.u_source = src;
        }
        Ok(schema)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub backend: String,
    pub tol: f64,
    pub gap_tol: f64,
    pub max_iter: u32,
    pub polish: bool,
    pub coef_ridge: f64,
}

impl From<&SolveOptions> for SolverSettings {
    fn from(o: &SolveOptions) -> Self {
        Self {
            backend: "clarabel".into(),
            tol: o.tol,
            gap_tol: o.gap_tol,
            max_iter: o.max_iter,
            polish: o.polish,
            coef_ridge: COEF_RIDGE,
        }
    }
}

/// Counts of records where a coefficient floor was applied or quantile
/// frontiers crossed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FloorFlags {
    pub coef_floor: f64,
    pub gamma_floored: usize,
    pub eta_floored: usize,
    pub crossings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub solver: SolverSettings,
    pub input_sha256: Option<String>,
    pub schema_sha256: Option<String>,
    pub n_dmu: Option<usize>,
    pub floors: Option<FloorFlags>,
    /// True iff every requested record or simulation cell was produced.
    pub complete: bool,
    /// Cells or records that did not complete.
    pub incomplete: Vec<String>,
    pub outputs: Vec<OutputFile>,
}

/// Everything a run produces, held in memory until [`write`](Self::write).
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub manifest: Manifest,
    /// File name and content, in write order (the manifest comes last).
    pub files: Vec<(String, Vec<u8>)>,
}

impl RunOutput {
    fn new(cfg: &RunConfig) -> Self {
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: cfg.clone(),
            solver: SolverSettings::from(&cfg.solve_options()),
            input_sha256: None,
            schema_sha256: None,
            n_dmu: None,
            floors: None,
            complete: true,
            incomplete: Vec::new(),
            outputs: Vec::new(),
        };
        Self { manifest, files: Vec::new() }
    }

    fn add(&mut self, name: &str, content: Vec<u8>) {
        self.manifest.outputs.push(OutputFile { file: name.into(), sha256: sha256_hex(&content) });
        self.files.push((name.into(), content));
    }

    pub fn manifest_json(&self) -> Result<String, serde_json::Error> {
        serde_json::to_string_pretty(&self.manifest)
    }

    /// Writes all files and `manifest.json` into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
        fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        for (name, content) in &self.files {
            let p = dir.join(name);
            fs::write(&p, content)?;
            paths.push(p);
        }
        let p = dir.join("manifest.json");
        fs::write(&p, self.manifest_json()? + "\n")?;
        paths.push(p);
        Ok(paths)
    }

    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_slice())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn file_sha(path: &Path) -> Result<String, PipelineError> {
    Ok(sha256_hex(&fs::read(path)?))
}

pub fn run(cfg: &RunConfig) -> Result<RunOutput, PipelineError> {
    cfg.validate()?;
    match cfg.command {
        Command::Estimate => run_estimate(cfg).map(|(out, _)| out),
        Command::Simulate => run_simulate(cfg).map(|(out, _)| out),
        Command::Direction => run_direction(cfg),
        Command::Summary => run_summary(cfg),
    }
}

/// Aggregate written next to the per-unit records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub technology: Technology,
    pub estimator: EstimatorKind,
    pub taus: Vec<f64>,
    pub report: MacReport,
}

/// In-memory results of an estimation run.
#[derive(Debug, Clone)]
pub struct EstimateResults {
    pub records: Vec<ShadowPriceRecord>,
    pub fits: Vec<FrontierFit>,
    pub summary: EstimateSummary,
}

/// Load, pick the direction, fit (once per tau for CER), price every unit.
pub fn run_estimate(cfg: &RunConfig) -> Result<(RunOutput, EstimateResults), PipelineError> {
    cfg.validate()?;
    let input = cfg.input.as_ref().expect("validated");
    let schema = cfg.effective_schema()?;
    let loaded = load_csv(input, &schema)?;
    let prices = loaded.prices.as_ref().ok_or(PipelineError::MissingPrices)?;
    let d = &loaded.dataset;
    d.require_min_dmus(2)?;
    let tech = cfg.technologies[0];
    let kind = cfg.estimators[0];
    let g = direction_for(d, tech)?;
    let opts = cfg.solve_options();
    let wts = Weights::default();
    let fit = |est: Estimator| fit_frontier(d, tech, est, &g, Some(&loaded.factors), &wts, &opts);

    let (fits, records, taus) = match kind {
        EstimatorKind::Cnls => {
            let f = fit(Estimator::Cnls)?;
            let recs = exec::try_map(cfg.execution, 0..d.n_dmu(), |i| full_frontier_shadow_prices(d, &f, prices, i))?;
            (vec![f], recs, Vec::new())
        }
        EstimatorKind::Cer => {
            let grid = QuantileGrid::new(cfg.taus.clone())?;
            let fits = exec::try_map(cfg.execution, grid.taus().to_vec(), |tau| fit(Estimator::Cer { tau }))?;
            let recs =
                exec::try_map(cfg.execution, 0..d.n_dmu(), |i| quantile_shadow_prices(d, &fits, &grid, prices, i))?;
            (fits, recs, grid.taus().to_vec())
        }
    };
    let rep = report(&records)?;
    let summary = EstimateSummary { technology: tech, estimator: kind, taus, report: rep.clone() };

    let mut out = RunOutput::new(cfg);
    out.manifest.input_sha256 = Some(file_sha(input)?);
    out.manifest.schema_sha256 = Some(file_sha(cfg.schema.as_ref().expect("validated"))?);
    out.manifest.n_dmu = Some(d.n_dmu());
    out.manifest.floors = Some(FloorFlags {
        coef_floor: COEF_FLOOR,
        gamma_floored: rep.gamma_floored,
        eta_floored: rep.eta_floored,
        crossings: rep.crossings,
    });
    if records.len() != d.n_dmu() {
        out.manifest.complete = false;
        out.manifest.incomplete.push(format!("{} of {} records", records.len(), d.n_dmu()));
    }
    let mut csv_buf = Vec::new();
    write_records_csv(&mut csv_buf, &records, prices)?;
    out.add("records.csv", csv_buf);
    out.add("report.json", (serde_json::to_string_pretty(&summary)? + "\n").into_bytes());
    out.add("fits.json", (serde_json::to_string_pretty(&fits)? + "\n").into_bytes());
    let mut dir = serde_json::to_string_pretty(&g)?;
    dir.push('\n');
    out.add("direction.json", dir.into_bytes());
    Ok((out, EstimateResults { records, fits, summary }))
}

/// Runs the Monte Carlo grid and renders the RMSE tables.
pub fn run_simulate(cfg: &RunConfig) -> Result<(RunOutput, RmseReport), PipelineError> {
    cfg.validate()?;
    let spec = cfg.experiment();
    let rep = if cfg.oracle {
        montecarlo::run_experiment_with(&spec, cfg.execution, |s, key| {
            target(s, key.sigma, key.estimator).map_err(|e| e.to_string())
        })?
    } else {
        montecarlo::run_experiment(&spec, cfg.execution, &cfg.solve_options())?
    };
    let mut out = RunOutput::new(cfg);
    for c in rep.incomplete() {
        let k = &c.key;
        out.manifest.complete = false;
        out.manifest.incomplete.push(format!(
            "{} {} {:?} sigma={}: {}/{} replications ({})",
            k.scenario,
            k.technology,
            k.estimator,
            k.sigma,
            c.reps_completed,
            c.reps_requested,
            c.failures.join("; ")
        ));
    }
    let mut table = Vec::new();
    rep.write_table_csv(&mut table)?;
    out.add("rmse_table.csv", table);
    let mut long = Vec::new();
    rep.write_long_csv(&mut long)?;
    out.add("rmse_long.csv", long);
    out.add("rmse.json", (rep.to_json()? + "\n").into_bytes());
    Ok((out, rep))
}

/// Direction vector of every requested technology.
pub fn run_direction(cfg: &RunConfig) -> Result<RunOutput, PipelineError> {
    cfg.validate()?;
    let input = cfg.input.as_ref().expect("validated");
    let loaded = load_csv(input, &cfg.effective_schema()?)?;
    let mut dirs = BTreeMap::new();
    for &t in &cfg.technologies {
        dirs.insert(t.short().to_string(), direction_for(&loaded.dataset, t)?);
    }
    let mut out = RunOutput::new(cfg);
    out.manifest.input_sha256 = Some(file_sha(input)?);
    out.manifest.schema_sha256 = Some(file_sha(cfg.schema.as_ref().expect("validated"))?);
    out.manifest.n_dmu = Some(loaded.dataset.n_dmu());
    out.add("direction.json", (serde_json::to_string_pretty(&dirs)? + "\n").into_bytes());
    Ok(out)
}

/// Mean, standard deviation, minimum and maximum of every column.
pub fn run_summary(cfg: &RunConfig) -> Result<RunOutput, PipelineError> {
    cfg.validate()?;
    let input = cfg.input.as_ref().expect("validated");
    let loaded = load_csv(input, &cfg.effective_schema()?)?;
    let stats = summary_stats(&loaded.dataset, loaded.prices.as_ref());
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in &stats {
        w.serialize(s)?;
    }
    let buf = w.into_inner().map_err(|e| PipelineError::Io(e.into_error()))?;
    let mut out = RunOutput::new(cfg);
    out.manifest.input_sha256 = Some(file_sha(input)?);
    out.manifest.schema_sha256 = Some(file_sha(cfg.schema.as_ref().expect("validated"))?);
    out.manifest.n_dmu = Some(loaded.dataset.n_dmu());
    out.add("summary.csv", buf);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_needs_input_and_one_model() {
        let cfg = RunConfig::default();
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
        let cfg = RunConfig {
            input: Some("a.csv".into()),
            schema: Some("s.json".into()),
            technologies: Technology::ALL.to_vec(),
            ..RunConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
    }

    #[test]
    fn cer_needs_taus() {
        let cfg = RunConfig { command: Command::Simulate, taus: vec![], ..RunConfig::default() };
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
        let cfg = RunConfig { command: Command::Simulate, ..RunConfig::default() };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn oracle_simulation_is_a_zero_matrix_and_repeats_exactly() {
        let cfg = RunConfig {
            command: Command::Simulate,
            technologies: Technology::ALL.to_vec(),
            estimators: vec![EstimatorKind::Cnls, EstimatorKind::Cer],
            taus: vec![0.5, 0.95],
            sigmas: vec![0.3, 1.3],
            scenarios: vec![Scenario::S1, Scenario::S2],
            n: 12,
            reps: 1,
            oracle: true,
            ..RunConfig::default()
        };
        let (a, rep) = run_simulate(&cfg).unwrap();
        assert!(rep.cells.iter().all(|c| c.value == Some(0.0)));
        assert!(a.manifest.complete);
        let (b, _) = run_simulate(&cfg).unwrap();
        assert_eq!(a.files, b.files);
        assert_eq!(a.manifest_json().unwrap(), b.manifest_json().unwrap());
    }

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
