//! Shadow prices and marginal abatement cost.
//!
//! MRT and MP are ratios of the fitted hyperplane coefficients; the MAC of a
//! unit is the cheaper of cutting emissions through less output (`p * MRT`)
//! or through less emission-generating input (`w * MP`).

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Prices};
use crate::direction::median;
use crate::technologies::FrontierFit;

/// Replacement for zero (or tiny) `gamma` and `eta` coefficients.
pub const COEF_FLOOR: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum ShadowError {
    #[error("quantile grid must be strictly increasing inside (0, 1): {0:?}")]
    InvalidGrid(Vec<f64>),
    #[error("expected one fit per grid quantile ({expected}), got {got}")]
    FitCountMismatch { expected: usize, got: usize },
    #[error("fit {index} is for tau {found:?}, grid has {expected}")]
    FitTauMismatch { index: usize, expected: f64, found: Option<f64> },
    #[error("DMU index {0} out of range")]
    InvalidDmu(usize),
    #[error("no records to summarize")]
    EmptyRecords,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileGrid {
    taus: Vec<f64>,
}

impl Default for QuantileGrid {
    fn default() -> Self {
        Self { taus: vec![0.05, 0.20, 0.35, 0.50, 0.65, 0.80, 0.95] }
    }
}

impl QuantileGrid {
    pub fn new(taus: Vec<f64>) -> Result<Self, ShadowError> {
        let ok = !taus.is_empty() && taus.iter().all(|&t| t > 0.0 && t < 1.0) && taus.windows(2).all(|w| w[0] < w[1]);
        if ok {
            Ok(Self { taus })
        } else {
            Err(ShadowError::InvalidGrid(taus))
        }
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuantileBracket {
    /// Above the highest quantile frontier; uses that quantile.
    AboveTop {
        tau: f64,
    },
    /// Below the lowest quantile frontier; uses that quantile.
    BelowBottom {
        tau: f64,
    },
    /// Between two adjacent quantile frontiers; averages both.
    Between {
        lo: f64,
        hi: f64,
    },
    On {
        tau: f64,
    },
    /// Full-frontier estimate, no quantile grid involved.
    Full,
}

impl fmt::Display for QuantileBracket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            QuantileBracket::AboveTop { tau } => write!(f, "above_top({tau})"),
            QuantileBracket::BelowBottom { tau } => write!(f, "below_bottom({tau})"),
            QuantileBracket::Between { lo, hi } => write!(f, "between({lo},{hi})"),
            QuantileBracket::On { tau } => write!(f, "on({tau})"),
            QuantileBracket::Full => f.write_str("full"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    OutputReduction,
    InputReduction,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::OutputReduction => "output_reduction",
            Strategy::InputReduction => "input_reduction",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowPriceRecord {
    pub dmu_id: String,
    pub bracket: QuantileBracket,
    /// `mrt[k][j] = omega_k / gamma_j`.
    pub mrt: Vec<Vec<f64>>,
    /// `mp[k][m] = omega_k / eta_m`.
    pub mp: Vec<Vec<f64>>,
    pub pmrt: f64,
    pub wmp: f64,
    pub mac: f64,
    pub strategy: Strategy,
    /// Some `gamma` entering the record was below the floor.
    pub gamma_floored: bool,
    pub eta_floored: bool,
    /// Fitted quantile values at this unit were not nondecreasing in tau.
    pub crossing: bool,
}

impl ShadowPriceRecord {
    /// MRT of the first undesirable against the first desirable output.
    pub fn mrt_scalar(&self) -> f64 {
        self.mrt.first().and_then(|r| r.first()).copied().unwrap_or(0.0)
    }

    /// MP of the first undesirable output at the input chosen for `wmp`.
    pub fn mp_scalar(&self, w: &[f64]) -> f64 {
        let row = self.mp.first().map(Vec::as_slice).unwrap_or(&[]);
        cheapest_input(row, w).map_or(0.0, |m| row[m])
    }
}

fn floored(v: f64) -> (f64, bool) {
    if v < COEF_FLOOR {
        (COEF_FLOOR, true)
    } else {
        (v, false)
    }
}

fn ratio_matrix(num: &[f64], den: &[f64]) -> (Vec<Vec<f64>>, bool) {
    let mut any = false;
    let m = num
        .iter()
        .map(|&o| {
            den.iter()
                .map(|&d| {
                    let (d, hit) = floored(d);
                    any |= hit;
                    o / d
                })
                .collect()
        })
        .collect();
    (m, any)
}

/// `omega_k / gamma_j` for DMU `dmu`, with `gamma` floored at [`COEF_FLOOR`].
pub fn compute_mrt(fit: &FrontierFit, dmu: usize) -> Vec<Vec<f64>> {
    let f = &fit.dmus[dmu];
    ratio_matrix(&f.omega, &f.gamma).0
}

/// `omega_k / eta_m` for DMU `dmu`, with `eta` floored at [`COEF_FLOOR`].
pub fn compute_mp(fit: &FrontierFit, dmu: usize) -> Vec<Vec<f64>> {
    let f = &fit.dmus[dmu];
    ratio_matrix(&f.omega, &f.eta).0
}

/// Least-cost rule; ties go to output reduction.
pub fn compute_mac(pmrt: f64, wmp: f64) -> (f64, Strategy) {
    if wmp < pmrt {
        (wmp, Strategy::InputReduction)
    } else {
        (pmrt, Strategy::OutputReduction)
    }
}

fn cheapest_input(mp_row: &[f64], w: &[f64]) -> Option<usize> {
    (0..mp_row.len().min(w.len())).min_by(|&a, &b| (w[a] * mp_row[a]).total_cmp(&(w[b] * mp_row[b])))
}

fn record(
    dmu_id: String,
    bracket: QuantileBracket,
    mrt: Vec<Vec<f64>>,
    mp: Vec<Vec<f64>>,
    p: &[f64],
    w: &[f64],
    flags: (bool, bool, bool),
) -> ShadowPriceRecord {
    let pmrt = p.first().copied().unwrap_or(0.0) * mrt.first().and_then(|r| r.first()).copied().unwrap_or(0.0);
    let mp_row = mp.first().map(Vec::as_slice).unwrap_or(&[]);
    let wmp = cheapest_input(mp_row, w).map_or(0.0, |m| w[m] * mp_row[m]);
    let (mac, strategy) = compute_mac(pmrt, wmp);
    ShadowPriceRecord {
        dmu_id,
        bracket,
        mrt,
        mp,
        pmrt,
        wmp,
        mac,
        strategy,
        gamma_floored: flags.0,
        eta_floored: flags.1,
        crossing: flags.2,
    }
}

fn dmu_id(d: &Dataset, i: usize) -> String {
    d.dmu_ids.get(i).cloned().unwrap_or_else(|| (i + 1).to_string())
}

/// Shadow prices from a single full-frontier fit.
pub fn full_frontier_shadow_prices(
    d: &Dataset,
    fit: &FrontierFit,
    prices: &Prices,
    dmu: usize,
) -> Result<ShadowPriceRecord, ShadowError> {
    if dmu >= fit.n_dmu() || dmu >= d.n_dmu() {
        return Err(ShadowError::InvalidDmu(dmu));
    }
    let f = &fit.dmus[dmu];
    let (mrt, gf) = ratio_matrix(&f.omega, &f.gamma);
    let (mp, ef) = ratio_matrix(&f.omega, &f.eta);
    Ok(record(dmu_id(d, dmu), QuantileBracket::Full, mrt, mp, prices.p.row(dmu), prices.w.row(dmu), (gf, ef, false)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BracketAssignment {
    pub bracket: QuantileBracket,
    /// Fitted frontier value of the first desirable output, one per grid tau.
    pub fitted: Vec<f64>,
    pub non_monotone: bool,
}

/// Locates `observed` among the per-quantile fitted values (grid order).
///
/// An exact match gives `On`; otherwise the first adjacent pair that
/// encloses the observation gives `Between`. Outside every fitted value the
/// nearest end of the grid is used.
pub fn assign_bracket(observed: f64, fitted: &[f64], grid: &QuantileGrid) -> BracketAssignment {
    let taus = grid.taus();
    let non_monotone = fitted.windows(2).any(|w| w[1] < w[0]);
    let out = |bracket| BracketAssignment { bracket, fitted: fitted.to_vec(), non_monotone };
    if let Some(k) = fitted.iter().position(|&v| v == observed) {
        return out(QuantileBracket::On { tau: taus[k] });
    }
    for k in 0..fitted.len().saturating_sub(1) {
        let (a, b) = (fitted[k], fitted[k + 1]);
        if a.min(b) < observed && observed < a.max(b) {
            return out(QuantileBracket::Between { lo: taus[k], hi: taus[k + 1] });
        }
    }
    let top = fitted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if observed > top {
        out(QuantileBracket::AboveTop { tau: taus[taus.len() - 1] })
    } else {
        out(QuantileBracket::BelowBottom { tau: taus[0] })
    }
}

fn check_fits(fits: &[FrontierFit], grid: &QuantileGrid) -> Result<(), ShadowError> {
    if fits.len() != grid.len() {
        return Err(ShadowError::FitCountMismatch { expected: grid.len(), got: fits.len() });
    }
    for (index, (f, &tau)) in fits.iter().zip(grid.taus()).enumerate() {
        if f.tau.is_none_or(|t| (t - tau).abs() > 1e-12) {
            return Err(ShadowError::FitTauMismatch { index, expected: tau, found: f.tau });
        }
    }
    Ok(())
}

/// Record for DMU `dmu` from one CER fit per grid quantile.
pub fn quantile_shadow_prices(
    d: &Dataset,
    fits: &[FrontierFit],
    grid: &QuantileGrid,
    prices: &Prices,
    dmu: usize,
) -> Result<ShadowPriceRecord, ShadowError> {
    check_fits(fits, grid)?;
    if dmu >= d.n_dmu() || fits.iter().any(|f| dmu >= f.n_dmu()) {
        return Err(ShadowError::InvalidDmu(dmu));
    }
    let fitted: Vec<f64> = fits.iter().map(|f| f.fitted_output(d, dmu, COEF_FLOOR)).collect();
    let a = assign_bracket(d.y[(dmu, 0)], &fitted, grid);
    let index_of = |tau: f64| grid.taus().iter().position(|&t| t == tau).expect("tau from grid");
    let ratios = |k: usize| {
        let f = &fits[k].dmus[dmu];
        let (mrt, gf) = ratio_matrix(&f.omega, &f.gamma);
        let (mp, ef) = ratio_matrix(&f.omega, &f.eta);
        (mrt, mp, gf, ef)
    };
    let (mrt, mp, gf, ef) = match a.bracket {
        QuantileBracket::AboveTop { tau } | QuantileBracket::BelowBottom { tau } | QuantileBracket::On { tau } => {
            ratios(index_of(tau))
        }
        QuantileBracket::Between { lo, hi } => {
            let (m1, p1, g1, e1) = ratios(index_of(lo));
            let (m2, p2, g2, e2) = ratios(index_of(hi));
            (mean_matrix(&m1, &m2), mean_matrix(&p1, &p2), g1 || g2, e1 || e2)
        }
        QuantileBracket::Full => unreachable!("assign_bracket never returns Full"),
    };
    Ok(record(dmu_id(d, dmu), a.bracket, mrt, mp, prices.p.row(dmu), prices.w.row(dmu), (gf, ef, a.non_monotone)))
}

fn mean_matrix(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter().zip(b).map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| 0.5 * (x + y)).collect()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMedian {
    pub mean: f64,
    pub median: f64,
}

impl MeanMedian {
    fn of(values: &[f64]) -> Self {
        Self { mean: values.iter().sum::<f64>() / values.len() as f64, median: median(values) }
    }
}

/// Aggregate of a set of records in the layout of a MAC summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacReport {
    pub n: usize,
    pub mac: MeanMedian,
    pub pmrt: MeanMedian,
    pub wmp: MeanMedian,
    /// Percent of units for which input reduction is cheaper.
    pub input_reduction_pct: f64,
    pub output_reduction_pct: f64,
    pub gamma_floored: usize,
    pub eta_floored: usize,
    pub crossings: usize,
}

pub fn report(records: &[ShadowPriceRecord]) -> Result<MacReport, ShadowError> {
    if records.is_empty() {
        return Err(ShadowError::EmptyRecords);
    }
    let col = |f: fn(&ShadowPriceRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
    let n = records.len();
    let input = records.iter().filter(|r| r.strategy == Strategy::InputReduction).count();
    let input_reduction_pct = 100.0 * input as f64 / n as f64;
    Ok(MacReport {
        n,
        mac: MeanMedian::of(&col(|r| r.mac)),
        pmrt: MeanMedian::of(&col(|r| r.pmrt)),
        wmp: MeanMedian::of(&col(|r| r.wmp)),
        input_reduction_pct,
        output_reduction_pct: 100.0 * (n - input) as f64 / n as f64,
        gamma_floored: records.iter().filter(|r| r.gamma_floored).count(),
        eta_floored: records.iter().filter(|r| r.eta_floored).count(),
        crossings: records.iter().filter(|r| r.crossing).count(),
    })
}

/// One row per DMU: `dmu_id, bracket, mrt, mp, pmrt, wmp, mac, strategy`.
pub fn write_records_csv<W: Write>(writer: W, records: &[ShadowPriceRecord], prices: &Prices) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["dmu_id", "bracket", "mrt", "mp", "pmrt", "wmp", "mac", "strategy"])?;
    for (i, r) in records.iter().enumerate() {
        w.write_record([
            r.dmu_id.clone(),
            r.bracket.to_string(),
            r.mrt_scalar().to_string(),
            r.mp_scalar(prices.w.row(i)).to_string(),
            r.pmrt.to_string(),
            r.wmp.to_string(),
            r.mac.to_string(),
            r.strategy.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
