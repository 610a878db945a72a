//! Solver-neutral convex quadratic programs and the adapter to the
//! interior-point backend.
//!
//! A [`QuadraticProgram`] is `min x'Qx + c'x + k` over linear equality and
//! inequality rows plus per-variable bounds. Linear programs are the same type
//! with an empty quadratic form. Rows carry a group label so that feasibility
//! reports can be read per constraint family (e.g. "afriat", "direction").

use std::fmt::{self, Write as _};

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::Serialize;
use thiserror::Error;

/// Default primal feasibility tolerance.
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("dimension mismatch: expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("constraint row {row} references variable {var} but only {n_vars} are declared")]
    UnknownVariable { row: usize, var: usize, n_vars: usize },
    #[error("quadratic form is not positive semidefinite: {0}")]
    NotConvex(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl Bounds {
    pub const FREE: Bounds = Bounds { lower: None, upper: None };
    pub const NONNEG: Bounds = Bounds { lower: Some(0.0), upper: None };
}

/// Index of a declared variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub usize);

#[derive(Debug, Clone)]
pub struct Row {
    pub group: usize,
    pub terms: Vec<(Var, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, a)| a * x[v.0]).sum()
    }

    /// Amount by which `x` violates the row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs = self.activity(x);
        match self.sense {
            Sense::Le => (lhs - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - lhs).max(0.0),
            Sense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct QuadraticProgram {
    names: Vec<String>,
    bounds: Vec<Bounds>,
    linear: Vec<f64>,
    constant: f64,
    /// Upper-triangular entries `(i, j, q)` with `i <= j`; the objective term
    /// is `q * x_i * x_j`.
    quad: Vec<(Var, Var, f64)>,
    rows: Vec<Row>,
    groups: Vec<String>,
}

impl QuadraticProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, bounds: Bounds) -> Var {
        self.names.push(name.into());
        self.bounds.push(bounds);
        self.linear.push(0.0);
        Var(self.names.len() - 1)
    }

    pub fn n_vars(&self) -> usize {
        self.names.len()
    }

    pub fn var_name(&self, v: Var) -> &str {
        &self.names[v.0]
    }

    pub fn bounds(&self, v: Var) -> Bounds {
        self.bounds[v.0]
    }

    /// Adds `coef * x_v^2` to the objective.
    pub fn add_square(&mut self, v: Var, coef: f64) {
        self.quad.push((v, v, coef));
    }

    /// Adds `coef * x_a * x_b` to the objective.
    pub fn add_cross(&mut self, a: Var, b: Var, coef: f64) {
        let (i, j) = if a <= b { (a, b) } else { (b, a) };
        self.quad.push((i, j, coef));
    }

    pub fn add_linear(&mut self, v: Var, coef: f64) {
        self.linear[v.0] += coef;
    }

    pub fn add_constant(&mut self, k: f64) {
        self.constant += k;
    }

    /// Registers a named constraint family and returns its id.
    pub fn group(&mut self, name: &str) -> usize {
        if let Some(pos) = self.groups.iter().position(|g| g == name) {
            return pos;
        }
        self.groups.push(name.to_string());
        self.groups.len() - 1
    }

    pub fn group_names(&self) -> &[String] {
        &self.groups
    }

    pub fn add_row(&mut self, group: usize, terms: Vec<(Var, f64)>, sense: Sense, rhs: f64) {
        debug_assert!(group < self.groups.len());
        self.rows.push(Row { group, terms, sense, rhs });
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn is_linear(&self) -> bool {
        self.quad.iter().all(|&(_, _, q)| q == 0.0)
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let quad: f64 = self.quad.iter().map(|&(i, j, q)| q * x[i.0] * x[j.0]).sum();
        let lin: f64 = self.linear.iter().zip(x).map(|(c, v)| c * v).sum();
        quad + lin + self.constant
    }

    /// Structural checks: every row references declared variables, and the
    /// quadratic form is diagonally dominant with nonnegative diagonal
    /// (sufficient for PSD; every builder in this crate emits pure sums of
    /// squares).
    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.n_vars();
        for (r, row) in self.rows.iter().enumerate() {
            if let Some(&(v, _)) = row.terms.iter().find(|(v, _)| v.0 >= n) {
                return Err(QpError::UnknownVariable { row: r, var: v.0, n_vars: n });
            }
        }
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n];
        for &(i, j, q) in &self.quad {
            if i.0 >= n || j.0 >= n {
                return Err(QpError::UnknownVariable { row: usize::MAX, var: i.0.max(j.0), n_vars: n });
            }
            if i == j {
                diag[i.0] += q;
            } else {
                off[i.0] += q.abs() / 2.0;
                off[j.0] += q.abs() / 2.0;
            }
        }
        for k in 0..n {
            if diag[k] < -1e-12 || diag[k] + 1e-12 < off[k] {
                return Err(QpError::NotConvex(format!(
                    "variable {} has diagonal {} and off-diagonal mass {}",
                    self.names[k], diag[k], off[k]
                )));
            }
        }
        Ok(())
    }

    /// Plain-text LP-style listing, for cross-checking against external solvers.
    pub fn to_lp_string(&self) -> String {
        let mut out = String::from("Minimize\n obj:");
        let mut first = true;
        for (k, &c) in self.linear.iter().enumerate() {
            if c != 0.0 {
                out.push_str(&term(c, first, &self.names[k]));
                first = false;
            }
        }
        if !self.quad.is_empty() {
            out.push_str(" + [");
            for (n, &(i, j, q)) in self.quad.iter().enumerate() {
                // LP format halves the bracketed quadratic part.
                let coef = 2.0 * q;
                let term_name = if i == j {
                    format!("{} ^ 2", self.names[i.0])
                } else {
                    format!("{} * {}", self.names[i.0], self.names[j.0])
                };
                out.push_str(&term(coef, n == 0, &term_name));
            }
            out.push_str(" ] / 2");
        }
        out.push_str("\nSubject To\n");
        for (r, row) in self.rows.iter().enumerate() {
            let _ = write!(out, " {}_{}:", self.groups[row.group], r);
            for (n, &(v, a)) in row.terms.iter().enumerate() {
                out.push_str(&term(a, n == 0, &self.names[v.0]));
            }
            let _ = writeln!(out, " {} {}", row.sense, row.rhs);
        }
        out.push_str("Bounds\n");
        for (k, b) in self.bounds.iter().enumerate() {
            let name = &self.names[k];
            match (b.lower, b.upper) {
                (None, None) => {
                    let _ = writeln!(out, " {name} free");
                }
                (Some(l), None) => {
                    let _ = writeln!(out, " {name} >= {l}");
                }
                (None, Some(u)) => {
                    let _ = writeln!(out, " -inf <= {name} <= {u}");
                }
                (Some(l), Some(u)) => {
                    let _ = writeln!(out, " {l} <= {name} <= {u}");
                }
            }
        }
        out.push_str("End\n");
        out
    }
}

fn term(c: f64, first: bool, name: &str) -> String {
    match (c < 0.0, first) {
        (true, _) => format!(" - {} {name}", c.abs()),
        (false, true) => format!(" {c} {name}"),
        (false, false) => format!(" + {c} {name}"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub status: Status,
    /// Present iff `status == Optimal`.
    pub values: Option<Vec<f64>>,
    pub objective_value: f64,
    pub iterations: u32,
}

impl Solution {
    pub fn values(&self) -> Option<&[f64]> {
        self.values.as_deref()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Primal feasibility tolerance required of the returned point.
    pub tol: f64,
    /// Relative optimality-gap tolerance passed to the backend.
    pub gap_tol: f64,
    pub max_iter: u32,
    /// Re-solve with near-bound penalized variables pinned to their bound.
    pub polish: bool,
    pub verbose: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            gap_tol: 1e-9,
            max_iter: 200,
            polish: true,
            verbose: std::env::var_os("MACFRONTIER_SOLVER_VERBOSE").is_some(),
        }
    }
}

impl SolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

/// Solves `qp`. Infeasibility and unboundedness are reported as statuses;
/// only backend breakdowns (or an "optimal" point that fails the feasibility
/// re-check) are errors.
///
/// Interior-point iterates approach a bound at which a squared term has zero
/// gradient only like the square root of the duality gap, so residuals that
/// are exactly zero at the optimum come back as small positive numbers. With
/// `polish` set, such variables are pinned to their bound and the program is
/// re-solved; the pinned solution is kept only if it is feasible and its
/// objective, leaving out small regularizing squares, is no worse. Smaller pin thresholds are tried in turn when a
/// larger one pins a variable that is genuinely positive.
pub fn solve(qp: &QuadraticProgram, opts: &SolveOptions) -> Result<Solution, QpError> {
    qp.validate()?;
    let first = solve_with_retry(qp, opts, &[])?;
    if !opts.polish || first.status != Status::Optimal || qp.is_linear() {
        return Ok(first);
    }
    let x = first.values().expect("optimal").to_vec();
    let penalized = penalized_lower_bounds(qp);
    let gap = |&(k, l): &(usize, f64)| x[k] - l;
    let spread = penalized.iter().map(gap).fold(0.0, f64::max);
    if spread <= 0.0 {
        return Ok(first);
    }
    // Pinning is judged on the dominant part of the objective only; small
    // regularizing squares merely break ties and are solved less accurately
    // on the heavily degenerate pinned program.
    let dominant = |x: &[f64]| qp.objective(x) - minor_squares(qp, x);
    let base = dominant(&x);
    // Both solves are only accurate to the backend's gap tolerances.
    let slack = ATTEMPTS[0].gap_abs + opts.gap_tol * base.abs();
    let mut iterations = first.iterations;
    let mut tried = 0;
    for threshold in [(POLISH_REL * spread).max(1e-3), 1e-4, 1e-5] {
        let pinned: Vec<(usize, f64)> = penalized.iter().copied().filter(|p| gap(p) <= threshold).collect();
        if pinned.is_empty() || pinned.len() == tried {
            continue;
        }
        tried = pinned.len();
        if let Ok(second) = solve_with_retry(qp, opts, &pinned) {
            iterations += second.iterations;
            let better = second.values().is_some_and(|y| dominant(y) <= base + slack);
            if second.status == Status::Optimal && better {
                return Ok(Solution { iterations, ..second });
            }
        }
    }
    Ok(Solution { iterations, ..first })
}

const POLISH_REL: f64 = 1e-3;
const MINOR_SQUARE: f64 = 1e-6;

fn top_square(qp: &QuadraticProgram) -> f64 {
    qp.quad.iter().filter(|&&(i, j, _)| i == j).map(|&(_, _, q)| q).fold(0.0, f64::max)
}

fn minor_squares(qp: &QuadraticProgram, x: &[f64]) -> f64 {
    let cut = MINOR_SQUARE * top_square(qp);
    qp.quad.iter().filter(|&&(i, j, q)| i == j && q < cut).map(|&(i, _, q)| q * x[i.0] * x[i.0]).sum()
}

/// Variables with a finite lower bound whose square term is among the
/// dominant ones (small regularizing squares are left alone).
fn penalized_lower_bounds(qp: &QuadraticProgram) -> Vec<(usize, f64)> {
    let diag = || qp.quad.iter().filter(|&&(i, j, q)| i == j && q > 0.0);
    let top = top_square(qp);
    let mut out: Vec<(usize, f64)> = diag()
        .filter(|&&(_, _, q)| q >= MINOR_SQUARE * top)
        .filter_map(|&(i, _, _)| qp.bounds[i.0].lower.map(|l| (i.0, l)))
        .collect();
    out.sort_by_key(|&(k, _)| k);
    out.dedup_by_key(|&mut (k, _)| k);
    out
}

/// Backend settings tried in order while the previous one ends in a
/// numerical failure: tight tolerances, the backend's default tolerances,
/// then the same without equilibration and with stronger static
/// regularization.
#[derive(Debug, Clone, Copy)]
struct Attempt {
    feas: f64,
    gap_abs: f64,
    equilibrate: bool,
    static_reg: f64,
}

const ATTEMPTS: [Attempt; 4] = [
    Attempt { feas: 1e-10, gap_abs: 1e-9, equilibrate: true, static_reg: 1e-8 },
    Attempt { feas: 1e-8, gap_abs: 1e-8, equilibrate: true, static_reg: 1e-8 },
    Attempt { feas: 1e-10, gap_abs: 1e-9, equilibrate: false, static_reg: 1e-8 },
    Attempt { feas: 1e-8, gap_abs: 1e-8, equilibrate: true, static_reg: 1e-7 },
];

// The backend's own "almost solved" gap tolerances (5e-5) exceed typical
// optimal losses once the data are rescaled, so they are tightened.
const REDUCED_GAP_ABS: f64 = 1e-7;
const REDUCED_GAP_REL: f64 = 1e-6;

fn solve_with_retry(qp: &QuadraticProgram, opts: &SolveOptions, pinned: &[(usize, f64)]) -> Result<Solution, QpError> {
    let mut last = None;
    for a in &ATTEMPTS {
        let gap_rel = opts.gap_tol.max(a.gap_abs.min(1e-8));
        match solve_pinned(qp, opts, pinned, a, gap_rel) {
            Err(QpError::NumericalFailure(msg)) => last = Some(QpError::NumericalFailure(msg)),
            other => return other,
        }
    }
    Err(last.expect("at least one attempt"))
}

fn solve_pinned(
    qp: &QuadraticProgram,
    opts: &SolveOptions,
    pinned: &[(usize, f64)],
    attempt: &Attempt,
    tol_gap_rel: f64,
) -> Result<Solution, QpError> {
    let n = qp.n_vars();

    // Column scaling: each variable is rescaled so that its largest
    // constraint coefficient has unit magnitude; x = x_scaled / s.
    let mut col_max = vec![0.0f64; n];
    for row in &qp.rows {
        for &(v, a) in &row.terms {
            col_max[v.0] = col_max[v.0].max(a.abs());
        }
    }
    let scale: Vec<f64> = col_max.iter().map(|&m| if m > 0.0 && m.is_finite() { m } else { 1.0 }).collect();

    // Clarabel form: A x + s = b, s in cone. Equalities first (zero cone),
    // then inequalities and bounds (nonnegative cone, `<=` orientation).
    let mut ti = Vec::new();
    let mut tj = Vec::new();
    let mut tv = Vec::new();
    let mut b = Vec::new();
    let mut push_row = |terms: &mut dyn Iterator<Item = (usize, f64)>, rhs: f64, b: &mut Vec<f64>| {
        let r = b.len();
        for (j, a) in terms {
            if a != 0.0 {
                ti.push(r);
                tj.push(j);
                tv.push(a / scale[j]);
            }
        }
        b.push(rhs);
    };
    for row in qp.rows.iter().filter(|r| r.sense == Sense::Eq) {
        push_row(&mut row.terms.iter().map(|&(v, a)| (v.0, a)), row.rhs, &mut b);
    }
    let mut is_pinned = vec![false; n];
    for &(k, value) in pinned {
        is_pinned[k] = true;
        push_row(&mut std::iter::once((k, 1.0)), value, &mut b);
    }
    let n_eq = b.len();
    for row in qp.rows.iter().filter(|r| r.sense != Sense::Eq) {
        let flip = if row.sense == Sense::Ge { -1.0 } else { 1.0 };
        push_row(&mut row.terms.iter().map(|&(v, a)| (v.0, flip * a)), flip * row.rhs, &mut b);
    }
    for (k, bd) in qp.bounds.iter().enumerate() {
        if is_pinned[k] {
            continue;
        }
        if let Some(l) = bd.lower {
            push_row(&mut std::iter::once((k, -1.0)), -l, &mut b);
        }
        if let Some(u) = bd.upper {
            push_row(&mut std::iter::once((k, 1.0)), u, &mut b);
        }
    }
    let m = b.len();
    let a_mat = CscMatrix::new_from_triplets(m, n, ti, tj, tv);

    // Objective x'Qx + c'x = 1/2 x'Px + c'x with P = Q + Q'.
    let mut pi = Vec::new();
    let mut pj = Vec::new();
    let mut pv = Vec::new();
    for &(i, j, q) in &qp.quad {
        if q == 0.0 {
            continue;
        }
        let coef = if i == j { 2.0 * q } else { q };
        pi.push(i.0);
        pj.push(j.0);
        pv.push(coef / (scale[i.0] * scale[j.0]));
    }
    let p_mat = CscMatrix::new_from_triplets(n, n, pi, pj, pv);
    let c: Vec<f64> = qp.linear.iter().zip(&scale).map(|(c, s)| c / s).collect();

    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    if n_eq > 0 {
        cones.push(SupportedConeT::ZeroConeT(n_eq));
    }
    if m > n_eq {
        cones.push(SupportedConeT::NonnegativeConeT(m - n_eq));
    }

    let settings: DefaultSettings<f64> = DefaultSettingsBuilder::default()
        .verbose(opts.verbose)
        .max_iter(opts.max_iter)
        .tol_feas(attempt.feas)
        .tol_gap_abs(attempt.gap_abs)
        .tol_gap_rel(tol_gap_rel)
        .reduced_tol_gap_abs(REDUCED_GAP_ABS)
        .reduced_tol_gap_rel(REDUCED_GAP_REL)
        .equilibrate_enable(attempt.equilibrate)
        .static_regularization_constant(attempt.static_reg)
        .max_threads(1)
        .build()
        .map_err(|e| QpError::NumericalFailure(format!("settings: {e:?}")))?;

    let mut solver = DefaultSolver::new(&p_mat, &c, &a_mat, &b, &cones, settings)
        .map_err(|e| QpError::NumericalFailure(format!("setup: {e:?}")))?;
    solver.solve();

    let status = solver.solution.status;
    let iterations = solver.solution.iterations;
    match status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {
            let x: Vec<f64> = solver.solution.x.iter().zip(&scale).map(|(v, s)| v / s).collect();
            let report = check_feasibility(qp, &x, opts.tol)?;
            if !report.is_feasible() {
                return Err(QpError::NumericalFailure(format!(
                    "backend status {status:?} but max violation {:.3e} in group '{}'",
                    report.max_violation(),
                    report.worst_group().unwrap_or("?")
                )));
            }
            Ok(Solution { status: Status::Optimal, objective_value: qp.objective(&x), values: Some(x), iterations })
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            Ok(Solution { status: Status::Infeasible, values: None, objective_value: f64::INFINITY, iterations })
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            Ok(Solution { status: Status::Unbounded, values: None, objective_value: f64::NEG_INFINITY, iterations })
        }
        other => {
            Err(QpError::NumericalFailure(format!("backend stopped with {other:?} after {iterations} iterations")))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupResidual {
    pub group: String,
    pub rows: usize,
    pub max_violation: f64,
    /// Row index (into `QuadraticProgram::rows`) attaining the maximum.
    pub worst_row: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityReport {
    pub tol: f64,
    pub groups: Vec<GroupResidual>,
    pub bound_violation: f64,
}

impl FeasibilityReport {
    pub fn max_violation(&self) -> f64 {
        self.groups.iter().map(|g| g.max_violation).fold(self.bound_violation, f64::max)
    }

    pub fn is_feasible(&self) -> bool {
        self.max_violation() <= self.tol
    }

    pub fn group(&self, name: &str) -> Option<&GroupResidual> {
        self.groups.iter().find(|g| g.group == name)
    }

    pub fn worst_group(&self) -> Option<&str> {
        if self.bound_violation >= self.groups.iter().map(|g| g.max_violation).fold(0.0, f64::max) {
            return Some("bounds");
        }
        self.groups.iter().max_by(|a, b| a.max_violation.total_cmp(&b.max_violation)).map(|g| g.group.as_str())
    }
}

/// Per-group maximum constraint violation of `x`.
pub fn check_feasibility(qp: &QuadraticProgram, x: &[f64], tol: f64) -> Result<FeasibilityReport, QpError> {
    if x.len() != qp.n_vars() {
        return Err(QpError::DimensionMismatch { expected: qp.n_vars(), got: x.len() });
    }
    let mut groups: Vec<GroupResidual> = qp
        .groups
        .iter()
        .map(|g| GroupResidual { group: g.clone(), rows: 0, max_violation: 0.0, worst_row: None })
        .collect();
    for (r, row) in qp.rows.iter().enumerate() {
        let g = &mut groups[row.group];
        g.rows += 1;
        let v = row.violation(x);
        if g.worst_row.is_none() || v > g.max_violation {
            g.max_violation = v;
            g.worst_row = Some(r);
        }
    }
    let bound_violation = qp
        .bounds
        .iter()
        .zip(x)
        .map(|(b, &v)| {
            let lo = b.lower.map_or(0.0, |l| (l - v).max(0.0));
            let hi = b.upper.map_or(0.0, |u| (v - u).max(0.0));
            lo.max(hi)
        })
        .fold(0.0, f64::max);
    Ok(FeasibilityReport { tol, groups, bound_violation })
}
