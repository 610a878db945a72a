use serde::{Deserialize, Serialize};

use super::fit::{DmuFit, FrontierFit, Residual};
use super::{DirectionVector, ModelError, Technology, Weights};
use crate::dataset::{Dataset, EmissionFactors};
use crate::qp::{self, Bounds, QuadraticProgram, Sense, SolveOptions, Status, Var};

/// Constraint family names, shared with feasibility reports.
pub mod groups {
    pub const RESIDUAL: &str = "residual";
    pub const AFRIAT: &str = "afriat";
    pub const AFRIAT_ECONOMIC: &str = "afriat_economic";
    pub const AFRIAT_ENVIRONMENTAL: &str = "afriat_environmental";
    pub const SUB_TECHNOLOGY_SIGN: &str = "sub_technology_sign";
    pub const DIRECTION: &str = "direction";
    pub const MATERIAL_BALANCE: &str = "material_balance";
    pub const SUMMING_UP: &str = "summing_up";
    pub const NORMALIZATION: &str = "normalization";
}

/// Weight of the squared slope coefficients added to the least-squares loss.
///
/// Residuals are unique at the optimum but the slopes are not: when emissions
/// and the emission-generating input are nearly collinear, free `eta` and
/// `omega` can grow without bound in opposite directions. The tiny ridge picks
/// the smallest slopes among (numerically) equivalent optima and keeps the
/// backend away from cancelling 1e7-sized coefficients.
pub const COEF_RIDGE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimator {
    /// Sign-constrained convex nonparametric least squares (full frontier).
    Cnls,
    /// Convex expectile regression at level `tau`.
    Cer { tau: f64 },
}

impl Estimator {
    pub fn tau(&self) -> Option<f64> {
        match *self {
            Estimator::Cnls => None,
            Estimator::Cer { tau } => Some(tau),
        }
    }
}

#[derive(Debug, Clone)]
struct DmuVars {
    alpha: Var,
    alpha_bar: Option<Var>,
    beta: Vec<Var>,
    eta: Vec<Var>,
    eta_bar: Vec<Var>,
    omega: Vec<Var>,
    gamma: Vec<Var>,
    /// `eps` for CNLS; `(eps_plus, eps_minus)` for CER.
    eps: Var,
    eps_minus: Option<Var>,
}

/// A built frontier program together with its variable layout.
#[derive(Debug, Clone)]
pub struct FrontierModel {
    pub qp: QuadraticProgram,
    pub technology: Technology,
    pub estimator: Estimator,
    pub direction: DirectionVector,
    vars: Vec<DmuVars>,
}

pub fn build_cnls(
    d: &Dataset,
    tech: Technology,
    g: &DirectionVector,
    u: Option<&EmissionFactors>,
    wts: &Weights,
) -> Result<FrontierModel, ModelError> {
    build(d, tech, Estimator::Cnls, g, u, wts)
}

pub fn build_cer(
    d: &Dataset,
    tech: Technology,
    tau: f64,
    g: &DirectionVector,
    u: Option<&EmissionFactors>,
    wts: &Weights,
) -> Result<FrontierModel, ModelError> {
    build(d, tech, Estimator::Cer { tau }, g, u, wts)
}

/// Builds, solves and decodes in one step.
pub fn fit_frontier(
    d: &Dataset,
    tech: Technology,
    est: Estimator,
    g: &DirectionVector,
    u: Option<&EmissionFactors>,
    wts: &Weights,
    opts: &SolveOptions,
) -> Result<FrontierFit, ModelError> {
    // Scaling every data column by a common factor scales intercepts and
    // residuals by the same factor and leaves slopes, direction rows and
    // emission ratios unchanged. A power of two keeps the round trip exact.
    let c = data_scale(d);
    let scaled;
    let data = if c == 1.0 {
        d
    } else {
        scaled = rescaled(d, c);
        &scaled
    };
    let model = build(data, tech, est, g, u, wts)?;
    let sol = qp::solve(&model.qp, opts)?;
    if sol.status != Status::Optimal {
        return Err(ModelError::NotOptimal(sol.status));
    }
    let mut fit = model.decode(sol.values().expect("optimal solution has values"));
    if c != 1.0 {
        for f in &mut fit.dmus {
            f.alpha *= c;
            f.alpha_bar *= c;
            f.residual = match f.residual {
                Residual::Cnls { eps } => Residual::Cnls { eps: eps * c },
                Residual::Cer { eps_plus, eps_minus } => {
                    Residual::Cer { eps_plus: eps_plus * c, eps_minus: eps_minus * c }
                }
            };
        }
        fit.objective = model.loss(&fit);
    }
    Ok(fit)
}

/// Power of two closest to the largest data entry (1 for all-zero data).
fn data_scale(d: &Dataset) -> f64 {
    let top = [&d.x_n, &d.x_p, &d.y, &d.b]
        .iter()
        .flat_map(|m| m.iter_rows().flatten().copied().collect::<Vec<_>>())
        .fold(0.0f64, |a, v| a.max(v.abs()));
    if top > 0.0 && top.is_finite() {
        2f64.powi(top.log2().round() as i32)
    } else {
        1.0
    }
}

fn rescaled(d: &Dataset, c: f64) -> Dataset {
    let mut s = d.clone();
    for m in [&mut s.x_n, &mut s.x_p, &mut s.y, &mut s.b] {
        *m = m.map_columns(|_, col| col.iter().map(|v| v / c).collect());
    }
    s
}

fn build(
    d: &Dataset,
    tech: Technology,
    est: Estimator,
    g: &DirectionVector,
    u: Option<&EmissionFactors>,
    wts: &Weights,
) -> Result<FrontierModel, ModelError> {
    if let Estimator::Cer { tau } = est {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(ModelError::InvalidTau(tau));
        }
    }
    d.validate().map_err(|e| ModelError::DimensionMismatch(e.to_string()))?;
    let dims = d.dims();
    let n = d.n_dmu();
    let direction = match tech {
        // Fixed unit direction; the supplied vector is not used.
        Technology::WeakGDisposability => DirectionVector::ones(dims.m2, dims.j, dims.k),
        _ => {
            g.validate()?;
            g.check_dims(&dims)?;
            wts.validate()?;
            g.clone()
        }
    };
    let factors = match tech {
        Technology::WeakGDisposability => {
            let u = u.ok_or(ModelError::MissingEmissionFactors)?;
            if u.u.rows() != n || u.u.cols() != dims.m2 {
                return Err(ModelError::DimensionMismatch(format!(
                    "emission factors are {}x{}, expected {n}x{}",
                    u.u.rows(),
                    u.u.cols(),
                    dims.m2
                )));
            }
            Some(u)
        }
        _ => None,
    };

    let bp = tech == Technology::ByProduction;
    // Sign restrictions follow the dual programs: under JD and WGD the
    // multipliers of xP and b belong to equality rows and are free.
    let signed = if bp { Bounds::NONNEG } else { Bounds::FREE };

    let mut qp = QuadraticProgram::new();
    let mut vars = Vec::with_capacity(n);
    for i in 0..n {
        let mut vec_of = |name: &str, len: usize, b: Bounds| -> Vec<Var> {
            (0..len).map(|k| qp.add_var(format!("{name}_{}_{}", i + 1, k + 1), b)).collect()
        };
        let beta = vec_of("beta", dims.m1, Bounds::NONNEG);
        let eta = vec_of("eta", dims.m2, signed);
        let eta_bar = if bp { vec_of("etabar", dims.m2, Bounds::FREE) } else { Vec::new() };
        let omega = vec_of("omega", dims.k, signed);
        let gamma = vec_of("gamma", dims.j, Bounds::NONNEG);
        for &v in beta.iter().chain(&eta).chain(&eta_bar).chain(&omega).chain(&gamma) {
            qp.add_square(v, COEF_RIDGE);
        }
        let alpha = qp.add_var(format!("alpha_{}", i + 1), Bounds::FREE);
        let alpha_bar = bp.then(|| qp.add_var(format!("alphabar_{}", i + 1), Bounds::FREE));
        let (eps, eps_minus) = match est {
            Estimator::Cnls => {
                let e = qp.add_var(format!("eps_{}", i + 1), Bounds::NONNEG);
                qp.add_square(e, 1.0);
                (e, None)
            }
            Estimator::Cer { tau } => {
                let ep = qp.add_var(format!("epsplus_{}", i + 1), Bounds::NONNEG);
                let em = qp.add_var(format!("epsminus_{}", i + 1), Bounds::NONNEG);
                qp.add_square(ep, 1.0 - tau);
                qp.add_square(em, tau);
                (ep, Some(em))
            }
        };
        vars.push(DmuVars { alpha, alpha_bar, beta, eta, eta_bar, omega, gamma, eps, eps_minus });
    }

    // Residual definition: eps_i equals the DMU's own hyperplane at its data.
    let g_res = qp.group(groups::RESIDUAL);
    for (i, v) in vars.iter().enumerate() {
        let mut terms = hyperplane_terms(v, d, i, HyperplanePart::Combined);
        terms.push((v.eps, -1.0));
        if let Some(em) = v.eps_minus {
            terms.push((em, 1.0));
        }
        qp.add_row(g_res, terms, Sense::Eq, 0.0);
    }

    // Afriat inequalities: at its own data point each DMU's hyperplane lies
    // on or below every other DMU's hyperplane.
    let afriat_families: &[(&str, HyperplanePart)] = if bp {
        &[
            (groups::AFRIAT_ECONOMIC, HyperplanePart::Economic),
            (groups::AFRIAT_ENVIRONMENTAL, HyperplanePart::Environmental),
        ]
    } else {
        &[(groups::AFRIAT, HyperplanePart::Combined)]
    };
    if bp && est == Estimator::Cnls {
        // Each sub-technology's own part is nonnegative at the unit's data,
        // so the DEA value splits into its economic and environmental terms.
        // Expectile residuals take both signs and get no such rows.
        let grp = qp.group(groups::SUB_TECHNOLOGY_SIGN);
        for (i, v) in vars.iter().enumerate() {
            qp.add_row(grp, hyperplane_terms(v, d, i, HyperplanePart::Economic), Sense::Ge, 0.0);
            qp.add_row(grp, hyperplane_terms(v, d, i, HyperplanePart::Environmental), Sense::Ge, 0.0);
        }
    }
    for &(name, part) in afriat_families {
        let grp = qp.group(name);
        for i in 0..n {
            let own = hyperplane_terms(&vars[i], d, i, part);
            for h in 0..n {
                if h == i {
                    continue;
                }
                let mut terms = own.clone();
                terms.extend(hyperplane_terms(&vars[h], d, i, part).into_iter().map(|(v, a)| (v, -a)));
                qp.add_row(grp, terms, Sense::Le, 0.0);
            }
        }
    }

    match tech {
        Technology::ByProduction => {
            let grp = qp.group(groups::DIRECTION);
            for v in &vars {
                qp.add_row(grp, zip_terms(&v.gamma, &direction.g_y), Sense::Ge, wts.desirable);
                qp.add_row(grp, zip_terms(&v.omega, &direction.g_b), Sense::Ge, wts.undesirable);
                qp.add_row(grp, zip_terms(&v.eta, &direction.g_x), Sense::Ge, wts.input);
            }
        }
        Technology::JointDisposability => {
            let grp = qp.group(groups::NORMALIZATION);
            for v in &vars {
                let mut terms = zip_terms(&v.eta, &direction.g_x);
                terms.extend(zip_terms(&v.omega, &direction.g_b));
                terms.extend(zip_terms(&v.gamma, &direction.g_y));
                qp.add_row(grp, terms, Sense::Eq, 1.0);
            }
        }
        Technology::WeakGDisposability => {
            let u = factors.expect("checked above");
            let mb = qp.group(groups::MATERIAL_BALANCE);
            for (i, v) in vars.iter().enumerate() {
                // eta_m + (sum_k omega_k) u_m >= 0 for every emission input m.
                for (m, &eta) in v.eta.iter().enumerate() {
                    let mut terms = vec![(eta, 1.0)];
                    terms.extend(v.omega.iter().map(|&w| (w, u.u[(i, m)])));
                    qp.add_row(mb, terms, Sense::Ge, 0.0);
                }
            }
            let su = qp.group(groups::SUMMING_UP);
            for v in &vars {
                let terms = v.gamma.iter().chain(&v.omega).chain(&v.eta).map(|&x| (x, 1.0)).collect();
                qp.add_row(su, terms, Sense::Eq, 1.0);
            }
        }
    }

    Ok(FrontierModel { qp, technology: tech, estimator: est, direction, vars })
}

#[derive(Debug, Clone, Copy)]
enum HyperplanePart {
    /// `alpha - alpha_bar + beta'xN + eta'xP + omega'b - gamma'y`
    Combined,
    /// `alpha + beta'xN + (eta + eta_bar)'xP - gamma'y`
    Economic,
    /// `omega'b - alpha_bar - eta_bar'xP`
    Environmental,
}

fn hyperplane_terms(v: &DmuVars, d: &Dataset, at: usize, part: HyperplanePart) -> Vec<(Var, f64)> {
    let (xn, xp, y, b) = (d.x_n.row(at), d.x_p.row(at), d.y.row(at), d.b.row(at));
    let mut t = Vec::with_capacity(2 + xn.len() + 2 * xp.len() + y.len() + b.len());
    let economic = |t: &mut Vec<(Var, f64)>| {
        t.push((v.alpha, 1.0));
        t.extend(zip_terms(&v.beta, xn));
        t.extend(zip_terms(&v.eta, xp));
        t.extend(v.gamma.iter().zip(y).map(|(&g, &yv)| (g, -yv)));
    };
    match part {
        HyperplanePart::Combined => {
            economic(&mut t);
            if let Some(ab) = v.alpha_bar {
                t.push((ab, -1.0));
            }
            t.extend(zip_terms(&v.omega, b));
        }
        HyperplanePart::Economic => {
            economic(&mut t);
            t.extend(zip_terms(&v.eta_bar, xp));
        }
        HyperplanePart::Environmental => {
            t.extend(zip_terms(&v.omega, b));
            if let Some(ab) = v.alpha_bar {
                t.push((ab, -1.0));
            }
            t.extend(v.eta_bar.iter().zip(xp).map(|(&e, &x)| (e, -x)));
        }
    }
    t
}

fn zip_terms(vars: &[Var], coefs: &[f64]) -> Vec<(Var, f64)> {
    vars.iter().zip(coefs).map(|(&v, &c)| (v, c)).collect()
}

impl FrontierModel {
    pub fn n_dmu(&self) -> usize {
        self.vars.len()
    }

    /// Maps a solution vector to per-DMU coefficients. For CER the returned
    /// residual pair is put in complementary form (`eps_plus * eps_minus = 0`),
    /// which leaves the difference unchanged and can only lower the objective.
    pub fn decode(&self, x: &[f64]) -> FrontierFit {
        let pick = |vs: &[Var]| vs.iter().map(|v| x[v.0]).collect::<Vec<_>>();
        let dmus = self
            .vars
            .iter()
            .map(|v| {
                let residual = match v.eps_minus {
                    None => Residual::Cnls { eps: x[v.eps.0] },
                    Some(em) => {
                        let r = x[v.eps.0] - x[em.0];
                        Residual::Cer { eps_plus: r.max(0.0), eps_minus: (-r).max(0.0) }
                    }
                };
                DmuFit {
                    alpha: x[v.alpha.0],
                    alpha_bar: v.alpha_bar.map_or(0.0, |a| x[a.0]),
                    beta: pick(&v.beta),
                    eta: pick(&v.eta),
                    eta_bar: pick(&v.eta_bar),
                    omega: pick(&v.omega),
                    gamma: pick(&v.gamma),
                    residual,
                }
            })
            .collect::<Vec<_>>();
        let mut fit = FrontierFit {
            technology: self.technology,
            tau: self.estimator.tau(),
            direction: self.direction.clone(),
            objective: 0.0,
            dmus,
        };
        fit.objective = self.loss(&fit);
        fit
    }

    /// Inverse of [`decode`](Self::decode): the solution vector a fit represents.
    pub fn encode(&self, fit: &FrontierFit) -> Vec<f64> {
        let mut x = vec![0.0; self.qp.n_vars()];
        for (v, f) in self.vars.iter().zip(&fit.dmus) {
            x[v.alpha.0] = f.alpha;
            if let Some(a) = v.alpha_bar {
                x[a.0] = f.alpha_bar;
            }
            for (vs, vals) in [
                (&v.beta, &f.beta),
                (&v.eta, &f.eta),
                (&v.eta_bar, &f.eta_bar),
                (&v.omega, &f.omega),
                (&v.gamma, &f.gamma),
            ] {
                for (var, val) in vs.iter().zip(vals) {
                    x[var.0] = *val;
                }
            }
            match (f.residual, v.eps_minus) {
                (Residual::Cnls { eps }, None) => x[v.eps.0] = eps,
                (Residual::Cer { eps_plus, eps_minus }, Some(em)) => {
                    x[v.eps.0] = eps_plus;
                    x[em.0] = eps_minus;
                }
                _ => panic!("fit and model disagree on the estimator"),
            }
        }
        x
    }

    /// Least-squares loss of a fit, without the slope ridge.
    pub fn loss(&self, fit: &FrontierFit) -> f64 {
        let tau = self.estimator.tau();
        fit.dmus
            .iter()
            .map(|f| match (f.residual, tau) {
                (Residual::Cnls { eps }, _) => eps * eps,
                (Residual::Cer { eps_plus, eps_minus }, Some(t)) => {
                    (1.0 - t) * eps_plus.powi(2) + t * eps_minus.powi(2)
                }
                (Residual::Cer { .. }, None) => unreachable!("CER residual without tau"),
            })
            .sum()
    }

    pub fn check_fit(&self, fit: &FrontierFit, tol: f64) -> Result<qp::FeasibilityReport, qp::QpError> {
        qp::check_feasibility(&self.qp, &self.encode(fit), tol)
    }
}
