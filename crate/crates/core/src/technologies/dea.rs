use serde::{Deserialize, Serialize};

use super::{DirectionVector, ModelError, Technology, Weights};
use crate::dataset::Dataset;
use crate::qp::{self, Bounds, QuadraticProgram, Sense, SolveOptions, Status, Var};

/// Inefficiency of one DMU from the directional DEA program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeaScore {
    pub dmu: usize,
    pub technology: Technology,
    /// Optimal value: `w1 theta_m + w2 theta_j + w3 theta_k` (BP) or `theta` (JD).
    pub objective: f64,
    pub theta_m: f64,
    pub theta_j: f64,
    pub theta_k: f64,
    pub theta: f64,
    pub lambda: Vec<f64>,
    /// Environmental intensities (BP only; empty under JD).
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DeaModel {
    pub qp: QuadraticProgram,
    pub technology: Technology,
    pub dmu: usize,
    lambda: Vec<Var>,
    mu: Vec<Var>,
    thetas: Vec<Var>,
    weights: Weights,
}

/// Linear program evaluating DMU `o` against the technology spanned by `d`.
pub fn build_dea(
    d: &Dataset,
    o: usize,
    tech: Technology,
    g: &DirectionVector,
    wts: &Weights,
) -> Result<DeaModel, ModelError> {
    if tech == Technology::WeakGDisposability {
        return Err(ModelError::UnsupportedTechnology(tech));
    }
    let n = d.n_dmu();
    if o >= n {
        return Err(ModelError::InvalidDmu(o));
    }
    let dims = d.dims();
    g.validate()?;
    g.check_dims(&dims)?;
    wts.validate()?;

    let mut qp = QuadraticProgram::new();
    let lambda: Vec<Var> = (0..n).map(|i| qp.add_var(format!("lambda_{}", i + 1), Bounds::NONNEG)).collect();
    let bp = tech == Technology::ByProduction;
    let mu: Vec<Var> =
        if bp { (0..n).map(|i| qp.add_var(format!("mu_{}", i + 1), Bounds::NONNEG)).collect() } else { Vec::new() };
    let thetas: Vec<Var> = if bp {
        let t = vec![
            qp.add_var("theta_m", Bounds::NONNEG),
            qp.add_var("theta_j", Bounds::NONNEG),
            qp.add_var("theta_k", Bounds::NONNEG),
        ];
        qp.add_linear(t[0], -wts.input);
        qp.add_linear(t[1], -wts.desirable);
        qp.add_linear(t[2], -wts.undesirable);
        t
    } else {
        let t = qp.add_var("theta", Bounds::NONNEG);
        qp.add_linear(t, -1.0);
        vec![t]
    };
    let (th_m, th_j, th_k) = if bp { (thetas[0], thetas[1], thetas[2]) } else { (thetas[0], thetas[0], thetas[0]) };
    let combo = |vars: &[Var], col: Vec<f64>| -> Vec<(Var, f64)> { vars.iter().copied().zip(col).collect() };

    let grp = qp.group("desirable");
    for j in 0..dims.j {
        let mut t = combo(&lambda, d.y.column(j));
        t.push((th_j, -g.g_y[j]));
        qp.add_row(grp, t, Sense::Ge, d.y[(o, j)]);
    }
    let grp = qp.group("non_emission_input");
    for m in 0..dims.m1 {
        qp.add_row(grp, combo(&lambda, d.x_n.column(m)), Sense::Le, d.x_n[(o, m)]);
    }
    let input_sense = if bp { Sense::Le } else { Sense::Eq };
    let grp = qp.group("emission_input");
    for m in 0..dims.m2 {
        let mut t = combo(&lambda, d.x_p.column(m));
        t.push((th_m, g.g_x[m]));
        qp.add_row(grp, t, input_sense, d.x_p[(o, m)]);
    }
    let grp = qp.group("undesirable");
    let b_intensity = if bp { &mu } else { &lambda };
    for k in 0..dims.k {
        let mut t = combo(b_intensity, d.b.column(k));
        t.push((th_k, g.g_b[k]));
        qp.add_row(grp, t, input_sense, d.b[(o, k)]);
    }
    if bp {
        let grp = qp.group("input_coupling");
        for m in 0..dims.m2 {
            let mut t = combo(&lambda, d.x_p.column(m));
            t.extend(mu.iter().enumerate().map(|(i, &v)| (v, -d.x_p[(i, m)])));
            qp.add_row(grp, t, Sense::Eq, 0.0);
        }
    }
    let grp = qp.group("convexity");
    qp.add_row(grp, lambda.iter().map(|&v| (v, 1.0)).collect(), Sense::Eq, 1.0);
    if bp {
        qp.add_row(grp, mu.iter().map(|&v| (v, 1.0)).collect(), Sense::Eq, 1.0);
    }

    Ok(DeaModel { qp, technology: tech, dmu: o, lambda, mu, thetas, weights: *wts })
}

impl DeaModel {
    pub fn decode(&self, x: &[f64]) -> DeaScore {
        let pick = |vs: &[Var]| vs.iter().map(|v| x[v.0]).collect::<Vec<_>>();
        let th = pick(&self.thetas);
        let (theta_m, theta_j, theta_k, theta, objective) = if self.technology == Technology::ByProduction {
            let obj = self.weights.input * th[0] + self.weights.desirable * th[1] + self.weights.undesirable * th[2];
            (th[0], th[1], th[2], 0.0, obj)
        } else {
            (0.0, 0.0, 0.0, th[0], th[0])
        };
        DeaScore {
            dmu: self.dmu,
            technology: self.technology,
            objective,
            theta_m,
            theta_j,
            theta_k,
            theta,
            lambda: pick(&self.lambda),
            mu: pick(&self.mu),
        }
    }
}

pub fn solve_dea(
    d: &Dataset,
    o: usize,
    tech: Technology,
    g: &DirectionVector,
    wts: &Weights,
    opts: &SolveOptions,
) -> Result<DeaScore, ModelError> {
    let model = build_dea(d, o, tech, g, wts)?;
    let sol = qp::solve(&model.qp, opts)?;
    if sol.status != Status::Optimal {
        return Err(ModelError::NotOptimal(sol.status));
    }
    Ok(model.decode(sol.values().expect("optimal")))
}
