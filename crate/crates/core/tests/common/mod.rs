#![allow(dead_code)]

use macfrontier::dataset::{Dataset, Matrix};
use macfrontier::qp::{QuadraticProgram, Sense, Var};
use macfrontier::technologies::DirectionVector;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Cobb-Douglas style instance: two non-emission inputs, one emission input,
/// one output and one emission, with one-sided noise on both outputs.
pub fn instance(seed: u64, n: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols: Vec<Vec<f64>> = (0..5).map(|_| Vec::with_capacity(n)).collect();
    for _ in 0..n {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(5.0..15.0)).collect();
        let u1: f64 = rng.random_range(0.0..0.5);
        let u2: f64 = rng.random_range(0.0..0.5);
        for k in 0..3 {
            cols[k].push(x[k]);
        }
        cols[3].push((x[0] * x[1] * x[2]).powf(0.3) * (-u1).exp());
        cols[4].push(0.09404 * x[2] * (-u2).exp());
    }
    Dataset::new(
        Matrix::from_columns(&cols[0..2]).unwrap(),
        Matrix::from_column(&cols[2]),
        Matrix::from_column(&cols[3]),
        Matrix::from_column(&cols[4]),
    )
    .unwrap()
}

pub fn direction() -> DirectionVector {
    DirectionVector::new(vec![0.5], vec![0.6], vec![0.4]).unwrap()
}

pub fn var_by_name(qp: &QuadraticProgram, name: &str) -> Var {
    (0..qp.n_vars()).map(Var).find(|&v| qp.var_name(v) == name).unwrap_or_else(|| panic!("no variable {name}"))
}

/// Minimises the sum of squares of the named variables (all bounded below by
/// zero) over the linear rows of `qp` by Kelley's cutting-plane method on an
/// exact simplex solver. Returns a lower bound and the value at the last LP
/// point; the two bracket the true minimum.
pub fn kelley_sum_of_squares(qp: &QuadraticProgram, squared: &[&str], gap: f64) -> (f64, f64) {
    let mut lp = minilp::Problem::new(minilp::OptimizationDirection::Minimize);
    let vars: Vec<minilp::Variable> = (0..qp.n_vars())
        .map(|k| {
            let b = qp.bounds(Var(k));
            lp.add_var(0.0, (b.lower.unwrap_or(f64::NEG_INFINITY), b.upper.unwrap_or(f64::INFINITY)))
        })
        .collect();
    for r in qp.rows() {
        let e: Vec<(minilp::Variable, f64)> = r.terms.iter().map(|&(v, a)| (vars[v.0], a)).collect();
        let op = match r.sense {
            Sense::Le => minilp::ComparisonOp::Le,
            Sense::Ge => minilp::ComparisonOp::Ge,
            Sense::Eq => minilp::ComparisonOp::Eq,
        };
        lp.add_constraint(&e[..], op, r.rhs);
    }
    let targets: Vec<minilp::Variable> = squared.iter().map(|n| vars[var_by_name(qp, n).0]).collect();
    // Epigraph variables z_i >= e_i^2, cut by tangents.
    let epi: Vec<minilp::Variable> = targets.iter().map(|_| lp.add_var(1.0, (0.0, f64::INFINITY))).collect();
    for (&z, &e) in epi.iter().zip(&targets) {
        // Coarse initial tangents keep the first LP bounded and well scaled.
        for a in [0.25, 0.5, 1.0, 2.0] {
            lp.add_constraint(&[(z, 1.0), (e, -2.0 * a)][..], minilp::ComparisonOp::Ge, -a * a);
        }
    }
    let mut sol = lp.solve().expect("reference LP solves");
    for _ in 0..500 {
        let lower = sol.objective();
        let upper: f64 = targets.iter().map(|&e| sol[e].powi(2)).sum();
        if upper - lower <= gap {
            return (lower, upper);
        }
        let cuts: Vec<(minilp::Variable, minilp::Variable, f64)> = epi
            .iter()
            .zip(&targets)
            .filter(|&(&z, &e)| sol[e].powi(2) - sol[z] > gap / squared.len() as f64)
            .map(|(&z, &e)| (z, e, sol[e]))
            .collect();
        for (z, e, a) in cuts {
            sol = sol
                .add_constraint(&[(z, 1.0), (e, -2.0 * a)][..], minilp::ComparisonOp::Ge, -a * a)
                .expect("cut keeps the LP feasible");
        }
    }
    panic!("cutting planes did not close the gap");
}
