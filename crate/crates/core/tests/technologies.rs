mod common;

use common::{direction, instance, kelley_sum_of_squares, var_by_name};
use macfrontier::dataset::{Dataset, EmissionFactors, Matrix};
use macfrontier::exec::Execution;
use macfrontier::qp::{self, SolveOptions, Status};
use macfrontier::technologies::*;

const BP: Technology = Technology::ByProduction;
const JD: Technology = Technology::JointDisposability;
const WGD: Technology = Technology::WeakGDisposability;

fn fit(d: &Dataset, tech: Technology, est: Estimator) -> FrontierFit {
    let u = EmissionFactors::from_ratio(d);
    fit_frontier(d, tech, est, &direction(), Some(&u), &Weights::default(), &SolveOptions::default()).unwrap()
}

fn single(x1: f64, x2: f64, x3: f64, y: f64, b: f64) -> Vec<f64> {
    vec![x1, x2, x3, y, b]
}

fn from_rows(rows: &[Vec<f64>]) -> Dataset {
    let col = |k: usize| rows.iter().map(|r| r[k]).collect::<Vec<_>>();
    Dataset::new(
        Matrix::from_columns(&[col(0), col(1)]).unwrap(),
        Matrix::from_column(&col(2)),
        Matrix::from_column(&col(3)),
        Matrix::from_column(&col(4)),
    )
    .unwrap()
}

#[test]
fn one_unit_sits_on_its_own_frontier() {
    let d = from_rows(&[single(8.0, 9.0, 10.0, 6.0, 0.9)]);
    let f = fit(&d, BP, Estimator::Cnls);
    assert!(f.dmus[0].residual.value().abs() <= 1e-8);
    for tech in [BP, JD] {
        let s = solve_dea(&d, 0, tech, &direction(), &Weights::default(), &SolveOptions::default()).unwrap();
        assert!(s.objective.abs() <= 1e-8, "{tech}: {}", s.objective);
    }
}

#[test]
fn identical_units_get_identical_residuals() {
    let mut d = instance(11, 6);
    d = d.permute(&[0, 1, 2, 3, 4, 0]);
    for tech in Technology::ALL {
        for est in [Estimator::Cnls, Estimator::Cer { tau: 0.5 }] {
            let f = fit(&d, tech, est);
            // Only the residuals are identified: the loss is flat along some
            // slope directions, so the two units' hyperplanes may differ there.
            let r = f.residuals();
            assert!((r[0] - r[5]).abs() <= 1e-6, "{tech} {est:?}: {} vs {}", r[0], r[5]);
        }
    }
}

#[test]
fn five_unit_by_production_loss_matches_cutting_plane_reference() {
    let d = instance(5, 5);
    let m = build_cnls(&d, BP, &direction(), None, &Weights::default()).unwrap();
    let f = fit(&d, BP, Estimator::Cnls);
    let names: Vec<String> = (1..=5).map(|i| format!("eps_{i}")).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let (lower, upper) = kelley_sum_of_squares(&m.qp, &names, 1e-7);
    assert!(f.objective >= lower - 1e-4 && f.objective <= upper + 1e-4, "{} not in [{lower}, {upper}]", f.objective);
}

fn max_eps_minus(f: &FrontierFit) -> (f64, usize) {
    let em: Vec<f64> = f
        .dmus
        .iter()
        .map(|x| match x.residual {
            Residual::Cer { eps_minus, .. } => eps_minus,
            Residual::Cnls { .. } => 0.0,
        })
        .collect();
    (em.iter().copied().fold(0.0, f64::max), em.iter().filter(|&&e| e <= 1e-4).count())
}

#[test]
fn high_expectiles_close_in_on_the_envelope() {
    // Points below the fitted surface pay tau/(1 - tau) times more than points
    // above it, so their shortfall shrinks in proportion to 1 - tau.
    let d = instance(21, 10);
    for tech in Technology::ALL {
        let mut last = f64::INFINITY;
        for tau in [0.9, 0.999, 0.99999] {
            let (worst, inside) = max_eps_minus(&fit(&d, tech, Estimator::Cer { tau }));
            assert!(worst <= last + 1e-9, "{tech} tau={tau}: {worst} after {last}");
            if tau == 0.99999 {
                assert!(inside >= 9, "{tech}: only {inside} of 10 on or below the frontier");
            }
            last = worst;
        }
        assert!(last <= 1e-3, "{tech}: {last}");
    }
}

#[test]
fn raw_expectile_residuals_are_complementary() {
    let d = instance(31, 12);
    let u = EmissionFactors::from_ratio(&d);
    for tech in Technology::ALL {
        for tau in [0.05, 0.5, 0.95] {
            let m = build_cer(&d, tech, tau, &direction(), Some(&u), &Weights::default()).unwrap();
            let sol = qp::solve(&m.qp, &SolveOptions::default()).unwrap();
            assert_eq!(sol.status, Status::Optimal);
            let x = sol.values().unwrap();
            for i in 1..=d.n_dmu() {
                let p = x[var_by_name(&m.qp, &format!("epsplus_{i}")).0];
                let n = x[var_by_name(&m.qp, &format!("epsminus_{i}")).0];
                assert!(p * n <= 1e-6, "{tech} tau={tau} dmu {i}: {p} * {n}");
            }
        }
    }
}

#[test]
fn decoded_fits_satisfy_their_constraints() {
    let d = instance(41, 15);
    let u = EmissionFactors::from_ratio(&d);
    for tech in Technology::ALL {
        for est in [Estimator::Cnls, Estimator::Cer { tau: 0.8 }] {
            let m = match est {
                Estimator::Cnls => build_cnls(&d, tech, &direction(), Some(&u), &Weights::default()),
                Estimator::Cer { tau } => build_cer(&d, tech, tau, &direction(), Some(&u), &Weights::default()),
            }
            .unwrap();
            let sol = qp::solve(&m.qp, &SolveOptions::default()).unwrap();
            let f = m.decode(sol.values().unwrap());
            let rep = m.check_fit(&f, 1e-6).unwrap();
            assert!(rep.is_feasible(), "{tech} {est:?}: {:?} {}", rep.worst_group(), rep.max_violation());
            if est == Estimator::Cnls {
                assert!(f.residuals().iter().all(|&e| e >= -1e-9));
            }
        }
    }
}

#[test]
fn every_hyperplane_supports_the_data_from_above() {
    let d = instance(51, 12);
    for tech in [JD, WGD] {
        let f = fit(&d, tech, Estimator::Cnls);
        for i in 0..d.n_dmu() {
            let own = f.dmus[i].value_at(d.x_n.row(i), d.x_p.row(i), d.y.row(i), d.b.row(i));
            for h in 0..d.n_dmu() {
                let other = f.dmus[h].value_at(d.x_n.row(i), d.x_p.row(i), d.y.row(i), d.b.row(i));
                assert!(own <= other + 1e-6, "{tech}: unit {i} own {own} > unit {h}'s {other}");
            }
        }
    }
}

#[test]
fn permuting_units_permutes_residuals() {
    let d = instance(61, 9);
    let perm = [4, 2, 7, 0, 8, 1, 3, 6, 5];
    let p = d.permute(&perm);
    for tech in Technology::ALL {
        for est in [Estimator::Cnls, Estimator::Cer { tau: 0.65 }] {
            let a = fit(&d, tech, est).residuals();
            let b = fit(&p, tech, est).residuals();
            for (k, &src) in perm.iter().enumerate() {
                assert!((b[k] - a[src]).abs() <= 1e-5, "{tech} {est:?}: {} vs {}", b[k], a[src]);
            }
        }
    }
}

#[test]
fn output_dominated_unit_has_positive_output_expansion() {
    // Same inputs and emission, output 2 vs 1. The intensity simplex has two
    // vertices; the best one puts all weight on the better unit, so the
    // expansion is (2 - 1) / g_y.
    let d = from_rows(&[single(10.0, 10.0, 10.0, 2.0, 1.0), single(10.0, 10.0, 10.0, 1.0, 1.0)]);
    let g = DirectionVector::new(vec![1.0], vec![0.5], vec![1.0]).unwrap();
    let w = Weights { input: 0.0, desirable: 1.0, undesirable: 0.0 };
    let vertex_best = [2.0, 1.0].iter().map(|&y: &f64| (y - 1.0) / 0.5).fold(0.0, f64::max);
    let s = solve_dea(&d, 1, BP, &g, &w, &SolveOptions::default()).unwrap();
    assert!(s.theta_j > 0.0);
    assert!((s.theta_j - vertex_best).abs() <= 1e-6, "{} vs {vertex_best}", s.theta_j);
    assert!((s.lambda.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    assert!((s.mu.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
}

#[test]
fn joint_disposability_scores_the_efficient_unit_zero() {
    // Unit 0 uses less fuel, emits less and produces more. With g = (1, 0.5, 0.1)
    // the fuel and emission rows both give theta = 2 (1 - lambda_1), and the
    // output row then holds for every lambda, so the best vertex is lambda_0 = 1.
    let d = from_rows(&[single(10.0, 10.0, 8.0, 2.0, 0.8), single(10.0, 10.0, 10.0, 1.0, 1.0)]);
    let g = DirectionVector::new(vec![1.0], vec![0.5], vec![0.1]).unwrap();
    let s = solve_dea(&d, 0, JD, &g, &Weights::default(), &SolveOptions::default()).unwrap();
    assert!(s.theta.abs() <= 1e-8);
    let s = solve_dea(&d, 1, JD, &g, &Weights::default(), &SolveOptions::default()).unwrap();
    assert!((s.theta - 2.0).abs() <= 1e-6, "{}", s.theta);
}

#[test]
fn joint_disposability_dea_equals_cnls_residuals() {
    for seed in [71, 72] {
        let d = instance(seed, 10);
        let r = equivalence_check(
            &d,
            JD,
            &direction(),
            &Weights::default(),
            1e-4,
            &SolveOptions::default(),
            Execution::Sequential,
        )
        .unwrap();
        assert!(r.all_within_tol(), "seed {seed}: max discrepancy {}", r.max_discrepancy());
    }
}

#[test]
fn identical_units_score_zero_on_both_sides() {
    let d = from_rows(&vec![single(9.0, 11.0, 10.0, 7.5, 0.8); 4]);
    for tech in [BP, JD] {
        let r = equivalence_check(
            &d,
            tech,
            &direction(),
            &Weights::default(),
            1e-4,
            &SolveOptions::default(),
            Execution::Parallel,
        )
        .unwrap();
        for row in &r.rows {
            assert!(row.dea_objective.abs() <= 1e-6 && row.cnls_residual.abs() <= 1e-6, "{tech}: {row:?}");
        }
    }
}

#[test]
fn bad_inputs_are_rejected() {
    let d = instance(81, 4);
    let w = Weights::default();
    assert!(matches!(build_cnls(&d, WGD, &direction(), None, &w), Err(ModelError::MissingEmissionFactors)));
    for tau in [0.0, 1.0, -0.2, f64::NAN] {
        assert!(matches!(build_cer(&d, BP, tau, &direction(), None, &w), Err(ModelError::InvalidTau(_))));
    }
    let wrong = DirectionVector::new(vec![0.5, 0.5], vec![0.6], vec![0.4]).unwrap();
    assert!(matches!(build_cnls(&d, JD, &wrong, None, &w), Err(ModelError::DimensionMismatch(_))));
    assert!(matches!(build_dea(&d, 4, JD, &direction(), &w), Err(ModelError::InvalidDmu(4))));
    assert!(matches!(build_dea(&d, 0, WGD, &direction(), &w), Err(ModelError::UnsupportedTechnology(_))));
}
