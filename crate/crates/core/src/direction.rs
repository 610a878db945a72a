//! Data-driven direction vector.
//!
//! Under by-production and joint disposability the direction points from the
//! median of the normalized data towards the ideal corner: more desirable
//! output, fewer emissions, less emission-generating input. Every column is
//! handled separately.

use crate::dataset::{normalize, Dataset, DatasetError, NormalizedDataset};
use crate::technologies::{DirectionVector, Technology};

/// Components are clamped into `[MIN_COMPONENT, 1]` so that a median sitting
/// on the boundary does not zero out a direction.
pub const MIN_COMPONENT: f64 = 1e-6;

/// Median with the even-length midpoint rule. Panics on an empty slice.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty column");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn clamp(g: f64) -> f64 {
    g.clamp(MIN_COMPONENT, 1.0)
}

/// `g_y = 1 - median(y)`, `g_b = median(b)`, `g_x = 1 - median(xP)` per
/// column. Weak G-disposability uses a fixed unit direction inside its
/// builder; the all-ones vector is returned for it as a marker.
pub fn select_direction(nd: &NormalizedDataset, tech: Technology) -> DirectionVector {
    if tech == Technology::WeakGDisposability {
        return DirectionVector::ones(nd.x_p.cols(), nd.y.cols(), nd.b.cols());
    }
    let per_col = |m: &crate::dataset::Matrix, f: &dyn Fn(f64) -> f64| -> Vec<f64> {
        (0..m.cols()).map(|j| clamp(f(median(&m.column(j))))).collect()
    };
    DirectionVector {
        g_x: per_col(&nd.x_p, &|med| 1.0 - med),
        g_y: per_col(&nd.y, &|med| 1.0 - med),
        g_b: per_col(&nd.b, &|med| med),
    }
}

/// Normalizes `d` and selects the direction.
pub fn direction_for(d: &Dataset, tech: Technology) -> Result<DirectionVector, DatasetError> {
    Ok(select_direction(&normalize(d)?, tech))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Matrix;
    use proptest::prelude::*;

    fn nd(x_p: &[f64], y: &[f64], b: &[f64]) -> NormalizedDataset {
        NormalizedDataset { x_p: Matrix::from_column(x_p), y: Matrix::from_column(y), b: Matrix::from_column(b) }
    }

    #[test]
    fn odd_median_is_middle_value() {
        let g = select_direction(&nd(&[0.0, 0.5, 1.0], &[1.0, 0.0, 0.5], &[0.2, 0.9, 0.0]), Technology::ByProduction);
        assert_eq!(g.g_y, vec![0.5]);
        assert_eq!(g.g_x, vec![0.5]);
        assert_eq!(g.g_b, vec![0.2]);
    }

    #[test]
    fn even_median_is_midpoint() {
        assert_eq!(median(&[0.4, 0.0, 1.0, 0.2]), 0.30000000000000004);
        assert_eq!(median(&[3.0, 1.0]), 2.0);
    }

    #[test]
    fn constant_column_gives_its_value() {
        let g = select_direction(&nd(&[0.5; 4], &[0.5; 4], &[0.5; 4]), Technology::JointDisposability);
        assert_eq!((g.g_x[0], g.g_y[0], g.g_b[0]), (0.5, 0.5, 0.5));
    }

    #[test]
    fn boundary_medians_are_clamped() {
        let g = select_direction(&nd(&[1.0, 1.0, 0.0], &[1.0, 1.0, 0.0], &[0.0, 0.0, 1.0]), Technology::ByProduction);
        assert_eq!(g.g_x, vec![MIN_COMPONENT]);
        assert_eq!(g.g_y, vec![MIN_COMPONENT]);
        assert_eq!(g.g_b, vec![MIN_COMPONENT]);
    }

    #[test]
    fn wgd_returns_unit_marker() {
        let g = select_direction(&nd(&[0.0, 1.0], &[0.0, 1.0], &[0.0, 1.0]), Technology::WeakGDisposability);
        assert_eq!(g, DirectionVector::ones(1, 1, 1));
    }

    #[test]
    fn constant_raw_column_is_an_error() {
        let d = Dataset::new(
            Matrix::zeros(3, 0),
            Matrix::from_column(&[1.0, 2.0, 3.0]),
            Matrix::from_column(&[4.0, 4.0, 4.0]),
            Matrix::from_column(&[1.0, 2.0, 3.0]),
        )
        .unwrap();
        assert!(matches!(direction_for(&d, Technology::ByProduction), Err(DatasetError::ConstantColumn { .. })));
    }

    fn raw(x_p: Vec<f64>, y: Vec<f64>, b: Vec<f64>) -> Dataset {
        Dataset::new(
            Matrix::zeros(x_p.len(), 0),
            Matrix::from_column(&x_p),
            Matrix::from_column(&y),
            Matrix::from_column(&b),
        )
        .unwrap()
    }

    fn spread_column(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.1f64..100.0, n).prop_filter("non-constant", |v| {
            v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min) > 1e-3
        })
    }

    proptest! {
        #[test]
        fn components_in_unit_range(
            (x, y, b) in (2usize..12).prop_flat_map(|n| (spread_column(n), spread_column(n), spread_column(n)))
        ) {
            let g = direction_for(&raw(x, y, b), Technology::ByProduction).unwrap();
            for v in g.g_x.iter().chain(&g.g_y).chain(&g.g_b) {
                prop_assert!((MIN_COMPONENT..=1.0).contains(v));
            }
        }

        #[test]
        fn invariant_to_affine_rescaling(
            (x, y, b) in (2usize..12).prop_flat_map(|n| (spread_column(n), spread_column(n), spread_column(n))),
            scale in 0.01f64..1000.0,
            shift in -50.0f64..50.0,
        ) {
            let g0 = direction_for(&raw(x.clone(), y.clone(), b.clone()), Technology::JointDisposability).unwrap();
            let y2: Vec<f64> = y.iter().map(|v| v * scale + shift + 100.0).collect();
            let g1 = direction_for(&raw(x, y2, b), Technology::JointDisposability).unwrap();
            prop_assert!((g0.g_y[0] - g1.g_y[0]).abs() < 1e-9);
            prop_assert_eq!(g0.g_b, g1.g_b);
        }

        #[test]
        fn duplicating_the_data_changes_nothing(
            (x, y, b) in (2usize..12).prop_flat_map(|n| (spread_column(n), spread_column(n), spread_column(n)))
        ) {
            let twice = |v: &Vec<f64>| v.iter().chain(v).copied().collect::<Vec<_>>();
            let g0 = direction_for(&raw(x.clone(), y.clone(), b.clone()), Technology::ByProduction).unwrap();
            let g1 = direction_for(&raw(twice(&x), twice(&y), twice(&b)), Technology::ByProduction).unwrap();
            prop_assert_eq!(g0, g1);
        }
    }
}
