//! Algebraic properties of the building blocks on random inputs.

use fps_causal::fdata::{center, inner_product, FunctionalSample, Grid};
use fps_causal::fpca::decompose;
use fps_causal::metrics::{summarize_runs, weighted_f_statistic};
use fps_causal::outcome::fit_truncated;
use nalgebra::{DMatrix, DVector};
use proptest::collection::vec;
use proptest::prelude::*;

fn curve(m: usize) -> impl Strategy<Value = Vec<f64>> {
    vec(-10.0f64..10.0, m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inner_product_is_symmetric_and_bilinear(
        f in curve(17), g in curve(17), h in curve(17), a in -3.0f64..3.0, b in -3.0f64..3.0
    ) {
        let grid = Grid::uniform(17).unwrap();
        let fg = inner_product(&f, &g, &grid).unwrap();
        let gf = inner_product(&g, &f, &grid).unwrap();
        prop_assert!((fg - gf).abs() <= 1e-12 * (1.0 + fg.abs()));
        let combo: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
        let lhs = inner_product(&combo, &h, &grid).unwrap();
        let rhs = a * inner_product(&f, &h, &grid).unwrap() + b * inner_product(&g, &h, &grid).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        prop_assert!(inner_product(&f, &f, &grid).unwrap() >= 0.0);
    }

    #[test]
    fn centering_is_idempotent(values in vec(-5.0f64..5.0, 6 * 9)) {
        let grid = Grid::uniform(9).unwrap();
        let sample = FunctionalSample::new(grid, DMatrix::from_row_slice(6, 9, &values)).unwrap();
        let (once, _) = center(&sample).unwrap();
        let (twice, mean) = center(&once).unwrap();
        prop_assert!(mean.amax() <= 1e-12);
        prop_assert!((once.values() - twice.values()).amax() <= 1e-12);
    }

    #[test]
    fn squared_bias_never_exceeds_average_error(values in vec(-4.0f64..4.0, 5 * 11), truth in curve(11)) {
        let grid = Grid::uniform(11).unwrap();
        let estimates: Vec<DVector<f64>> = values.chunks(11).map(DVector::from_column_slice).collect();
        let report = summarize_runs(&estimates, &DVector::from_column_slice(&truth), &grid).unwrap();
        prop_assert!(report.isb <= report.aise + 1e-6);
    }

    #[test]
    fn unit_weight_f_matches_classical(values in vec(-3.0f64..3.0, 30 * 3)) {
        let x = DMatrix::from_fn(30, 2, |i, j| values[i * 3 + j]);
        let y = DVector::from_fn(30, |i, _| values[i * 3 + 2] + 0.5 * values[i * 3]);
        let f = weighted_f_statistic(&y, &x, &DVector::from_element(30, 1.0)).unwrap().value();
        // Classical F from R² of the OLS fit with intercept.
        let mut design = DMatrix::from_element(30, 3, 1.0);
        design.columns_mut(1, 2).copy_from(&x);
        let coef = (design.transpose() * &design).lu().solve(&(design.transpose() * &y)).unwrap();
        let sse = (&y - &design * coef).norm_squared();
        let sst = y.add_scalar(-y.mean()).norm_squared();
        let r2 = 1.0 - sse / sst;
        let classical = (r2 / 2.0) / ((1.0 - r2) / 27.0);
        prop_assert!((f - classical).abs() <= 1e-8 * (1.0 + classical));
    }

    #[test]
    fn rescaling_weights_leaves_fit_unchanged(
        values in vec(-3.0f64..3.0, 25 * 8), raw in vec(0.1f64..5.0, 25), scale in 0.01f64..100.0
    ) {
        let grid = Grid::uniform(8).unwrap();
        let sample = FunctionalSample::new(grid, DMatrix::from_row_slice(25, 8, &values)).unwrap();
        let model = decompose(&sample).unwrap();
        let ids = vec![0, 1];
        let scores = model.scores_for(&ids);
        let y = DVector::from_fn(25, |i, _| scores[(i, 0)] - 2.0 * scores[(i, 1)] + values[i]);
        let w = DVector::from_column_slice(&raw);
        let base = fit_truncated(&y, &scores, &w, &model, &ids).unwrap();
        let scaled = fit_truncated(&y, &scores, &(&w * scale), &model, &ids).unwrap();
        prop_assert!((&base.curve - &scaled.curve).amax() <= 1e-8 * (1.0 + base.curve.amax()));
    }
}
