//! Method-of-moments weights against a scalar bisection and symmetry fixtures.

mod common;

use common::{confounded_design, scalar_root, unit_columns, whiten};
use fps_causal::balance::{estimate_weights_param, solve_mom, weight_formula, SolverDiagnostics};
use fps_causal::fpca::StandardizedDesign;
use nalgebra::{DMatrix, DVector};

fn columns(design: &StandardizedDesign) -> (Vec<f64>, Vec<f64>) {
    (
        design.a_star.iter().copied().collect(),
        design.c_star.iter().copied().collect(),
    )
}

#[test]
fn scalar_bisection_matches_newton_root() {
    let mut checked = 0;
    for seed in 0..40 {
        let design = confounded_design(seed, 50, 1, 1, 0.4);
        let (a, c) = columns(&design);
        let Some(beta) = scalar_root(&a, &c) else {
            continue;
        };
        let Ok(fit) = solve_mom(&design) else {
            continue;
        };
        assert!(fit.exact);
        assert!(
            fit.moment_residual_norm <= 1e-8,
            "{}",
            fit.moment_residual_norm
        );
        assert!(
            (fit.beta[(0, 0)] - beta).abs() <= 1e-8,
            "seed {seed}: {} vs {beta}",
            fit.beta[(0, 0)]
        );
        let s2 = a
            .iter()
            .zip(&c)
            .map(|(x, y)| (x - beta * y).powi(2))
            .sum::<f64>()
            / 50.0;
        assert!((fit.sigma[(0, 0)] - s2).abs() <= 1e-8);
        let lib = estimate_weights_param(&design).unwrap().weights;
        for i in 0..50 {
            let w = weight_formula(
                &[a[i]],
                &[c[i]],
                &DMatrix::from_element(1, 1, beta),
                &DMatrix::from_element(1, 1, s2),
            )
            .unwrap();
            assert!(
                (lib[i] - w).abs() <= 1e-8 * w.max(1.0),
                "seed {seed} row {i}: {} vs {w}, beta diff {}",
                lib[i],
                fit.beta[(0, 0)] - beta
            );
        }
        checked += 1;
    }
    assert!(checked >= 5, "only {checked} fixtures had a bracketed root");
}

#[test]
fn orthogonal_design_gives_unit_weights() {
    // Mirroring every row in C* makes the unweighted cross-moment vanish, and
    // whitened scores make Σ = I, so β = 0 solves the system.
    let z = common::normals(21, 30 * 4);
    let half = DMatrix::from_fn(30, 4, |i, j| z[i * 4 + j]);
    let mut a = DMatrix::zeros(60, 2);
    let mut c = DMatrix::zeros(60, 2);
    for i in 0..30 {
        for k in 0..2 {
            a[(i, k)] = half[(i, k)];
            a[(30 + i, k)] = half[(i, k)];
            c[(i, k)] = half[(i, 2 + k)];
            c[(30 + i, k)] = -half[(i, 2 + k)];
        }
    }
    let a = whiten(&a);
    let c = unit_columns(&c);
    let design = StandardizedDesign::from_parts(a, c).unwrap();
    let w = estimate_weights_param(&design).unwrap();
    let SolverDiagnostics::Parametric(fit) = &w.solver else {
        panic!("parametric diagnostics")
    };
    assert!(fit.beta.amax() <= 1e-8);
    assert!(fit.moment_residual_norm <= 1e-8);
    assert!((&w.weights - DVector::from_element(60, 1.0)).amax() <= 1e-8);
}

#[test]
fn weights_are_invariant_to_rotating_covariates() {
    let angle: f64 = 0.7;
    let q = DMatrix::from_row_slice(2, 2, &[angle.cos(), -angle.sin(), angle.sin(), angle.cos()]);
    let mut checked = 0;
    for seed in 100..130 {
        let design = confounded_design(seed, 80, 1, 2, 0.3);
        let Ok(fit) = solve_mom(&design) else {
            continue;
        };
        if !fit.exact {
            continue;
        }
        let rotated =
            StandardizedDesign::from_parts(design.a_star.clone(), &design.c_star * &q).unwrap();
        let original = estimate_weights_param(&design).unwrap().weights;
        let turned = estimate_weights_param(&rotated).unwrap().weights;
        assert!((&original - &turned).amax() <= 1e-6, "seed {seed}");
        checked += 1;
    }
    assert!(checked >= 3, "only {checked} fixtures had an exact root");
}
