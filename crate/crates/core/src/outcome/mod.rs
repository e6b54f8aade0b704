//! Weighted scalar-on-function outcome models fitted by basis truncation.
//!
//! The coefficient function is expanded on eigenfunctions of the treatment,
//! `μ(t) = Σ_k μ_k φ_k(t)`, and the coefficients solve
//! `min Σ_i w_i (Y_i − Ȳ − Σ_k μ_k B_ik)²` with `Ȳ` the unweighted mean.

pub mod avi;
pub mod bootstrap;
pub mod interaction;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fdata::{inner_product, Grid};
use crate::fpca::FpcaModel;
use crate::linalg::solve_spd;

pub use avi::{avi_rank, avi_select, AviRanking};
pub use bootstrap::{bootstrap_bands, BootstrapBands, BootstrapOptions};
pub use interaction::{fit_interaction, CoefficientRow, CoefficientTable, InteractionFit};

#[derive(Debug, Clone, PartialEq)]
pub struct EffectEstimate {
    pub grid: Grid,
    /// `μ̂_k`, aligned with `basis_ids`.
    pub basis_coeffs: DVector<f64>,
    pub intercept: f64,
    /// `μ̂` on the grid.
    pub curve: DVector<f64>,
    /// Eigenfunction indices (zero-based) of the basis.
    pub basis_ids: Vec<usize>,
    pub weighted: bool,
}

impl EffectEstimate {
    pub(crate) fn from_coeffs(
        model: &FpcaModel,
        basis_ids: &[usize],
        basis_coeffs: DVector<f64>,
        intercept: f64,
        weighted: bool,
    ) -> Self {
        let mut curve = DVector::zeros(model.grid.len());
        for (c, &k) in basis_coeffs.iter().zip(basis_ids) {
            curve += model.eigenfunctions.row(k).transpose() * *c;
        }
        Self {
            grid: model.grid.clone(),
            basis_coeffs,
            intercept,
            curve,
            basis_ids: basis_ids.to_vec(),
            weighted,
        }
    }
}

pub(crate) fn check_basis(
    model: &FpcaModel,
    scores: &DMatrix<f64>,
    basis_ids: &[usize],
) -> Result<()> {
    if basis_ids.is_empty() {
        return Err(Error::InvalidArgument(
            "basis must contain at least one component".into(),
        ));
    }
    if let Some(&k) = basis_ids.iter().find(|&&k| k >= model.n_components()) {
        return Err(Error::InvalidArgument(format!(
            "basis component {k} out of range (model has {})",
            model.n_components()
        )));
    }
    if scores.ncols() != basis_ids.len() {
        return Err(Error::Dimension {
            context: "score columns",
            expected: basis_ids.len(),
            actual: scores.ncols(),
        });
    }
    Ok(())
}

pub(crate) fn check_weights(weights: &DVector<f64>, n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::Dimension {
            context: "weights",
            expected: n,
            actual: weights.len(),
        });
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::InvalidArgument(
            "weights must be positive and finite".into(),
        ));
    }
    Ok(())
}

/// Weighted normal equations `(XᵀWX) b = XᵀW y`.
pub(crate) fn weighted_normal_equations(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    weights: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let wx = crate::balance::weighted_rows(x, weights);
    (wx.tr_mul(x), wx.tr_mul(y))
}

pub fn fit_truncated(
    outcome: &DVector<f64>,
    scores: &DMatrix<f64>,
    weights: &DVector<f64>,
    model: &FpcaModel,
    basis_ids: &[usize],
) -> Result<EffectEstimate> {
    let n = outcome.len();
    if scores.nrows() != n {
        return Err(Error::Dimension {
            context: "score rows",
            expected: n,
            actual: scores.nrows(),
        });
    }
    check_basis(model, scores, basis_ids)?;
    check_weights(weights, n)?;
    if basis_ids.len() >= n {
        return Err(Error::InsufficientData(format!(
            "{} basis components need more than {n} observations",
            basis_ids.len()
        )));
    }
    let ybar = outcome.mean();
    let centered = outcome.add_scalar(-ybar);
    let (xtwx, xtwy) = weighted_normal_equations(scores, &centered, weights);
    let coeffs = solve_spd(&xtwx, &xtwy)
        .ok_or_else(|| Error::Collinearity("weighted score cross-product is singular".into()))?;
    let weighted = weights.iter().any(|w| *w != weights[0]);
    Ok(EffectEstimate::from_coeffs(
        model, basis_ids, coeffs, ybar, weighted,
    ))
}

/// `μ̂_0 + ∫ μ̂(t) x(t) dt`.
pub fn integrated_effect(estimate: &EffectEstimate, x: &[f64]) -> Result<f64> {
    Ok(estimate.intercept + inner_product(estimate.curve.as_slice(), x, &estimate.grid)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdata::FunctionalSample;
    use crate::simgen::{eigenfunction_matrix, POPULATION_EIGENVALUES};

    fn population_model(n: usize) -> (FpcaModel, DMatrix<f64>) {
        let grid = Grid::uniform(64).unwrap();
        let phi = eigenfunction_matrix(&grid);
        let scores = DMatrix::from_fn(n, 6, |i, k| {
            ((i * (k + 3)) as f64 * 0.731).sin() * (6 - k) as f64
        });
        let sample = FunctionalSample::new(grid, &scores * &phi).unwrap();
        let model = FpcaModel::from_components(
            &sample,
            phi,
            DVector::from_column_slice(&POPULATION_EIGENVALUES),
        )
        .unwrap();
        let b = model.scores.clone();
        (model, b)
    }

    #[test]
    fn constant_outcome_gives_zero_effect() {
        let (model, b) = population_model(30);
        let y = DVector::from_element(30, 4.5);
        let w = DVector::from_fn(30, |i, _| 1.0 + (i % 3) as f64);
        let ids = [0, 1, 2];
        let fit = fit_truncated(&y, &b.select_columns(&ids), &w, &model, &ids).unwrap();
        assert!(fit.basis_coeffs.amax() < 1e-12);
        assert_eq!(fit.intercept, 4.5);
        assert!(fit.weighted);
    }

    #[test]
    fn noiseless_linear_outcome_recovered() {
        let (model, b) = population_model(40);
        let ids = [0, 1, 2, 3];
        let truth = DVector::from_column_slice(&[2.0, 1.0, 0.5, 0.5]);
        let bs = b.select_columns(&ids);
        let y = (&bs * &truth).add_scalar(1.0);
        let fit = fit_truncated(&y, &bs, &DVector::from_element(40, 1.0), &model, &ids).unwrap();
        assert!((&fit.basis_coeffs - truth).amax() < 1e-10);
        let x = model.eigenfunction(0);
        let pred = integrated_effect(&fit, &x).unwrap();
        assert!((pred - fit.intercept - 2.0).abs() < 1e-3);
        let x5 = model.eigenfunction(4);
        assert!((integrated_effect(&fit, &x5).unwrap() - fit.intercept).abs() < 1e-3);
        assert_eq!(
            integrated_effect(&fit, &vec![0.0; 64]).unwrap(),
            fit.intercept
        );
    }

    #[test]
    fn duplicated_row_with_halved_weight_is_equivalent() {
        let (model, b) = population_model(25);
        let ids = [0, 1];
        let bs = b.select_columns(&ids);
        let y = DVector::from_fn(25, |i, _| (i as f64 * 0.3).cos() * 3.0 + i as f64 * 0.1);
        let w = DVector::from_fn(25, |i, _| 0.5 + (i % 4) as f64 * 0.25);
        let base = fit_truncated(&y, &bs, &w, &model, &ids).unwrap();

        let mut rows: Vec<usize> = (0..25).collect();
        rows.push(7);
        let bs2 = bs.select_rows(&rows);
        let mut w2 = w.select_rows(&rows);
        w2[7] /= 2.0;
        w2[25] /= 2.0;
        // Ȳ is unweighted and would move with the duplicate; hold it at the original value.
        let y2 = y.select_rows(&rows);
        let ybar = y.mean();
        let fit2_centered = {
            let (a, r) = weighted_normal_equations(&bs2, &y2.add_scalar(-ybar), &w2);
            solve_spd(&a, &r).unwrap()
        };
        assert!((base.basis_coeffs - fit2_centered).amax() < 1e-10);
    }

    #[test]
    fn weight_rescaling_invariance_and_normal_equations() {
        let (model, b) = population_model(30);
        let ids = [0, 2, 3];
        let bs = b.select_columns(&ids);
        let y = DVector::from_fn(30, |i, _| ((i * i) as f64 * 0.17).sin() * 5.0);
        let w = DVector::from_fn(30, |i, _| 0.2 + (i % 5) as f64);
        let a = fit_truncated(&y, &bs, &w, &model, &ids).unwrap();
        let scaled = fit_truncated(&y, &bs, &(&w * 7.5), &model, &ids).unwrap();
        assert!((&a.basis_coeffs - &scaled.basis_coeffs).amax() < 1e-10);
        let resid = y.add_scalar(-y.mean()) - &bs * &a.basis_coeffs;
        let grad = bs.tr_mul(&resid.component_mul(&w));
        assert!(grad.amax() < 1e-8);
        for (c, &k) in a.basis_coeffs.iter().zip(&ids) {
            let ip =
                inner_product(a.curve.as_slice(), &model.eigenfunction(k), &model.grid).unwrap();
            assert!((ip - c).abs() < 1e-8);
        }
        let off = inner_product(a.curve.as_slice(), &model.eigenfunction(1), &model.grid).unwrap();
        assert!(off.abs() < 1e-8);
    }

    #[test]
    fn input_validation() {
        let (model, b) = population_model(10);
        let y = DVector::from_element(10, 1.0);
        let w = DVector::from_element(10, 1.0);
        assert!(fit_truncated(&y, &b.select_columns(&[0]), &w, &model, &[0, 1]).is_err());
        assert!(fit_truncated(&y, &b.select_columns(&[0]), &w, &model, &[9]).is_err());
        let bad = DVector::from_fn(10, |i, _| if i == 3 { 0.0 } else { 1.0 });
        assert!(fit_truncated(&y, &b.select_columns(&[0]), &bad, &model, &[0]).is_err());
        let dup = DMatrix::from_fn(10, 2, |i, _| b[(i, 0)]);
        assert!(matches!(
            fit_truncated(&y, &dup, &w, &model, &[0, 1]),
            Err(Error::Collinearity(_))
        ));
    }
}
