//! Functional principal component analysis and score standardization.
//!
//! The sample covariance operator is discretized with the grid's quadrature
//! weights `W`: the eigenproblem is solved for `W^{1/2} S W^{1/2}` and the
//! eigenvectors are mapped back through `W^{-1/2}`, which makes the
//! eigenfunctions orthonormal in the quadrature inner product. All moments use
//! divisor `n`, so the eigenvalues equal the second moments of the scores.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fdata::{center, FunctionalSample, Grid};
use crate::linalg::{inv_sqrt_spd, sorted_symmetric_eigen};

/// Relative eigenvalue floor below which components are treated as numerical noise.
pub const EIGENVALUE_FLOOR: f64 = 1e-10;

/// Largest admissible condition number of the covariate second-moment matrix.
pub const MAX_COVARIATE_CONDITION: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct FpcaModel {
    pub grid: Grid,
    pub mean: DVector<f64>,
    /// `K × m`; row `k` is eigenfunction `k` evaluated on the grid.
    pub eigenfunctions: DMatrix<f64>,
    /// Nonincreasing, strictly positive.
    pub eigenvalues: DVector<f64>,
    /// `n × K`; `scores[(i, k)] = ⟨X_i − mean, φ_k⟩`.
    pub scores: DMatrix<f64>,
    /// Cumulative proportion of variance explained.
    pub pve: DVector<f64>,
}

impl FpcaModel {
    /// Model assembled from known components (e.g. analytic eigenfunctions).
    /// Scores are computed by quadrature against `sample` centered at its mean.
    pub fn from_components(
        sample: &FunctionalSample,
        eigenfunctions: DMatrix<f64>,
        eigenvalues: DVector<f64>,
    ) -> Result<Self> {
        if eigenfunctions.ncols() != sample.m() {
            return Err(Error::Dimension {
                context: "eigenfunction length",
                expected: sample.m(),
                actual: eigenfunctions.ncols(),
            });
        }
        if eigenvalues.len() != eigenfunctions.nrows() {
            return Err(Error::Dimension {
                context: "eigenvalue count",
                expected: eigenfunctions.nrows(),
                actual: eigenvalues.len(),
            });
        }
        let (centered, mean) = center(sample)?;
        let scores = project(centered.values(), &eigenfunctions, sample.grid());
        let pve = cumulative_pve(&eigenvalues);
        Ok(Self {
            grid: sample.grid().clone(),
            mean,
            eigenfunctions,
            eigenvalues,
            scores,
            pve,
        })
    }

    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenfunction(&self, k: usize) -> Vec<f64> {
        self.eigenfunctions.row(k).iter().copied().collect()
    }

    /// Smallest rank whose cumulative PVE reaches `threshold`.
    pub fn select_rank(&self, threshold: f64) -> Result<usize> {
        select_rank(self.eigenvalues.as_slice(), threshold)
    }

    /// Score columns for the given components, `n × ids.len()`.
    pub fn scores_for(&self, ids: &[usize]) -> DMatrix<f64> {
        self.scores.select_columns(ids)
    }

    /// Scores of new curves (centered at the model mean) on components `ids`.
    pub fn project(&self, sample: &FunctionalSample, ids: &[usize]) -> Result<DMatrix<f64>> {
        if sample.m() != self.grid.len() {
            return Err(Error::Dimension {
                context: "projection grid",
                expected: self.grid.len(),
                actual: sample.m(),
            });
        }
        let mut centered = sample.values().clone();
        for (j, mut col) in centered.column_iter_mut().enumerate() {
            col.add_scalar_mut(-self.mean[j]);
        }
        let basis = self.eigenfunctions.select_rows(ids);
        Ok(project(&centered, &basis, &self.grid))
    }
}

/// Quadrature scores of the rows of `values` on the rows of `basis`.
fn project(values: &DMatrix<f64>, basis: &DMatrix<f64>, grid: &Grid) -> DMatrix<f64> {
    let w = DVector::from_column_slice(grid.quad_weights());
    let weighted_basis =
        DMatrix::from_fn(basis.ncols(), basis.nrows(), |j, k| basis[(k, j)] * w[j]);
    values * weighted_basis
}

fn cumulative_pve(eigenvalues: &DVector<f64>) -> DVector<f64> {
    let mut running = 0.0;
    let cumulative: Vec<f64> = eigenvalues
        .iter()
        .map(|v| {
            running += v;
            running
        })
        .collect();
    let total = running;
    DVector::from_iterator(cumulative.len(), cumulative.into_iter().map(|c| c / total))
}

pub fn decompose(sample: &FunctionalSample) -> Result<FpcaModel> {
    let n = sample.n();
    let grid = sample.grid();
    if grid.quad_weights().iter().any(|w| *w <= 0.0) {
        return Err(Error::InvalidGrid(
            "FPCA requires strictly positive quadrature weights".into(),
        ));
    }
    let (centered, mean) = center(sample)?;
    let sqrt_w = DVector::from_iterator(grid.len(), grid.quad_weights().iter().map(|w| w.sqrt()));

    let mut scaled = centered.values().clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= sqrt_w[j];
    }
    let operator = scaled.tr_mul(&scaled) / n as f64;
    let (values, vectors) = sorted_symmetric_eigen(&operator);

    let top = values.get(0).copied().unwrap_or(0.0);
    let max_rank = (n - 1).min(values.len());
    let kept = values
        .iter()
        .take(max_rank)
        .take_while(|&&v| top > 0.0 && v > 0.0 && v >= EIGENVALUE_FLOOR * top)
        .count();

    let m = grid.len();
    let mut eigenfunctions = DMatrix::zeros(kept, m);
    let mut unit_vectors = DMatrix::zeros(m, kept);
    for k in 0..kept {
        let mut u = vectors.column(k).into_owned();
        let phi = DVector::from_iterator(m, (0..m).map(|j| u[j] / sqrt_w[j]));
        // Sign convention: the eigenfunction entry of largest magnitude is positive.
        let lead = phi
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |(bi, bv), (i, v)| {
                if v.abs() > bv {
                    (i, v.abs())
                } else {
                    (bi, bv)
                }
            })
            .0;
        let sign = if phi[lead] < 0.0 { -1.0 } else { 1.0 };
        u *= sign;
        for j in 0..m {
            eigenfunctions[(k, j)] = sign * phi[j];
        }
        unit_vectors.set_column(k, &u);
    }
    let scores = &scaled * &unit_vectors;
    let eigenvalues = DVector::from_iterator(kept, values.iter().take(kept).copied());
    let pve = cumulative_pve(&eigenvalues);

    Ok(FpcaModel {
        grid: grid.clone(),
        mean,
        eigenfunctions,
        eigenvalues,
        scores,
        pve,
    })
}

/// Smallest `L` with cumulative PVE of `eigenvalues[..L]` at least `threshold`.
pub fn select_rank(eigenvalues: &[f64], threshold: f64) -> Result<usize> {
    if eigenvalues.is_empty() {
        return Err(Error::InsufficientData(
            "model has no retained components".into(),
        ));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "PVE threshold must lie in (0, 1], got {threshold}"
        )));
    }
    let pve = cumulative_pve(&DVector::from_column_slice(eigenvalues));
    Ok(pve
        .iter()
        .position(|&p| p >= threshold)
        .map_or(eigenvalues.len(), |k| k + 1))
}

/// Standardized FPC scores and whitened covariates.
#[derive(Debug, Clone)]
pub struct StandardizedDesign {
    /// `n × L`, column `k` is `λ_k^{-1/2} A_k`.
    pub a_star: DMatrix<f64>,
    /// `n × p`, centered covariates times `Γ_C^{-1/2}`.
    pub c_star: DMatrix<f64>,
    /// `Γ_C^{-1/2}` (`p × p`).
    pub gamma_c_half_inv: DMatrix<f64>,
    /// Column means removed from the raw covariates.
    pub covariate_means: DVector<f64>,
}

impl StandardizedDesign {
    /// Design assembled from already standardized blocks.
    pub fn from_parts(a_star: DMatrix<f64>, c_star: DMatrix<f64>) -> Result<Self> {
        if a_star.nrows() != c_star.nrows() {
            return Err(Error::Dimension {
                context: "design rows",
                expected: a_star.nrows(),
                actual: c_star.nrows(),
            });
        }
        let p = c_star.ncols();
        Ok(Self {
            a_star,
            c_star,
            gamma_c_half_inv: DMatrix::identity(p, p),
            covariate_means: DVector::zeros(p),
        })
    }

    pub fn n(&self) -> usize {
        self.a_star.nrows()
    }

    /// Number of standardized scores.
    pub fn rank(&self) -> usize {
        self.a_star.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.c_star.ncols()
    }

    /// Bootstrap or subset rows.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            a_star: self.a_star.select_rows(rows),
            c_star: self.c_star.select_rows(rows),
            gamma_c_half_inv: self.gamma_c_half_inv.clone(),
            covariate_means: self.covariate_means.clone(),
        }
    }
}

pub fn standardize(
    model: &FpcaModel,
    rank: usize,
    covariates: &DMatrix<f64>,
) -> Result<StandardizedDesign> {
    let n = model.scores.nrows();
    if rank == 0 || rank > model.n_components() {
        return Err(Error::InvalidArgument(format!(
            "rank must lie in 1..={}, got {rank}",
            model.n_components()
        )));
    }
    if covariates.nrows() != n {
        return Err(Error::Dimension {
            context: "covariate rows",
            expected: n,
            actual: covariates.nrows(),
        });
    }
    if covariates.ncols() == 0 {
        return Err(Error::InvalidArgument(
            "at least one covariate is required".into(),
        ));
    }
    let mut a_star = model.scores.columns(0, rank).into_owned();
    for (k, mut col) in a_star.column_iter_mut().enumerate() {
        col /= model.eigenvalues[k].sqrt();
    }

    let (c_star, half_inv, means) = whiten_covariates(covariates)?;
    Ok(StandardizedDesign {
        a_star,
        c_star,
        gamma_c_half_inv: half_inv,
        covariate_means: means,
    })
}

/// Design from raw score columns: each column is centered and scaled to unit
/// second moment. Used when scores come from a fixed basis applied to a
/// resampled sample.
pub fn standardize_scores(
    scores: &DMatrix<f64>,
    covariates: &DMatrix<f64>,
) -> Result<StandardizedDesign> {
    let n = scores.nrows();
    if covariates.nrows() != n {
        return Err(Error::Dimension {
            context: "covariate rows",
            expected: n,
            actual: covariates.nrows(),
        });
    }
    if scores.ncols() == 0 || covariates.ncols() == 0 {
        return Err(Error::InvalidArgument(
            "scores and covariates must be nonempty".into(),
        ));
    }
    let mut a_star = scores.clone();
    for mut col in a_star.column_iter_mut() {
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
        let rms = (col.norm_squared() / n as f64).sqrt();
        if rms <= 0.0 {
            return Err(Error::InsufficientData(
                "score column has zero variance".into(),
            ));
        }
        col /= rms;
    }
    let (c_star, half_inv, means) = whiten_covariates(covariates)?;
    Ok(StandardizedDesign {
        a_star,
        c_star,
        gamma_c_half_inv: half_inv,
        covariate_means: means,
    })
}

fn whiten_covariates(
    covariates: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
    let n = covariates.nrows();
    let means = DVector::from_iterator(
        covariates.ncols(),
        covariates.column_iter().map(|c| c.sum() / n as f64),
    );
    let mut centered = covariates.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    let second_moment = centered.tr_mul(&centered) / n as f64;
    let half_inv = inv_sqrt_spd(&second_moment, MAX_COVARIATE_CONDITION)?;
    Ok((&centered * &half_inv, half_inv, means))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdata::inner_product;
    use std::f64::consts::{PI, SQRT_2};

    fn rank_one_sample() -> FunctionalSample {
        let grid = Grid::uniform(128).unwrap();
        // a_i = ±2 gives sample variance (divisor n) exactly 4.
        let coeffs = [2.0, -2.0, 2.0, -2.0, 2.0, -2.0];
        let values = DMatrix::from_fn(coeffs.len(), 128, |i, j| {
            coeffs[i] * SQRT_2 * (2.0 * PI * grid.points()[j]).sin()
        });
        FunctionalSample::new(grid, values).unwrap()
    }

    #[test]
    fn rank_one_recovery() {
        let model = decompose(&rank_one_sample()).unwrap();
        assert_eq!(model.n_components(), 1);
        assert!((model.eigenvalues[0] - 4.0).abs() < 1e-3);
        let phi = model.eigenfunction(0);
        let truth: Vec<f64> = model
            .grid
            .points()
            .iter()
            .map(|t| SQRT_2 * (2.0 * PI * t).sin())
            .collect();
        let err: f64 = phi
            .iter()
            .zip(&truth)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "max error {err}");
    }

    #[test]
    fn identical_curves_have_no_components() {
        let grid = Grid::uniform(16).unwrap();
        let values = DMatrix::from_fn(2, 16, |_, j| j as f64);
        let model = decompose(&FunctionalSample::new(grid, values).unwrap()).unwrap();
        assert_eq!(model.n_components(), 0);
        assert!(matches!(
            model.select_rank(0.95),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn rank_selection_on_population_eigenvalues() {
        let ev = [16.0, 12.0, 8.0, 4.0, 1.0, 0.5];
        assert_eq!(select_rank(&ev, 0.95).unwrap(), 4);
        assert_eq!(select_rank(&ev, 0.99).unwrap(), 6);
        assert_eq!(select_rank(&[3.0], 0.5).unwrap(), 1);
        assert_eq!(select_rank(&[3.0], 1.0).unwrap(), 1);
        assert!(select_rank(&ev, 0.0).is_err());
    }

    #[test]
    fn eigenfunctions_orthonormal_and_scores_consistent() {
        let grid = Grid::uniform(64).unwrap();
        let values = DMatrix::from_fn(30, 64, |i, j| {
            let t = grid.points()[j];
            let a = (i as f64 * 0.37).sin() * 3.0;
            let b = (i as f64 * 1.13).cos();
            let c = ((i * i) as f64 * 0.05).sin() * 0.4;
            a * (2.0 * PI * t).sin() + b * t * t + c * (5.0 * t).exp() / 50.0 + 0.3
        });
        let sample = FunctionalSample::new(grid.clone(), values).unwrap();
        let model = decompose(&sample).unwrap();
        let k = model.n_components();
        assert!(k >= 3);
        for a in 0..k {
            for b in 0..k {
                let ip =
                    inner_product(&model.eigenfunction(a), &model.eigenfunction(b), &grid).unwrap();
                let target = if a == b { 1.0 } else { 0.0 };
                assert!((ip - target).abs() < 1e-8);
            }
        }
        let (centered, _) = center(&sample).unwrap();
        for i in 0..sample.n() {
            for kk in 0..k {
                let s = inner_product(&centered.curve(i), &model.eigenfunction(kk), &grid).unwrap();
                assert!((s - model.scores[(i, kk)]).abs() < 1e-10);
            }
        }
        // Trace identity: Σλ equals the integrated sample variance.
        let total_var: f64 = (0..grid.len())
            .map(|j| {
                let col = centered.values().column(j);
                grid.quad_weights()[j] * col.dot(&col) / sample.n() as f64
            })
            .sum();
        assert!((model.eigenvalues.sum() - total_var).abs() < 1e-8);
        assert!((model.pve[k - 1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn standardize_scalar_covariate() {
        let model = decompose(&rank_one_sample()).unwrap();
        // mean zero, sample variance (divisor n) 4
        let c = DMatrix::from_column_slice(6, 1, &[2.0, -2.0, -2.0, 2.0, 2.0, -2.0]);
        let design = standardize(&model, 1, &c).unwrap();
        assert!((design.c_star.clone() - c / 2.0).norm() < 1e-12);
        let second: f64 = design.a_star.column(0).norm_squared() / 6.0;
        assert!((second - 1.0).abs() < 1e-12);
    }

    #[test]
    fn standardize_rejects_singular_covariates() {
        let model = decompose(&rank_one_sample()).unwrap();
        let c = DMatrix::from_fn(6, 2, |i, _| i as f64);
        assert!(matches!(
            standardize(&model, 1, &c),
            Err(Error::SingularCovariates { .. })
        ));
    }

    #[test]
    fn sign_convention_is_deterministic() {
        let a = decompose(&rank_one_sample()).unwrap();
        let b = decompose(&rank_one_sample()).unwrap();
        assert_eq!(a.eigenfunctions, b.eigenfunctions);
        let row = a.eigenfunction(0);
        let lead = row
            .iter()
            .cloned()
            .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        assert!(lead > 0.0);
    }
}
