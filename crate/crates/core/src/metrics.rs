//! Balance diagnostics and effect-curve accuracy metrics.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fdata::{inner_product, Grid};
use crate::linalg::median;

/// Overall regression F statistic. A perfect fit is reported as [`FStatistic::Infinite`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FStatistic {
    Finite(f64),
    Infinite,
}

impl FStatistic {
    pub fn value(&self) -> f64 {
        match self {
            FStatistic::Finite(v) => *v,
            FStatistic::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, FStatistic::Infinite)
    }
}

impl fmt::Display for FStatistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FStatistic::Finite(v) => f.write_str(&crate::io::num(*v)),
            FStatistic::Infinite => f.write_str("inf"),
        }
    }
}

const PERFECT_FIT: f64 = 1e-24;

fn check_weights(weights: &DVector<f64>, n: usize) -> Result<()> {
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

/// F statistic of the weighted least-squares regression of `response` on
/// `covariates` with intercept; degrees of freedom `p` and `n − p − 1`.
pub fn weighted_f_statistic(
    response: &DVector<f64>,
    covariates: &DMatrix<f64>,
    weights: &DVector<f64>,
) -> Result<FStatistic> {
    let n = response.len();
    let p = covariates.ncols();
    if covariates.nrows() != n {
        return Err(Error::Dimension {
            context: "covariate rows",
            expected: n,
            actual: covariates.nrows(),
        });
    }
    check_weights(weights, n)?;
    if n <= p + 1 {
        return Err(Error::InsufficientData(format!(
            "F statistic needs n > p + 1 (n = {n}, p = {p})"
        )));
    }
    let mut design = DMatrix::from_element(n, p + 1, 1.0);
    design.columns_mut(1, p).copy_from(covariates);
    let sqrt_w = weights.map(f64::sqrt);
    let mut xw = design.clone();
    for (i, mut row) in xw.row_iter_mut().enumerate() {
        row *= sqrt_w[i];
    }
    let yw = response.component_mul(&sqrt_w);
    let svd = xw.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-12 * max_sv {
        return Err(Error::Collinearity(
            "F statistic design is rank deficient".into(),
        ));
    }
    let coef = svd
        .solve(&yw, 0.0)
        .map_err(|e| Error::Collinearity(e.to_string()))?;
    let fitted = &design * &coef;

    let total_w = weights.sum();
    let ybar = weights.dot(response) / total_w;
    let sst: f64 = (0..n)
        .map(|i| weights[i] * (response[i] - ybar).powi(2))
        .sum();
    let sse: f64 = (0..n)
        .map(|i| weights[i] * (response[i] - fitted[i]).powi(2))
        .sum();
    if sst <= 0.0 {
        return Ok(FStatistic::Finite(0.0));
    }
    if sse <= PERFECT_FIT * sst {
        return Ok(FStatistic::Infinite);
    }
    let ssr = (sst - sse).max(0.0);
    Ok(FStatistic::Finite(
        (ssr / p as f64) / (sse / (n - p - 1) as f64),
    ))
}

/// `|corr_w(a, c)|` with moments under normalized weights.
pub fn weighted_abs_correlation(
    a: &DVector<f64>,
    c: &DVector<f64>,
    weights: &DVector<f64>,
) -> Result<f64> {
    let n = a.len();
    if c.len() != n {
        return Err(Error::Dimension {
            context: "correlation vectors",
            expected: n,
            actual: c.len(),
        });
    }
    check_weights(weights, n)?;
    let w = weights / weights.sum();
    let ma = w.dot(a);
    let mc = w.dot(c);
    let (mut saa, mut scc, mut sac) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let da = a[i] - ma;
        let dc = c[i] - mc;
        saa += w[i] * da * da;
        scc += w[i] * dc * dc;
        sac += w[i] * da * dc;
    }
    let degenerate = |v: f64, x: &DVector<f64>| v <= (1e-12 * x.amax()).powi(2);
    if degenerate(saa, a) || degenerate(scc, c) {
        return Err(Error::InvalidArgument(
            "correlation of a constant vector".into(),
        ));
    }
    Ok((sac.abs() / (saa * scc).sqrt()).min(1.0))
}

/// Integrated squared error `∫(estimate − truth)²`.
pub fn ise(estimate: &[f64], truth: &[f64], grid: &Grid) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::Dimension {
            context: "ise curves",
            expected: truth.len(),
            actual: estimate.len(),
        });
    }
    let diff: Vec<f64> = estimate.iter().zip(truth).map(|(a, b)| a - b).collect();
    inner_product(&diff, &diff, grid)
}

#[derive(Debug, Clone)]
pub struct AccuracyReport {
    pub ise: Vec<f64>,
    pub aise: f64,
    pub mise: f64,
    pub isb: f64,
}

/// Aggregate per-run estimates of the same truth.
pub fn summarize_runs(
    estimates: &[DVector<f64>],
    truth: &DVector<f64>,
    grid: &Grid,
) -> Result<AccuracyReport> {
    if estimates.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "accuracy summary needs at least 2 runs, got {}",
            estimates.len()
        )));
    }
    let ise_values = estimates
        .iter()
        .map(|e| ise(e.as_slice(), truth.as_slice(), grid))
        .collect::<Result<Vec<_>>>()?;
    let mut mean = DVector::zeros(truth.len());
    for e in estimates {
        mean += e;
    }
    mean /= estimates.len() as f64;
    let isb = ise(mean.as_slice(), truth.as_slice(), grid)?;
    Ok(AccuracyReport {
        aise: ise_values.iter().sum::<f64>() / ise_values.len() as f64,
        mise: median(&ise_values),
        isb,
        ise: ise_values,
    })
}

#[derive(Debug, Clone)]
pub struct BalanceReport {
    /// `f_statistics[k]` for score column `k`.
    pub f_statistics: Vec<FStatistic>,
    /// `correlations[(k, j)]` between score `k` and covariate `j`.
    pub correlations: DMatrix<f64>,
}

/// F statistics and absolute correlations of each score column against the covariates.
pub fn balance_report(
    scores: &DMatrix<f64>,
    covariates: &DMatrix<f64>,
    weights: &DVector<f64>,
) -> Result<BalanceReport> {
    let mut f_statistics = Vec::with_capacity(scores.ncols());
    let mut correlations = DMatrix::zeros(scores.ncols(), covariates.ncols());
    for k in 0..scores.ncols() {
        let a = scores.column(k).into_owned();
        f_statistics.push(weighted_f_statistic(&a, covariates, weights)?);
        for j in 0..covariates.ncols() {
            let c = covariates.column(j).into_owned();
            correlations[(k, j)] = weighted_abs_correlation(&a, &c, weights)?;
        }
    }
    Ok(BalanceReport {
        f_statistics,
        correlations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, SQRT_2};

    #[test]
    fn constant_response_has_zero_f() {
        let c = DMatrix::from_column_slice(5, 1, &[1.0, 2.0, 3.0, 5.0, 8.0]);
        let y = DVector::from_element(5, 2.0);
        let w = DVector::from_column_slice(&[1.0, 2.0, 1.0, 0.5, 1.0]);
        assert_eq!(
            weighted_f_statistic(&y, &c, &w).unwrap(),
            FStatistic::Finite(0.0)
        );
    }

    #[test]
    fn exact_linear_response_is_infinite() {
        let c = DMatrix::from_column_slice(5, 1, &[1.0, 2.0, 3.0, 5.0, 8.0]);
        let y = c.column(0).map(|v| 3.0 - 2.0 * v);
        let w = DVector::from_column_slice(&[1.0, 2.0, 1.0, 0.5, 1.0]);
        let f = weighted_f_statistic(&y, &c, &w).unwrap();
        assert!(f.is_infinite());
        assert_eq!(f.to_string(), "inf");
    }

    #[test]
    fn f_needs_enough_rows() {
        let c = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let y = DVector::from_column_slice(&[1.0, 3.0]);
        assert!(weighted_f_statistic(&y, &c, &DVector::from_element(2, 1.0)).is_err());
    }

    #[test]
    fn correlation_of_identical_vectors() {
        let a = DVector::from_column_slice(&[1.0, -2.0, 0.5, 4.0]);
        let w = DVector::from_column_slice(&[0.2, 1.0, 3.0, 0.7]);
        assert!((weighted_abs_correlation(&a, &a, &w).unwrap() - 1.0).abs() < 1e-12);
        let neg = -&a;
        assert!((weighted_abs_correlation(&a, &neg, &w).unwrap() - 1.0).abs() < 1e-12);
        assert!(weighted_abs_correlation(&a, &DVector::from_element(4, 1.0), &w).is_err());
    }

    #[test]
    fn ise_examples() {
        let grid = Grid::uniform(257).unwrap();
        let phi1 = grid.map(|t| SQRT_2 * (2.0 * PI * t).sin());
        let truth = grid.map(|t| {
            SQRT_2
                * (2.0 * (2.0 * PI * t).sin()
                    + (2.0 * PI * t).cos()
                    + 0.5 * (4.0 * PI * t).sin()
                    + 0.5 * (4.0 * PI * t).cos())
        });
        assert_eq!(ise(truth.as_slice(), truth.as_slice(), &grid).unwrap(), 0.0);
        let bumped = &truth + &phi1;
        assert!((ise(bumped.as_slice(), truth.as_slice(), &grid).unwrap() - 1.0).abs() < 1e-3);
        let zero = vec![0.0; grid.len()];
        assert!((ise(&zero, truth.as_slice(), &grid).unwrap() - 5.5).abs() < 1e-3);
        assert!(ise(&zero[1..], truth.as_slice(), &grid).is_err());
    }

    #[test]
    fn summary_cancels_symmetric_bias() {
        let grid = Grid::uniform(129).unwrap();
        let phi1 = grid.map(|t| SQRT_2 * (2.0 * PI * t).sin());
        let truth = grid.map(|t| t * t);
        let runs = vec![&truth + &phi1, &truth - &phi1];
        let report = summarize_runs(&runs, &truth, &grid).unwrap();
        assert!((report.aise - 1.0).abs() < 1e-3);
        assert!((report.mise - 1.0).abs() < 1e-3);
        assert!(report.isb.abs() < 1e-12);
        assert!(summarize_runs(&runs[..1], &truth, &grid).is_err());
    }

    #[test]
    fn exact_runs_summarize_to_zero() {
        let grid = Grid::uniform(17).unwrap();
        let truth = grid.map(|t| t.sin());
        let report = summarize_runs(
            &[truth.clone(), truth.clone(), truth.clone()],
            &truth,
            &grid,
        )
        .unwrap();
        assert_eq!((report.aise, report.mise), (0.0, 0.0));
        assert!(report.isb < 1e-24);
    }
}
