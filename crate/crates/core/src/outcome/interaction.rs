//! Outcome model with a binary group and its interaction with the scores.
//!
//! Design `[1, B, g, B·g]` fitted by weighted least squares. Standard errors,
//! t-tests and the overall F-test are the naïve ones: they ignore that the
//! weights and components were estimated.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use super::{check_basis, check_weights, weighted_normal_equations, EffectEstimate};
use crate::error::{Error, Result};
use crate::fpca::FpcaModel;
use crate::linalg::inverse_spd;
use crate::metrics::{weighted_f_statistic, FStatistic};

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientRow {
    pub term: String,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTable {
    pub rows: Vec<CoefficientRow>,
    pub f_statistic: FStatistic,
    pub f_p_value: f64,
    pub df_model: usize,
    pub df_residual: usize,
}

#[derive(Debug, Clone)]
pub struct InteractionFit {
    /// Effect in group 0.
    pub baseline: EffectEstimate,
    /// Group 1 minus group 0; `None` when only one group is present.
    pub difference: Option<EffectEstimate>,
    pub table: CoefficientTable,
}

impl InteractionFit {
    /// Effect in group 1.
    pub fn group_one(&self) -> Option<EffectEstimate> {
        self.difference.as_ref().map(|d| {
            let mut e = self.baseline.clone();
            e.basis_coeffs += &d.basis_coeffs;
            e.curve += &d.curve;
            e.intercept += d.intercept;
            e
        })
    }
}

fn p_two_sided(t: f64, df: usize) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    StudentsT::new(0.0, 1.0, df as f64).map_or(f64::NAN, |d| 2.0 * d.sf(t.abs()))
}

pub fn fit_interaction(
    outcome: &DVector<f64>,
    scores: &DMatrix<f64>,
    group: &[f64],
    weights: &DVector<f64>,
    model: &FpcaModel,
    basis_ids: &[usize],
) -> Result<InteractionFit> {
    let n = outcome.len();
    if scores.nrows() != n || group.len() != n {
        return Err(Error::Dimension {
            context: "interaction rows",
            expected: n,
            actual: if scores.nrows() != n {
                scores.nrows()
            } else {
                group.len()
            },
        });
    }
    check_basis(model, scores, basis_ids)?;
    check_weights(weights, n)?;
    if let Some(i) = group.iter().position(|g| *g != 0.0 && *g != 1.0) {
        return Err(Error::InvalidArgument(format!(
            "group must be 0 or 1, got {} at row {i}",
            group[i]
        )));
    }
    let two_groups = group.iter().any(|g| *g != group[0]);
    let k = basis_ids.len();
    let q = if two_groups { 2 * k + 2 } else { k + 1 };
    if n <= q {
        return Err(Error::InsufficientData(format!(
            "{q} coefficients need more than {n} observations"
        )));
    }

    let mut x = DMatrix::from_element(n, q, 1.0);
    x.columns_mut(1, k).copy_from(scores);
    if two_groups {
        for i in 0..n {
            x[(i, k + 1)] = group[i];
            for j in 0..k {
                x[(i, k + 2 + j)] = scores[(i, j)] * group[i];
            }
        }
    }
    let (xtwx, xtwy) = weighted_normal_equations(&x, outcome, weights);
    let inv = inverse_spd(&xtwx)
        .ok_or_else(|| Error::Collinearity("interaction design is singular".into()))?;
    let coef = &inv * xtwy;
    let resid = outcome - &x * &coef;
    let df_residual = n - q;
    let sigma2 = resid.component_mul(&resid).dot(weights) / df_residual as f64;

    let mut names = vec!["intercept".to_string()];
    names.extend(basis_ids.iter().map(|k| format!("fpc{}", k + 1)));
    if two_groups {
        names.push("group".into());
        names.extend(basis_ids.iter().map(|k| format!("fpc{}:group", k + 1)));
    }
    let rows = names
        .into_iter()
        .enumerate()
        .map(|(j, term)| {
            let se = (sigma2 * inv[(j, j)]).max(0.0).sqrt();
            let t = coef[j] / se;
            CoefficientRow {
                term,
                estimate: coef[j],
                se,
                t,
                p_value: p_two_sided(t, df_residual),
            }
        })
        .collect();

    let f_statistic = weighted_f_statistic(outcome, &x.columns(1, q - 1).into_owned(), weights)?;
    let f_p_value = match f_statistic {
        FStatistic::Infinite => 0.0,
        FStatistic::Finite(f) => {
            FisherSnedecor::new((q - 1) as f64, df_residual as f64).map_or(f64::NAN, |d| d.sf(f))
        }
    };

    let weighted = weights.iter().any(|w| *w != weights[0]);
    let baseline = EffectEstimate::from_coeffs(
        model,
        basis_ids,
        coef.rows(1, k).into_owned(),
        coef[0],
        weighted,
    );
    let difference = two_groups.then(|| {
        EffectEstimate::from_coeffs(
            model,
            basis_ids,
            coef.rows(k + 2, k).into_owned(),
            coef[k + 1],
            weighted,
        )
    });
    Ok(InteractionFit {
        baseline,
        difference,
        table: CoefficientTable {
            rows,
            f_statistic,
            f_p_value,
            df_model: q - 1,
            df_residual,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdata::{FunctionalSample, Grid};
    use crate::outcome::fit_truncated;
    use crate::simgen::eigenfunction_matrix;

    fn model(n: usize) -> FpcaModel {
        let grid = Grid::uniform(48).unwrap();
        let phi = eigenfunction_matrix(&grid).rows(0, 3).into_owned();
        let scores = DMatrix::from_fn(n, 3, |i, k| {
            ((i * (k + 2)) as f64 * 1.31).sin() * (4 - k) as f64
        });
        let sample = FunctionalSample::new(grid, &scores * &phi).unwrap();
        FpcaModel::from_components(&sample, phi, DVector::from_column_slice(&[9.0, 4.0, 1.0]))
            .unwrap()
    }

    #[test]
    fn single_group_reduces_to_truncated_fit() {
        let m = model(30);
        let ids = [0, 1, 2];
        let y = DVector::from_fn(30, |i, _| (i as f64 * 0.7).sin() * 2.0 + m.scores[(i, 0)]);
        let w = DVector::from_element(30, 1.0);
        let fit = fit_interaction(&y, &m.scores, &[0.0; 30], &w, &m, &ids).unwrap();
        let plain = fit_truncated(&y, &m.scores, &w, &m, &ids).unwrap();
        assert!(fit.difference.is_none());
        assert!((&fit.baseline.basis_coeffs - &plain.basis_coeffs).amax() < 1e-12);
        assert!((fit.baseline.intercept - plain.intercept).abs() < 1e-12);
        assert_eq!(fit.table.rows.len(), 4);
    }

    #[test]
    fn two_groups_recover_known_coefficients() {
        let m = model(40);
        let ids = [0, 1, 2];
        let group: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
        let b0 = [1.5, -0.5, 2.0];
        let b1 = [0.5, 1.0, -1.0];
        let y = DVector::from_fn(40, |i, _| {
            let s = m.scores.row(i);
            let base = 3.0 + (0..3).map(|k| b0[k] * s[k]).sum::<f64>();
            if group[i] == 1.0 {
                base - 2.0 + (0..3).map(|k| b1[k] * s[k]).sum::<f64>()
            } else {
                base
            }
        });
        let w = DVector::from_fn(40, |i, _| 0.5 + (i % 3) as f64);
        let fit = fit_interaction(&y, &m.scores, &group, &w, &m, &ids).unwrap();
        let diff = fit.difference.as_ref().unwrap();
        for k in 0..3 {
            assert!((fit.baseline.basis_coeffs[k] - b0[k]).abs() < 1e-8);
            assert!((diff.basis_coeffs[k] - b1[k]).abs() < 1e-8);
        }
        assert!((fit.baseline.intercept - 3.0).abs() < 1e-8);
        assert!((diff.intercept + 2.0).abs() < 1e-8);
        let one = fit.group_one().unwrap();
        assert!((one.basis_coeffs[0] - 2.0).abs() < 1e-8);
        assert!(fit.table.f_statistic.is_infinite());
        let terms: Vec<&str> = fit.table.rows.iter().map(|r| r.term.as_str()).collect();
        assert_eq!(
            terms,
            [
                "intercept",
                "fpc1",
                "fpc2",
                "fpc3",
                "group",
                "fpc1:group",
                "fpc2:group",
                "fpc3:group"
            ]
        );
    }

    #[test]
    fn noisy_fit_has_sensible_inference() {
        let m = model(60);
        let ids = [0, 1];
        let group: Vec<f64> = (0..60).map(|i| ((i / 3) % 2) as f64).collect();
        let y = DVector::from_fn(60, |i, _| {
            1.0 + 2.0 * m.scores[(i, 0)] + ((i * 7) as f64).sin()
        });
        let w = DVector::from_element(60, 1.0);
        let fit = fit_interaction(
            &y,
            &m.scores.columns(0, 2).into_owned(),
            &group,
            &w,
            &m,
            &ids,
        )
        .unwrap();
        let t = &fit.table;
        assert_eq!((t.df_model, t.df_residual), (5, 54));
        assert!(t.rows[1].p_value < 1e-6);
        assert!(t
            .rows
            .iter()
            .all(|r| r.se > 0.0 && (0.0..=1.0).contains(&r.p_value)));
        assert!(t.f_p_value < 1e-6);
    }

    #[test]
    fn rejects_non_binary_group() {
        let m = model(10);
        let y = DVector::from_element(10, 1.0);
        let w = DVector::from_element(10, 1.0);
        let mut g = vec![0.0; 10];
        g[4] = 2.0;
        assert!(fit_interaction(&y, &m.scores, &g, &w, &m, &[0, 1, 2]).is_err());
    }
}
