//! Association–variation index `V_k = λ_k β_k²` for choosing outcome-model components.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::fpca::FpcaModel;

#[derive(Debug, Clone)]
pub struct AviRanking {
    /// Candidate components (zero-based), in eigenvalue order.
    pub candidates: Vec<usize>,
    /// Score variances, aligned with `candidates`.
    pub lambda: Vec<f64>,
    /// Simple-regression slopes of the outcome on each score.
    pub beta: Vec<f64>,
    pub index: Vec<f64>,
    /// Positions into `candidates`, by decreasing index.
    pub order: Vec<usize>,
    /// Cumulative share of the sorted index values.
    pub cumulative_share: Vec<f64>,
}

impl AviRanking {
    /// Smallest leading set of the sorted order reaching `share`, as ascending component ids.
    pub fn select(&self, share: f64) -> Result<Vec<usize>> {
        if !(share > 0.0 && share <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "AVI share must lie in (0, 1], got {share}"
            )));
        }
        let count = if share >= 1.0 {
            self.order.len()
        } else {
            self.cumulative_share
                .iter()
                .position(|&c| c >= share)
                .map_or(self.order.len(), |k| k + 1)
        };
        let mut ids: Vec<usize> = self.order[..count]
            .iter()
            .map(|&pos| self.candidates[pos])
            .collect();
        ids.sort_unstable();
        Ok(ids)
    }
}

/// Rank the components selected by `initial_pve`.
pub fn avi_rank(outcome: &DVector<f64>, model: &FpcaModel, initial_pve: f64) -> Result<AviRanking> {
    let n = outcome.len();
    if model.scores.nrows() != n {
        return Err(Error::Dimension {
            context: "outcome length",
            expected: model.scores.nrows(),
            actual: n,
        });
    }
    let rank = model.select_rank(initial_pve)?;
    let candidates: Vec<usize> = (0..rank).collect();
    let ybar = outcome.mean();
    let mut lambda = Vec::with_capacity(rank);
    let mut beta = Vec::with_capacity(rank);
    for &k in &candidates {
        let a = model.scores.column(k);
        let abar = a.mean();
        let mut saa = 0.0;
        let mut say = 0.0;
        for i in 0..n {
            saa += (a[i] - abar).powi(2);
            say += (a[i] - abar) * (outcome[i] - ybar);
        }
        if saa <= 0.0 {
            return Err(Error::InsufficientData(format!(
                "component {k} has zero score variance"
            )));
        }
        lambda.push(saa / n as f64);
        beta.push(say / saa);
    }
    let index: Vec<f64> = lambda.iter().zip(&beta).map(|(l, b)| l * b * b).collect();
    let mut order: Vec<usize> = (0..rank).collect();
    order.sort_by(|&a, &b| index[b].total_cmp(&index[a]));
    let total: f64 = index.iter().sum();
    let mut running = 0.0;
    let cumulative_share = order
        .iter()
        .map(|&pos| {
            running += index[pos];
            if total > 0.0 {
                running / total
            } else {
                1.0
            }
        })
        .collect();
    Ok(AviRanking {
        candidates,
        lambda,
        beta,
        index,
        order,
        cumulative_share,
    })
}

/// Components chosen by AVI: initial set by PVE, then the smallest top-`V̂` subset
/// whose share of the total reaches `avi_share`.
pub fn avi_select(
    outcome: &DVector<f64>,
    model: &FpcaModel,
    initial_pve: f64,
    avi_share: f64,
) -> Result<Vec<usize>> {
    avi_rank(outcome, model, initial_pve)?.select(avi_share)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdata::{FunctionalSample, Grid};
    use crate::simgen::eigenfunction_matrix;
    use nalgebra::DMatrix;

    fn model_with_scores(scores: &DMatrix<f64>, eigenvalues: &[f64]) -> FpcaModel {
        let grid = Grid::uniform(32).unwrap();
        let phi = eigenfunction_matrix(&grid)
            .rows(0, scores.ncols())
            .into_owned();
        let sample = FunctionalSample::new(grid, scores * &phi).unwrap();
        FpcaModel::from_components(&sample, phi, DVector::from_column_slice(eigenvalues)).unwrap()
    }

    #[test]
    fn ranks_by_index_and_selects_minimal_set() {
        let n = 40;
        let scores = DMatrix::from_fn(n, 3, |i, k| {
            ((i * (2 * k + 1)) as f64 * 0.9).sin() * (3 - k) as f64
        });
        let model = model_with_scores(&scores, &[9.0, 4.0, 1.0]);
        // Outcome loads mostly on component 2.
        let y = DVector::from_fn(n, |i, _| {
            0.1 * model.scores[(i, 0)] + 8.0 * model.scores[(i, 2)]
        });
        let ranking = avi_rank(&y, &model, 1.0).unwrap();
        assert_eq!(ranking.order[0], 2);
        assert!((ranking.cumulative_share[2] - 1.0).abs() < 1e-12);
        assert!(ranking.cumulative_share.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(ranking.select(0.5).unwrap(), vec![2]);
        assert_eq!(ranking.select(1.0).unwrap(), vec![0, 1, 2]);
        assert!(ranking.select(0.0).is_err());
    }

    #[test]
    fn zero_index_keeps_component_order() {
        let n = 20;
        let scores = DMatrix::from_fn(n, 3, |i, k| ((i + 3 * k) as f64 * 1.7).cos());
        let model = model_with_scores(&scores, &[3.0, 2.0, 1.0]);
        let y = DVector::from_element(n, 2.0);
        let ranking = avi_rank(&y, &model, 1.0).unwrap();
        assert_eq!(ranking.order, vec![0, 1, 2]);
        assert_eq!(ranking.select(0.9).unwrap(), vec![0]);
    }
}
