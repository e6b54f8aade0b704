//! Case-resampling bootstrap with percentile pointwise bands.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::quantile_sorted;
use crate::streams::substream;

const BOOTSTRAP_STREAM: u64 = 0xB007;
pub const MIN_REPLICATES: usize = 100;

#[derive(Debug, Clone)]
pub struct BootstrapOptions {
    pub replicates: usize,
    /// Pointwise coverage, e.g. `0.99`.
    pub level: f64,
    pub seed: u64,
    /// Largest tolerated share of failed replicates.
    pub max_failure_share: f64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            replicates: 1000,
            level: 0.99,
            seed: 0,
            max_failure_share: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapBands {
    /// One lower curve per curve returned by the fit.
    pub lower: Vec<DVector<f64>>,
    pub upper: Vec<DVector<f64>>,
    pub successes: usize,
    pub failures: usize,
    pub level: f64,
}

/// Subject indices for replicate `b`.
pub fn resample_indices(n: usize, seed: u64, b: usize) -> Vec<usize> {
    let mut rng = substream(seed, &[BOOTSTRAP_STREAM, b as u64]);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Percentile bands for the curves produced by `fit` on resampled subjects.
///
/// `fit` receives the resampled row indices and returns one or more curves;
/// every replicate must return the same shapes. Replicates are evaluated in
/// parallel, each with its own stream, so results do not depend on scheduling.
pub fn bootstrap_bands<F>(n: usize, options: &BootstrapOptions, fit: F) -> Result<BootstrapBands>
where
    F: Fn(&[usize]) -> Result<Vec<DVector<f64>>> + Sync,
{
    if options.replicates < MIN_REPLICATES {
        return Err(Error::InvalidArgument(format!(
            "bootstrap needs at least {MIN_REPLICATES} replicates, got {}",
            options.replicates
        )));
    }
    if !(options.level > 0.0 && options.level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level must lie in (0, 1), got {}",
            options.level
        )));
    }
    if n == 0 {
        return Err(Error::InsufficientData(
            "bootstrap on an empty sample".into(),
        ));
    }
    let results: Vec<Option<Vec<DVector<f64>>>> = (0..options.replicates)
        .into_par_iter()
        .map(|b| fit(&resample_indices(n, options.seed, b)).ok())
        .collect();
    let draws: Vec<Vec<DVector<f64>>> = results.into_iter().flatten().collect();
    let failures = options.replicates - draws.len();
    if draws.is_empty() || failures as f64 > options.max_failure_share * options.replicates as f64 {
        return Err(Error::Bootstrap {
            failures,
            replicates: options.replicates,
        });
    }
    let shapes: Vec<usize> = draws[0].iter().map(|c| c.len()).collect();
    if draws
        .iter()
        .any(|d| d.len() != shapes.len() || d.iter().zip(&shapes).any(|(c, &m)| c.len() != m))
    {
        return Err(Error::InvalidArgument(
            "bootstrap replicates returned differently shaped curves".into(),
        ));
    }
    let alpha = 1.0 - options.level;
    let mut lower = Vec::with_capacity(shapes.len());
    let mut upper = Vec::with_capacity(shapes.len());
    for (c, &m) in shapes.iter().enumerate() {
        let mut lo = DVector::zeros(m);
        let mut hi = DVector::zeros(m);
        let mut column = vec![0.0; draws.len()];
        for j in 0..m {
            for (slot, d) in column.iter_mut().zip(&draws) {
                *slot = d[c][j];
            }
            column.sort_by(f64::total_cmp);
            lo[j] = quantile_sorted(&column, alpha / 2.0);
            hi[j] = quantile_sorted(&column, 1.0 - alpha / 2.0);
        }
        lower.push(lo);
        upper.push(hi);
    }
    Ok(BootstrapBands {
        lower,
        upper,
        successes: draws.len(),
        failures,
        level: options.level,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(replicates: usize) -> BootstrapOptions {
        BootstrapOptions {
            replicates,
            level: 0.9,
            seed: 42,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_statistic_has_zero_width() {
        let bands =
            bootstrap_bands(10, &opts(200), |_| Ok(vec![DVector::from_element(3, 2.5)])).unwrap();
        assert_eq!(bands.lower[0], bands.upper[0]);
        assert_eq!(bands.successes, 200);
    }

    #[test]
    fn reproducible_and_sensible_for_mean() {
        let data: Vec<f64> = (0..50).map(|i| (i as f64 * 0.77).sin()).collect();
        let fit = |idx: &[usize]| {
            let m = idx.iter().map(|&i| data[i]).sum::<f64>() / idx.len() as f64;
            Ok(vec![DVector::from_element(1, m)])
        };
        let a = bootstrap_bands(50, &opts(100), fit).unwrap();
        let b = bootstrap_bands(50, &opts(100), fit).unwrap();
        assert_eq!(a, b);
        let mean = data.iter().sum::<f64>() / 50.0;
        assert!(a.lower[0][0] < mean && mean < a.upper[0][0]);
    }

    #[test]
    fn too_many_failures_is_an_error() {
        let fit = |idx: &[usize]| {
            if idx[0] % 2 == 0 {
                Err(Error::Infeasible)
            } else {
                Ok(vec![DVector::zeros(1)])
            }
        };
        assert!(matches!(
            bootstrap_bands(10, &opts(100), fit),
            Err(Error::Bootstrap { .. })
        ));
    }

    #[test]
    fn rejects_small_replicate_counts() {
        assert!(bootstrap_bands(5, &opts(10), |_| Ok(vec![])).is_err());
    }
}
