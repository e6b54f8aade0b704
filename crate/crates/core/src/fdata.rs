//! Functional data sampled on a shared grid over `[0, 1]`.
//!
//! Every curve in a [`FunctionalSample`] is evaluated on the same [`Grid`].
//! Integrals are approximated with the grid's quadrature weights (trapezoidal
//! by default), so `inner_product` is exact for integrands that are piecewise
//! linear between grid points.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Ordered evaluation points in `[0, 1]` with nonnegative quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
    quad_weights: Vec<f64>,
}

impl Grid {
    /// Grid with trapezoidal quadrature weights.
    pub fn new(points: Vec<f64>) -> Result<Self> {
        validate_points(&points)?;
        let weights = trapezoid_weights(&points);
        Ok(Self {
            points,
            quad_weights: weights,
        })
    }

    /// `m` equispaced points from 0 to 1 inclusive.
    pub fn uniform(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 points, got {m}"
            )));
        }
        let step = 1.0 / (m - 1) as f64;
        let mut points: Vec<f64> = (0..m).map(|j| j as f64 * step).collect();
        points[m - 1] = 1.0;
        Self::new(points)
    }

    /// Grid with caller-supplied quadrature weights.
    pub fn with_weights(points: Vec<f64>, quad_weights: Vec<f64>) -> Result<Self> {
        validate_points(&points)?;
        if quad_weights.len() != points.len() {
            return Err(Error::Dimension {
                context: "quadrature weights",
                expected: points.len(),
                actual: quad_weights.len(),
            });
        }
        if quad_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidGrid(
                "quadrature weights must be finite and nonnegative".into(),
            ));
        }
        let span = points[points.len() - 1] - points[0];
        let total: f64 = quad_weights.iter().sum();
        if (total - span).abs() > 1e-10 * span.max(1.0) {
            return Err(Error::InvalidGrid(format!(
                "quadrature weights sum to {total}, expected domain length {span}"
            )));
        }
        Ok(Self {
            points,
            quad_weights,
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn quad_weights(&self) -> &[f64] {
        &self.quad_weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Evaluate `f` at every grid point.
    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.points.iter().map(|&t| f(t)))
    }

    /// Sub-grid covering indices `range`, with trapezoidal weights recomputed
    /// over the retained span.
    pub fn restrict(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.len() || range.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "cannot restrict a {}-point grid to {range:?}",
                self.len()
            )));
        }
        Self::new(self.points[range].to_vec())
    }
}

fn validate_points(points: &[f64]) -> Result<()> {
    if points.len() < 2 {
        return Err(Error::InvalidGrid(format!(
            "need at least 2 points, got {}",
            points.len()
        )));
    }
    if let Some(j) = points.iter().position(|t| !t.is_finite()) {
        return Err(Error::InvalidGrid(format!(
            "non-finite grid point at index {j}"
        )));
    }
    if points[0] < 0.0 || points[points.len() - 1] > 1.0 {
        return Err(Error::InvalidGrid("grid points must lie in [0, 1]".into()));
    }
    if let Some(j) = points.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid(format!(
            "grid not strictly increasing at index {}",
            j + 1
        )));
    }
    Ok(())
}

fn trapezoid_weights(points: &[f64]) -> Vec<f64> {
    let m = points.len();
    (0..m)
        .map(|j| {
            let left = if j == 0 {
                0.0
            } else {
                points[j] - points[j - 1]
            };
            let right = if j + 1 == m {
                0.0
            } else {
                points[j + 1] - points[j]
            };
            0.5 * (left + right)
        })
        .collect()
}

/// Quadrature approximation of `∫ f(t) g(t) dt`.
pub fn inner_product(f: &[f64], g: &[f64], grid: &Grid) -> Result<f64> {
    if f.len() != grid.len() {
        return Err(Error::Dimension {
            context: "inner_product lhs",
            expected: grid.len(),
            actual: f.len(),
        });
    }
    if g.len() != grid.len() {
        return Err(Error::Dimension {
            context: "inner_product rhs",
            expected: grid.len(),
            actual: g.len(),
        });
    }
    Ok(grid
        .quad_weights
        .iter()
        .zip(f.iter().zip(g))
        .map(|(w, (a, b))| w * a * b)
        .sum())
}

/// `n` curves evaluated on a shared grid; row `i` is curve `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSample {
    grid: Grid,
    values: DMatrix<f64>,
}

impl FunctionalSample {
    pub fn new(grid: Grid, values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() != grid.len() {
            return Err(Error::Dimension {
                context: "curve length vs grid",
                expected: grid.len(),
                actual: values.ncols(),
            });
        }
        for j in 0..values.ncols() {
            for i in 0..values.nrows() {
                if !values[(i, j)].is_finite() {
                    return Err(Error::NonFinite { row: i, column: j });
                }
            }
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Number of curves.
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Number of grid points.
    pub fn m(&self) -> usize {
        self.values.ncols()
    }

    pub fn curve(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    /// Curves restricted to the given row indices (duplicates allowed).
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.select_rows(rows),
        }
    }

    /// Curves restricted to grid indices `range`.
    pub fn restrict(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let grid = self.grid.restrict(range.clone())?;
        let values = self.values.columns(range.start, range.len()).into_owned();
        Ok(Self { grid, values })
    }
}

/// Subtract the pointwise sample mean; returns the centered sample and the mean curve.
pub fn center(sample: &FunctionalSample) -> Result<(FunctionalSample, DVector<f64>)> {
    let n = sample.n();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "centering needs n >= 2, got {n}"
        )));
    }
    let mean = DVector::from_iterator(
        sample.m(),
        sample.values.column_iter().map(|col| col.sum() / n as f64),
    );
    let mut values = sample.values.clone();
    for (j, mut col) in values.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    Ok((
        FunctionalSample {
            grid: sample.grid.clone(),
            values,
        },
        mean,
    ))
}
