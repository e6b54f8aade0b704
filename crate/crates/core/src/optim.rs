//! Minimal optimizers used by the balancing solvers.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
    /// Abort once the iterate norm exceeds this (objective unbounded below).
    pub max_norm: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            gradient_tolerance: 1e-8,
            max_iterations: 500,
            max_norm: 1e10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsSolution {
    pub point: DVector<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BfgsFailure {
    /// The starting point lies outside the objective's domain.
    InfeasibleStart,
    /// Backtracking could not find an admissible point along the search direction.
    LineSearch {
        iterations: usize,
        gradient_norm: f64,
    },
    /// Iterates diverged.
    Unbounded {
        iterations: usize,
    },
    MaxIterations {
        gradient_norm: f64,
    },
}

/// Minimize `objective` with BFGS and a backtracking Armijo line search.
///
/// `objective` returns `None` outside its domain; the line search halves the
/// step until the trial point is admissible, so every iterate stays feasible.
/// `inverse_hessian` seeds the inverse-Hessian approximation (identity if absent).
pub fn bfgs_minimize<F>(
    objective: F,
    start: DVector<f64>,
    inverse_hessian: Option<DMatrix<f64>>,
    options: BfgsOptions,
) -> Result<BfgsSolution, BfgsFailure>
where
    F: Fn(&DVector<f64>) -> Option<(f64, DVector<f64>)>,
{
    let dim = start.len();
    let mut x = start;
    let (mut fx, mut gx) = objective(&x).ok_or(BfgsFailure::InfeasibleStart)?;
    let mut h = inverse_hessian.unwrap_or_else(|| DMatrix::identity(dim, dim));

    for iter in 0..options.max_iterations {
        let gnorm = gx.norm();
        if gnorm <= options.gradient_tolerance {
            return Ok(BfgsSolution {
                point: x,
                value: fx,
                gradient_norm: gnorm,
                iterations: iter,
            });
        }
        let mut direction = -(&h * &gx);
        let mut slope = gx.dot(&direction);
        if !(slope < 0.0) {
            // Lost descent: restart from steepest descent.
            h = DMatrix::identity(dim, dim);
            direction = -gx.clone();
            slope = -gnorm * gnorm;
        }

        let noise = 1e-13 * (1.0 + fx.abs());
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x + step * &direction;
            if let Some((ft, gt)) = objective(&trial) {
                let armijo = ft <= fx + 1e-4 * step * slope;
                // Close to the optimum the decrease drowns in rounding; accept
                // a step that does not raise f beyond noise and shrinks the gradient.
                let flat = ft <= fx + noise && gt.norm() < gnorm;
                if armijo || flat {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            return Err(BfgsFailure::LineSearch {
                iterations: iter,
                gradient_norm: gnorm,
            });
        };
        if x_new.norm() > options.max_norm {
            return Err(BfgsFailure::Unbounded {
                iterations: iter + 1,
            });
        }

        let s = &x_new - &x;
        let y = &g_new - &gx;
        let sy = s.dot(&y);
        if sy > 1e-16 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H+ = H - ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
            h -= rho * (&hy * s.transpose() + &s * hy.transpose());
            h += (rho * rho * yhy + rho) * (&s * s.transpose());
        }
        x = x_new;
        fx = f_new;
        gx = g_new;
    }
    let gnorm = gx.norm();
    if gnorm <= options.gradient_tolerance {
        return Ok(BfgsSolution {
            point: x,
            value: fx,
            gradient_norm: gnorm,
            iterations: options.max_iterations,
        });
    }
    Err(BfgsFailure::MaxIterations {
        gradient_norm: gnorm,
    })
}

/// Golden-section search for a maximizer of `f` on `[lo, hi]`.
///
/// `f` may return `None` for points where it cannot be evaluated; such points
/// are treated as `-∞`. Returns the best evaluated `(x, f(x))`, if any.
pub fn golden_section_max<F>(
    mut f: F,
    lo: f64,
    hi: f64,
    tolerance: f64,
    max_iterations: usize,
) -> Option<(f64, f64)>
where
    F: FnMut(f64) -> Option<f64>,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut best: Option<(f64, f64)> = None;
    let consider = |x: f64, v: Option<f64>, best: &mut Option<(f64, f64)>| {
        if let Some(v) = v {
            if best.is_none_or(|(_, bv)| v > bv) {
                *best = Some((x, v));
            }
        }
    };
    consider(c, fc, &mut best);
    consider(d, fd, &mut best);
    for _ in 0..max_iterations {
        if (b - a).abs() <= tolerance {
            break;
        }
        let left_better = match (fc, fd) {
            (Some(x), Some(y)) => x >= y,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => break,
        };
        if left_better {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
            consider(c, fc, &mut best);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
            consider(d, fd, &mut best);
        }
    }
    best
}
