//! Parametric weights under joint normality of the standardized scores.
//!
//! With `A* ~ N(0, I)` marginally and `A* | C* ~ N(βᵀC*, Σ)`, the weight is the
//! density ratio
//!
//! ```text
//! w = det(Σ)^{1/2} exp{ ½ rᵀ Σ⁻¹ r − ½ A*ᵀA* },   r = A* − βᵀC*.
//! ```
//!
//! `(β, Σ)` solve the stacked moment system
//! `n⁻¹ Σ r_i r_iᵀ = Σ` and `n⁻¹ Σ w_i A*_i C*_iᵀ = 0` by damped Newton with a
//! central-difference Jacobian, started from the least-squares fit.
//!
//! In finite samples the system often has no exact root: the weights are heavy
//! tailed and the cross-moment can stay bounded away from zero. Unless
//! [`ParamOptions::require_root`] is set, the estimator then falls back to the
//! Levenberg–Marquardt minimizer of the stacked residual and marks the fit as
//! inexact.

use nalgebra::{DMatrix, DVector};

use super::{BalanceWeights, ConstraintResiduals, Method, SolverDiagnostics};
use crate::error::{Error, Result};
use crate::fpca::StandardizedDesign;
use crate::linalg::{clip_eigenvalues, symmetrize};

pub const MOM_TOLERANCE: f64 = 1e-8;
pub const MOM_MAX_ITERATIONS: usize = 200;
pub const LM_MAX_ITERATIONS: usize = 500;
const POLISH_STEPS: usize = 3;

#[derive(Debug, Clone, Copy, Default)]
pub struct ParamOptions {
    /// Fail instead of falling back to the least-squares minimizer.
    pub require_root: bool,
}

#[derive(Debug, Clone)]
pub struct ParamFit {
    /// `p × L`.
    pub beta: DMatrix<f64>,
    /// `L × L`, symmetric positive definite.
    pub sigma: DMatrix<f64>,
    /// Root-mean-square of the stacked moment residual.
    pub moment_residual_norm: f64,
    pub iterations: usize,
    /// Times an iterate had to be projected back onto the PD cone.
    pub pd_projections: usize,
    /// Residual reached [`MOM_TOLERANCE`]; false for a least-squares fallback.
    pub exact: bool,
}

/// Precomputed conditional-normal density ratio for fixed `(β, Σ)`.
#[derive(Debug, Clone)]
pub struct GaussianRatio {
    beta: DMatrix<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    half_log_det: f64,
}

impl GaussianRatio {
    pub fn new(beta: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<Self> {
        if sigma.nrows() != sigma.ncols() || sigma.nrows() != beta.ncols() {
            return Err(Error::Dimension {
                context: "sigma vs beta columns",
                expected: beta.ncols(),
                actual: sigma.nrows(),
            });
        }
        let chol = symmetrize(sigma)
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("sigma"))?;
        let half_log_det = chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>();
        Ok(Self {
            beta: beta.clone(),
            chol,
            half_log_det,
        })
    }

    pub fn log_weight(&self, a: &[f64], c: &[f64]) -> f64 {
        let a = DVector::from_column_slice(a);
        let c = DVector::from_column_slice(c);
        let r = &a - self.beta.tr_mul(&c);
        let quad = r.dot(&self.chol.solve(&r));
        self.half_log_det + 0.5 * quad - 0.5 * a.norm_squared()
    }

    pub fn weight(&self, a: &[f64], c: &[f64]) -> f64 {
        self.log_weight(a, c).exp()
    }

    /// Weights for every row of the design.
    pub fn weights(&self, a_star: &DMatrix<f64>, c_star: &DMatrix<f64>) -> DVector<f64> {
        let residual = a_star - c_star * &self.beta;
        let solved = self.chol.solve(&residual.transpose());
        DVector::from_iterator(
            a_star.nrows(),
            (0..a_star.nrows()).map(|i| {
                let quad = residual.row(i).transpose().dot(&solved.column(i));
                let aa = a_star.row(i).norm_squared();
                (self.half_log_det + 0.5 * quad - 0.5 * aa).exp()
            }),
        )
    }
}

/// Weight of one subject under `(β, Σ)`.
pub fn weight_formula(
    a_star: &[f64],
    c_star: &[f64],
    beta: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
) -> Result<f64> {
    if a_star.len() != beta.ncols() || c_star.len() != beta.nrows() {
        return Err(Error::Dimension {
            context: "weight_formula inputs vs beta",
            expected: beta.nrows() * beta.ncols(),
            actual: a_star.len() * c_star.len(),
        });
    }
    Ok(GaussianRatio::new(beta, sigma)?.weight(a_star, c_star))
}

/// Packing of `(β, Σ)` into one unknown vector.
struct Layout {
    p: usize,
    l: usize,
}

impl Layout {
    fn n_beta(&self) -> usize {
        self.p * self.l
    }

    fn n_sigma(&self) -> usize {
        self.l * (self.l + 1) / 2
    }

    fn len(&self) -> usize {
        self.n_beta() + self.n_sigma()
    }

    fn pack(&self, beta: &DMatrix<f64>, sigma: &DMatrix<f64>) -> DVector<f64> {
        let mut x = Vec::with_capacity(self.len());
        x.extend(beta.iter().copied());
        for i in 0..self.l {
            for j in 0..=i {
                x.push(sigma[(i, j)]);
            }
        }
        DVector::from_vec(x)
    }

    fn unpack(&self, x: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let beta = DMatrix::from_column_slice(self.p, self.l, &x.as_slice()[..self.n_beta()]);
        let mut sigma = DMatrix::zeros(self.l, self.l);
        let mut idx = self.n_beta();
        for i in 0..self.l {
            for j in 0..=i {
                sigma[(i, j)] = x[idx];
                sigma[(j, i)] = x[idx];
                idx += 1;
            }
        }
        (beta, sigma)
    }
}

struct MomentSystem<'a> {
    design: &'a StandardizedDesign,
    layout: Layout,
}

impl MomentSystem<'_> {
    /// Stacked residual; `None` when Σ is not positive definite or weights overflow.
    fn residual(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let (beta, sigma) = self.layout.unpack(x);
        let ratio = GaussianRatio::new(&beta, &sigma).ok()?;
        let a = &self.design.a_star;
        let c = &self.design.c_star;
        let n = a.nrows() as f64;
        let resid = a - c * &beta;
        let second = resid.tr_mul(&resid) / n;
        let weights = ratio.weights(a, c);
        if weights.iter().any(|w| !w.is_finite()) {
            return None;
        }
        let cross = super::weighted_rows(a, &weights).tr_mul(c) / n;

        let l = self.layout.l;
        let mut out = Vec::with_capacity(self.layout.len());
        for i in 0..l {
            for j in 0..=i {
                out.push(second[(i, j)] - sigma[(i, j)]);
            }
        }
        out.extend(cross.iter().copied());
        Some(DVector::from_vec(out))
    }

    fn jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let dim = x.len();
        let mut jac = DMatrix::zeros(dim, dim);
        for k in 0..dim {
            let h = 1e-6 * x[k].abs().max(1.0);
            let mut plus = x.clone();
            plus[k] += h;
            let mut minus = x.clone();
            minus[k] -= h;
            let fp = self.residual(&plus)?;
            let fm = self.residual(&minus)?;
            jac.set_column(k, &((fp - fm) / (2.0 * h)));
        }
        Some(jac)
    }
}

const STALL_WINDOW: usize = 10;

/// `β = (CᵀC)⁻¹CᵀA` and the residual second moment, projected to PD if needed.
fn least_squares_start(design: &StandardizedDesign) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (a, c) = (&design.a_star, &design.c_star);
    let beta = c
        .tr_mul(c)
        .cholesky()
        .map(|ch| ch.solve(&c.tr_mul(a)))
        .ok_or_else(|| Error::Collinearity("covariate Gram matrix is singular".into()))?;
    let resid = a - c * &beta;
    let mut sigma = symmetrize(&(resid.tr_mul(&resid) / design.n() as f64));
    if sigma.clone().cholesky().is_none() {
        sigma = clip_eigenvalues(&sigma, 1e-8);
    }
    Ok((beta, sigma))
}

fn rms(v: &DVector<f64>) -> f64 {
    (v.norm_squared() / v.len() as f64).sqrt()
}

/// Full Newton steps past the tolerance while the residual keeps shrinking.
fn polish(system: &MomentSystem, mut x: DVector<f64>, mut fx: DVector<f64>) -> (DVector<f64>, f64) {
    for _ in 0..POLISH_STEPS {
        let Some(step) = system.jacobian(&x).and_then(|j| j.lu().solve(&-&fx)) else {
            break;
        };
        let trial = &x + step;
        match system.residual(&trial) {
            Some(ft) if ft.norm() < fx.norm() => {
                x = trial;
                fx = ft;
            }
            _ => break,
        }
    }
    let r = rms(&fx);
    (x, r)
}

/// Solve the stacked moment equations for `(β, Σ)`.
pub fn solve_mom(design: &StandardizedDesign) -> Result<ParamFit> {
    let n = design.n();
    let l = design.rank();
    let p = design.n_covariates();
    if n <= p + l {
        return Err(Error::InsufficientData(format!(
            "method of moments needs n > p + L, got n = {n}, p = {p}, L = {l}"
        )));
    }

    let (beta0, sigma0) = least_squares_start(design)?;
    let mut pd_projections = 0;

    let system = MomentSystem {
        design,
        layout: Layout { p, l },
    };
    let mut x = system.layout.pack(&beta0, &sigma0);
    let mut fx = system
        .residual(&x)
        .ok_or(Error::NotPositiveDefinite("initial sigma"))?;
    let mut best = rms(&fx);

    let finish = |x: &DVector<f64>, res: f64, iterations: usize, pd_projections: usize| {
        let (beta, sigma) = system.layout.unpack(x);
        ParamFit {
            beta,
            sigma,
            moment_residual_norm: res,
            iterations,
            pd_projections,
            exact: true,
        }
    };

    let mut history = Vec::with_capacity(MOM_MAX_ITERATIONS);
    for iter in 0..MOM_MAX_ITERATIONS {
        let current = rms(&fx);
        if current <= MOM_TOLERANCE {
            let (x, current) = polish(&system, x, fx);
            return Ok(finish(&x, current, iter, pd_projections));
        }
        history.push(current);
        if iter >= STALL_WINDOW && current > 0.99 * history[iter - STALL_WINDOW] {
            return Err(Error::Convergence {
                iterations: iter,
                best_residual: best,
            });
        }
        let Some(jac) = system.jacobian(&x) else {
            break;
        };
        let rhs = -&fx;
        let step = match jac.clone().lu().solve(&rhs) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => match jac.svd(true, true).solve(&rhs, 1e-12) {
                Ok(s) => s,
                Err(_) => break,
            },
        };

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = &x + alpha * &step;
            if let Some(ft) = system.residual(&trial) {
                if ft.norm() <= (1.0 - 1e-4 * alpha) * fx.norm() {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((xn, fnew)) => {
                x = xn;
                fx = fnew;
                best = best.min(rms(&fx));
            }
            None => {
                // Σ may have drifted toward the PD boundary; project and retry once.
                let (beta, sigma) = system.layout.unpack(&x);
                let projected = clip_eigenvalues(&sigma, 1e-8);
                if (&projected - &sigma).norm() > 0.0 {
                    let xp = system.layout.pack(&beta, &projected);
                    if let Some(fp) = system.residual(&xp) {
                        x = xp;
                        fx = fp;
                        pd_projections += 1;
                        continue;
                    }
                }
                return Err(Error::Convergence {
                    iterations: iter + 1,
                    best_residual: best,
                });
            }
        }
    }
    let current = rms(&fx);
    if current <= MOM_TOLERANCE {
        return Ok(finish(&x, current, MOM_MAX_ITERATIONS, pd_projections));
    }
    Err(Error::Convergence {
        iterations: MOM_MAX_ITERATIONS,
        best_residual: best,
    })
}

/// Levenberg–Marquardt minimizer of the stacked moment residual, started
/// from the least-squares fit. `exact` reports whether a root was reached.
pub fn minimize_mom(design: &StandardizedDesign) -> Result<ParamFit> {
    let n = design.n();
    let (l, p) = (design.rank(), design.n_covariates());
    if n <= p + l {
        return Err(Error::InsufficientData(format!(
            "method of moments needs n > p + L, got n = {n}, p = {p}, L = {l}"
        )));
    }
    let (beta0, sigma0) = least_squares_start(design)?;
    let system = MomentSystem {
        design,
        layout: Layout { p, l },
    };
    let mut x = system.layout.pack(&beta0, &sigma0);
    let mut fx = system
        .residual(&x)
        .ok_or(Error::NotPositiveDefinite("initial sigma"))?;
    let mut mu = 1e-3;
    let mut iterations = 0;
    while iterations < LM_MAX_ITERATIONS && rms(&fx) > MOM_TOLERANCE {
        iterations += 1;
        let Some(jac) = system.jacobian(&x) else {
            break;
        };
        let grad = jac.tr_mul(&fx);
        if grad.amax() <= 1e-14 {
            break;
        }
        let jtj = jac.tr_mul(&jac);
        let mut accepted = false;
        while mu <= 1e12 {
            let mut damped = jtj.clone();
            for k in 0..damped.nrows() {
                damped[(k, k)] += mu * jtj[(k, k)].max(1e-12);
            }
            let step = damped.lu().solve(&-&grad);
            let trial = step.map(|s| &x + s);
            if let Some(ft) = trial.as_ref().and_then(|t| system.residual(t)) {
                if ft.norm_squared() < fx.norm_squared() {
                    let gain = fx.norm_squared() - ft.norm_squared();
                    let stalled = gain <= 1e-15 * fx.norm_squared();
                    x = trial.expect("trial exists when residual does");
                    fx = ft;
                    mu = (mu / 3.0).max(1e-12);
                    accepted = !stalled;
                    break;
                }
            }
            mu *= 4.0;
        }
        if !accepted {
            break;
        }
    }
    let (beta, sigma) = system.layout.unpack(&x);
    let residual = rms(&fx);
    Ok(ParamFit {
        beta,
        sigma,
        moment_residual_norm: residual,
        iterations,
        pd_projections: 0,
        exact: residual <= MOM_TOLERANCE,
    })
}

/// Parametric balancing weights with the default options.
pub fn estimate_weights_param(design: &StandardizedDesign) -> Result<BalanceWeights> {
    estimate_weights_param_with(design, &ParamOptions::default())
}

pub fn estimate_weights_param_with(
    design: &StandardizedDesign,
    options: &ParamOptions,
) -> Result<BalanceWeights> {
    let fit = match solve_mom(design) {
        Ok(fit) => fit,
        Err(Error::Convergence { .. }) if !options.require_root => minimize_mom(design)?,
        Err(e) => return Err(e),
    };
    let ratio = GaussianRatio::new(&fit.beta, &fit.sigma)?;
    let weights = ratio.weights(&design.a_star, &design.c_star);
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::NotPositiveDefinite("weights overflowed"));
    }
    Ok(BalanceWeights {
        residuals: ConstraintResiduals::evaluate(design, &weights),
        weights,
        method: Method::Parametric,
        solver: SolverDiagnostics::Parametric(fit),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn normal_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
        let d = x.len() as f64;
        let diff = x - mean;
        let inv = cov.clone().try_inverse().unwrap();
        let det = cov.determinant();
        (2.0 * PI).powf(-d / 2.0) * det.powf(-0.5) * (-0.5 * diff.dot(&(inv * &diff))).exp()
    }

    #[test]
    fn identity_model_gives_unit_weights() {
        let beta = DMatrix::zeros(2, 3);
        let sigma = DMatrix::identity(3, 3);
        for (a, c) in [
            ([0.3, -1.2, 2.0], [1.0, 0.5]),
            ([5.0, 0.0, -4.0], [-2.0, 9.0]),
        ] {
            let w = weight_formula(&a, &c, &beta, &sigma).unwrap();
            assert!((w - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn scalar_hand_value() {
        let beta = DMatrix::from_element(1, 1, 0.5);
        let sigma = DMatrix::from_element(1, 1, 0.75);
        let w = weight_formula(&[1.0], &[1.0], &beta, &sigma).unwrap();
        let hand = 0.75f64.sqrt() * (-1.0f64 / 3.0).exp();
        assert!((w - hand).abs() < 1e-14);
        assert!((w - 0.6204).abs() < 1e-3);
    }

    #[test]
    fn density_ratio_identity() {
        let beta = DMatrix::from_row_slice(2, 2, &[0.4, -0.2, 0.1, 0.3]);
        let sigma = DMatrix::from_row_slice(2, 2, &[0.8, 0.1, 0.1, 0.6]);
        let a = DVector::from_vec(vec![0.7, -1.1]);
        let c = DVector::from_vec(vec![1.5, -0.4]);
        let w = weight_formula(a.as_slice(), c.as_slice(), &beta, &sigma).unwrap();
        let marginal = normal_density(&a, &DVector::zeros(2), &DMatrix::identity(2, 2));
        let conditional = normal_density(&a, &beta.tr_mul(&c), &sigma);
        assert!((w * conditional - marginal).abs() < 1e-12);
    }

    #[test]
    fn non_pd_sigma_rejected() {
        let beta = DMatrix::zeros(1, 2);
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            weight_formula(&[0.0, 0.0], &[0.0], &beta, &sigma),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn layout_round_trip() {
        let layout = Layout { p: 2, l: 3 };
        let beta = DMatrix::from_fn(2, 3, |i, j| (i * 3 + j) as f64);
        let sigma = DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.2, 0.1, 3.0, 0.3, 0.2, 0.3, 4.0]);
        let x = layout.pack(&beta, &sigma);
        assert_eq!(x.len(), 6 + 6);
        let (b, s) = layout.unpack(&x);
        assert_eq!(b, beta);
        assert_eq!(s, sigma);
    }

    /// Rows come in pairs (a, c) and (a, −c): least squares gives β = 0 and the
    /// weighted cross-moment cancels pairwise, so the start already solves the system.
    #[test]
    fn mirrored_fixture_converges_immediately() {
        let base_a = [
            [0.9, -0.3],
            [-1.4, 0.8],
            [0.2, 1.7],
            [1.1, -1.2],
            [-0.6, -0.5],
            [0.4, 0.1],
        ];
        let base_c = [
            [1.0, 0.3],
            [-0.2, 0.9],
            [0.7, -1.1],
            [-1.3, 0.4],
            [0.5, 0.5],
            [0.1, -0.8],
        ];
        let n = base_a.len() * 2;
        let a = DMatrix::from_fn(n, 2, |i, k| base_a[i / 2][k]);
        let c = DMatrix::from_fn(n, 2, |i, k| {
            if i % 2 == 0 {
                base_c[i / 2][k]
            } else {
                -base_c[i / 2][k]
            }
        });
        let design = StandardizedDesign::from_parts(a.clone(), c.clone()).unwrap();
        let fit = solve_mom(&design).unwrap();
        assert!(fit.iterations <= 2);
        let ols = (c.tr_mul(&c)).try_inverse().unwrap() * c.tr_mul(&a);
        assert!((&fit.beta - &ols).norm() < 1e-8);
        assert!(fit.moment_residual_norm <= MOM_TOLERANCE);
    }

    #[test]
    fn too_few_rows() {
        let design =
            StandardizedDesign::from_parts(DMatrix::zeros(3, 2), DMatrix::zeros(3, 1)).unwrap();
        assert!(matches!(
            solve_mom(&design),
            Err(Error::InsufficientData(_))
        ));
    }
}
