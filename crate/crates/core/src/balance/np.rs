//! Nonparametric weights from an ℓ²-regularized empirical-likelihood program.
//!
//! The cross-moment constraint is relaxed to `n⁻¹ Σ w_i A*_i C*_iᵀ = θ Γ₀`,
//! where `Γ₀` is the unweighted cross-moment and `θ ∈ [−1, 1]`. For fixed `θ`
//! the dual
//!
//! ```text
//! γ̂(θ) = argmax_γ Σ_i log(1 − γᵀ h_i(θ)),
//! h_i(θ) = (A*_i, C*_i, vec(A*_i C*_iᵀ − θ Γ₀))
//! ```
//!
//! is solved by BFGS (inner loop). Since `Σ log ŵ_i = −Σ log(1 − γ̂ᵀh_i)`, the
//! outer loop maximizes the penalized empirical log-likelihood
//! `Σ log ŵ_i − θ²‖Γ₀‖²/(2ρ)` over a grid of `θ`, refines the best grid point
//! by golden-section search, and returns `w_i = 1 / (1 − γ̂ᵀ h_i(θ̂))`.

use nalgebra::{DMatrix, DVector};

use super::{BalanceWeights, ConstraintResiduals, Method, SolverDiagnostics};
use crate::error::{Error, Result};
use crate::fpca::StandardizedDesign;
use crate::linalg::inverse_spd;
use crate::optim::{bfgs_minimize, golden_section_max, BfgsOptions};

/// Smallest admissible value of `1 − γᵀh_i` during the inner line search.
pub const FEASIBILITY_MARGIN: f64 = 1e-10;
pub const INNER_GRADIENT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_GRID_POINTS: usize = 201;

/// How the relaxed cross-moment enters `h_i(θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HVectorForm {
    /// `A*_i C*_iᵀ − θΓ₀`, which imposes `n⁻¹ Σ w A* C*ᵀ = θΓ₀`.
    #[default]
    PerObservation,
    /// `A*_i C*_iᵀ − nθΓ₀`, reproducing the alternative printed form.
    Literal,
}

/// Quantity maximized over `θ` by the outer loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProfileObjective {
    /// `Σ log ŵ − θ²‖Γ₀‖²/(2ρ)`: empirical log-likelihood with a Gaussian
    /// penalty on the imbalance.
    #[default]
    LogLikelihood,
    /// `Σ log(1 − γ̂ᵀh) − θ²‖Γ₀‖²/(2ρ)`. This rewards large dual values, which
    /// pushes `θ̂` toward the feasibility boundary and degenerate weights.
    DualValue,
}

#[derive(Debug, Clone)]
pub struct ElProblem {
    pub design: StandardizedDesign,
    pub rho: f64,
    /// `n⁻¹ Σ A*_i C*_iᵀ` (`L × p`).
    pub gamma0: DMatrix<f64>,
    pub theta_grid: Vec<f64>,
    pub hvec: HVectorForm,
    pub profile: ProfileObjective,
    /// Rows `h_i(0)`.
    base: DMatrix<f64>,
    /// `vec(Γ₀)` padded to the moment dimension; `h_i(θ) = base_i − θ·scale·shift`.
    shift: DVector<f64>,
}

impl ElProblem {
    /// Problem with `ρ = 0.1/n` and a 201-point `θ` grid.
    pub fn new(design: StandardizedDesign) -> Result<Self> {
        let n = design.n();
        if n < 2 {
            return Err(Error::InsufficientData(format!("need n >= 2, got {n}")));
        }
        let l = design.rank();
        let p = design.n_covariates();
        let gamma0 = design.a_star.tr_mul(&design.c_star) / n as f64;
        let dim = l + p + l * p;
        let mut base = DMatrix::zeros(n, dim);
        for i in 0..n {
            let a = design.a_star.row(i);
            let c = design.c_star.row(i);
            for k in 0..l {
                base[(i, k)] = a[k];
            }
            for j in 0..p {
                base[(i, l + j)] = c[j];
            }
            for j in 0..p {
                for k in 0..l {
                    base[(i, l + p + j * l + k)] = a[k] * c[j];
                }
            }
        }
        let mut shift = DVector::zeros(dim);
        for (idx, v) in gamma0.iter().enumerate() {
            shift[l + p + idx] = *v;
        }
        let grid = (0..DEFAULT_GRID_POINTS)
            .map(|k| -1.0 + 2.0 * k as f64 / (DEFAULT_GRID_POINTS - 1) as f64)
            .collect();
        Ok(Self {
            rho: 0.1 / n as f64,
            gamma0,
            theta_grid: grid,
            hvec: HVectorForm::default(),
            profile: ProfileObjective::default(),
            base,
            shift,
            design,
        })
    }

    pub fn with_rho(mut self, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "rho must be positive, got {rho}"
            )));
        }
        self.rho = rho;
        Ok(self)
    }

    /// Replace the `θ` grid; it must be sorted, lie in `[−1, 1]`, and contain 0 and both endpoints.
    pub fn with_theta_grid(mut self, grid: Vec<f64>) -> Result<Self> {
        let sorted = grid.windows(2).all(|w| w[0] < w[1]);
        let bounded = grid.iter().all(|t| (-1.0..=1.0).contains(t));
        let has = |x: f64| grid.iter().any(|t| *t == x);
        if !(sorted && bounded && has(-1.0) && has(0.0) && has(1.0)) {
            return Err(Error::InvalidArgument(
                "theta grid must be increasing within [-1, 1] and contain -1, 0 and 1".into(),
            ));
        }
        self.theta_grid = grid;
        Ok(self)
    }

    pub fn with_hvec(mut self, hvec: HVectorForm) -> Self {
        self.hvec = hvec;
        self
    }

    pub fn with_profile(mut self, profile: ProfileObjective) -> Self {
        self.profile = profile;
        self
    }

    pub fn n(&self) -> usize {
        self.design.n()
    }

    /// Length of `h_i`: `L + p + L·p`.
    pub fn moment_dim(&self) -> usize {
        self.base.ncols()
    }

    fn theta_scale(&self) -> f64 {
        match self.hvec {
            HVectorForm::PerObservation => 1.0,
            HVectorForm::Literal => self.n() as f64,
        }
    }

    /// Matrix whose rows are `h_i(θ)`.
    pub fn moments(&self, theta: f64) -> DMatrix<f64> {
        let mut h = self.base.clone();
        let s = theta * self.theta_scale();
        if s != 0.0 {
            for (j, mut col) in h.column_iter_mut().enumerate() {
                let d = self.shift[j];
                if d != 0.0 {
                    col.add_scalar_mut(-s * d);
                }
            }
        }
        h
    }

    /// `‖vec(Γ₀)‖² / (2ρ)`.
    pub fn penalty_coefficient(&self) -> f64 {
        self.gamma0.norm_squared() / (2.0 * self.rho)
    }

    /// Cross-moment target `n⁻¹ Σ w A* C*ᵀ` implied by `θ`.
    pub fn cross_target(&self, theta: f64) -> DMatrix<f64> {
        &self.gamma0 * (theta * self.theta_scale())
    }
}

/// `h_i(θ) = (A*_i, C*_i, vec(A*_i C*_iᵀ − θΓ₀))`, column-major `vec`.
pub fn moment_vector(
    a_star: &[f64],
    c_star: &[f64],
    theta: f64,
    gamma0: &DMatrix<f64>,
) -> DVector<f64> {
    let l = a_star.len();
    let p = c_star.len();
    let mut h = Vec::with_capacity(l + p + l * p);
    h.extend_from_slice(a_star);
    h.extend_from_slice(c_star);
    for j in 0..p {
        for k in 0..l {
            h.push(a_star[k] * c_star[j] - theta * gamma0[(k, j)]);
        }
    }
    DVector::from_vec(h)
}

#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub gamma: DVector<f64>,
    /// `Σ log(1 − γ̂ᵀh_i(θ))`, nonnegative at the maximizer.
    pub objective: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

/// Negated dual objective `−Σ log(1 − γᵀh_i)` and its gradient `Σ h_i/(1 − γᵀh_i)`.
fn negated_dual(h: &DMatrix<f64>, gamma: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
    let margins = h * gamma;
    let mut value = 0.0;
    let mut inv = DVector::zeros(margins.len());
    for (i, m) in margins.iter().enumerate() {
        let arg = 1.0 - m;
        if !(arg > FEASIBILITY_MARGIN) {
            return None;
        }
        value -= arg.ln();
        inv[i] = 1.0 / arg;
    }
    Some((value, h.tr_mul(&inv)))
}

fn dual_inverse_hessian(h: &DMatrix<f64>, gamma: &DVector<f64>) -> Option<DMatrix<f64>> {
    let margins = h * gamma;
    let mut scaled = h.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row /= 1.0 - margins[i];
    }
    inverse_spd(&scaled.tr_mul(&scaled))
}

fn solve_inner_at(
    h: &DMatrix<f64>,
    theta: f64,
    start: Option<&DVector<f64>>,
) -> Result<InnerSolution> {
    let dim = h.ncols();
    let zero = DVector::zeros(dim);
    let start = match start {
        Some(s) if negated_dual(h, s).is_some() => s.clone(),
        _ => zero,
    };
    let seed = dual_inverse_hessian(h, &start);
    let options = BfgsOptions {
        gradient_tolerance: INNER_GRADIENT_TOLERANCE,
        ..BfgsOptions::default()
    };
    let sol = bfgs_minimize(|g| negated_dual(h, g), start, seed, options)
        .map_err(|_| Error::InnerInfeasible { theta })?;
    Ok(InnerSolution {
        gamma: sol.point,
        objective: -sol.value,
        gradient_norm: sol.gradient_norm,
        iterations: sol.iterations,
    })
}

/// Inner loop at fixed `θ`, started from `γ = 0`.
pub fn inner_solve(problem: &ElProblem, theta: f64) -> Result<InnerSolution> {
    if !(-1.0..=1.0).contains(&theta) {
        return Err(Error::InvalidArgument(format!(
            "theta must lie in [-1, 1], got {theta}"
        )));
    }
    solve_inner_at(&problem.moments(theta), theta, None)
}

#[derive(Debug, Clone)]
pub struct ElSolution {
    pub gamma_hat: DVector<f64>,
    pub theta_hat: f64,
    pub weights: DVector<f64>,
    /// Dual value `Σ log(1 − γ̂ᵀh_i(θ̂))`.
    pub inner_objective: f64,
    /// Penalized profile value at `θ̂`.
    pub profile_value: f64,
    pub constraint_residuals: ConstraintResiduals,
    /// `‖n⁻¹ Σ w A* C*ᵀ − target(θ̂)‖_F`.
    pub relaxed_cross_residual: f64,
    pub infeasible_thetas: Vec<f64>,
    /// Whether the weights were renormalized to sum to `n`.
    pub rescaled: bool,
}

impl ElSolution {
    pub fn into_balance_weights(self, _problem: &ElProblem) -> BalanceWeights {
        BalanceWeights {
            weights: self.weights,
            method: Method::Nonparametric,
            residuals: self.constraint_residuals,
            solver: SolverDiagnostics::Nonparametric {
                theta: self.theta_hat,
                gamma: self.gamma_hat,
                inner_objective: self.inner_objective,
                profile_value: self.profile_value,
                infeasible_thetas: self.infeasible_thetas,
                rescaled: self.rescaled,
            },
        }
    }
}

struct Candidate {
    theta: f64,
    value: f64,
    inner: InnerSolution,
}

fn profile_value(problem: &ElProblem, theta: f64, inner: &InnerSolution) -> f64 {
    let penalty = theta * theta * problem.penalty_coefficient();
    match problem.profile {
        ProfileObjective::DualValue => inner.objective - penalty,
        ProfileObjective::LogLikelihood => -inner.objective - penalty,
    }
}

fn improves(candidate: (f64, f64), best: &Candidate) -> bool {
    let (theta, value) = candidate;
    let tol = 1e-12 * (1.0 + best.value.abs());
    value > best.value + tol
        || ((value - best.value).abs() <= tol && theta.abs() < best.theta.abs())
}

/// Double-loop solve: grid search over `θ`, golden-section refinement, final weights.
pub fn estimate_weights_np(problem: &ElProblem) -> Result<ElSolution> {
    let mut best: Option<Candidate> = None;
    let mut infeasible = Vec::new();
    let mut warm: Option<DVector<f64>> = None;
    let mut best_index = 0;

    for (idx, &theta) in problem.theta_grid.iter().enumerate() {
        let h = problem.moments(theta);
        let solved =
            solve_inner_at(&h, theta, warm.as_ref()).or_else(|_| solve_inner_at(&h, theta, None));
        match solved {
            Ok(inner) => {
                let value = profile_value(problem, theta, &inner);
                warm = Some(inner.gamma.clone());
                let replace = best.as_ref().is_none_or(|b| improves((theta, value), b));
                if replace {
                    best = Some(Candidate {
                        theta,
                        value,
                        inner,
                    });
                    best_index = idx;
                }
            }
            Err(_) => {
                infeasible.push(theta);
                warm = None;
            }
        }
    }
    let mut best = best.ok_or(Error::Infeasible)?;

    let grid = &problem.theta_grid;
    let lo = grid[best_index.saturating_sub(1)];
    let hi = grid[(best_index + 1).min(grid.len() - 1)];
    if hi > lo {
        let start = best.inner.gamma.clone();
        let mut refined: Option<Candidate> = None;
        golden_section_max(
            |theta| {
                let h = problem.moments(theta);
                let inner = solve_inner_at(&h, theta, Some(&start)).ok()?;
                let value = profile_value(problem, theta, &inner);
                if refined.as_ref().is_none_or(|r| value > r.value) {
                    refined = Some(Candidate {
                        theta,
                        value,
                        inner,
                    });
                }
                Some(value)
            },
            lo,
            hi,
            1e-9,
            80,
        );
        if let Some(r) = refined {
            if improves((r.theta, r.value), &best) && r.value > best.value {
                best = r;
            }
        }
    }

    let h = problem.moments(best.theta);
    let margins = &h * &best.inner.gamma;
    let mut weights = margins.map(|m| 1.0 / (1.0 - m));
    let n = problem.n() as f64;
    let mut rescaled = false;
    if (weights.sum() - n).abs() > 1e-8 {
        weights *= n / weights.sum();
        rescaled = true;
    }
    let residuals = ConstraintResiduals::evaluate(&problem.design, &weights);
    let relaxed = (&residuals.cross_moment - problem.cross_target(best.theta)).norm();
    Ok(ElSolution {
        gamma_hat: best.inner.gamma,
        theta_hat: best.theta,
        weights,
        inner_objective: best.inner.objective,
        profile_value: best.value,
        constraint_residuals: residuals,
        relaxed_cross_residual: relaxed,
        infeasible_thetas: infeasible,
        rescaled,
    })
}
