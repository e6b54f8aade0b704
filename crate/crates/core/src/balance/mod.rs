//! Covariate-balancing weights for standardized FPC scores.
//!
//! Two estimators are provided: a parametric method-of-moments fit under joint
//! normality ([`param`]) and a regularized empirical-likelihood program solved
//! through its dual ([`np`]). Both return [`BalanceWeights`].

pub mod np;
pub mod param;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::fpca::StandardizedDesign;

pub use np::{
    estimate_weights_np, inner_solve, moment_vector, ElProblem, ElSolution, HVectorForm,
    InnerSolution, ProfileObjective,
};
pub use param::{
    estimate_weights_param, estimate_weights_param_with, minimize_mom, solve_mom, weight_formula,
    GaussianRatio, ParamFit, ParamOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Unweighted,
    Parametric,
    Nonparametric,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Unweighted => "unweighted",
            Method::Parametric => "parametric",
            Method::Nonparametric => "nonparametric",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "unweighted" | "none" => Ok(Method::Unweighted),
            "parametric" | "para" => Ok(Method::Parametric),
            "nonparametric" | "np" => Ok(Method::Nonparametric),
            other => Err(Error::Usage(format!("unknown method `{other}`"))),
        }
    }
}

/// Sample balance conditions evaluated at a weight vector.
#[derive(Debug, Clone)]
pub struct ConstraintResiduals {
    /// `Σ w_i − n`.
    pub total_minus_n: f64,
    /// `Σ w_i A*_i`.
    pub score_moment: DVector<f64>,
    /// `Σ w_i C*_i`.
    pub covariate_moment: DVector<f64>,
    /// `n⁻¹ Σ w_i A*_i C*_iᵀ` (`L × p`).
    pub cross_moment: DMatrix<f64>,
}

impl ConstraintResiduals {
    pub fn evaluate(design: &StandardizedDesign, weights: &DVector<f64>) -> Self {
        let n = design.n() as f64;
        let wa = weighted_rows(&design.a_star, weights);
        Self {
            total_minus_n: weights.sum() - n,
            score_moment: design.a_star.tr_mul(weights),
            covariate_moment: design.c_star.tr_mul(weights),
            cross_moment: wa.tr_mul(&design.c_star) / n,
        }
    }
}

/// Rows of `matrix` scaled by `weights`.
pub(crate) fn weighted_rows(matrix: &DMatrix<f64>, weights: &DVector<f64>) -> DMatrix<f64> {
    let mut out = matrix.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= weights[i];
    }
    out
}

#[derive(Debug, Clone)]
pub enum SolverDiagnostics {
    Unweighted,
    /// Weights read from outside, not estimated here.
    Supplied,
    Parametric(ParamFit),
    Nonparametric {
        theta: f64,
        gamma: DVector<f64>,
        inner_objective: f64,
        profile_value: f64,
        infeasible_thetas: Vec<f64>,
        rescaled: bool,
    },
}

#[derive(Debug, Clone)]
pub struct BalanceWeights {
    pub weights: DVector<f64>,
    pub method: Method,
    pub residuals: ConstraintResiduals,
    pub solver: SolverDiagnostics,
}

impl BalanceWeights {
    /// All-ones weights, the unadjusted reference.
    pub fn unweighted(design: &StandardizedDesign) -> Self {
        let weights = DVector::from_element(design.n(), 1.0);
        Self {
            residuals: ConstraintResiduals::evaluate(design, &weights),
            weights,
            method: Method::Unweighted,
            solver: SolverDiagnostics::Unweighted,
        }
    }

    /// Key/value diagnostics in a stable order, for CSV output.
    pub fn diagnostic_rows(&self) -> Vec<(String, f64)> {
        let mut rows = vec![
            (
                "sum_weights_minus_n".to_string(),
                self.residuals.total_minus_n,
            ),
            (
                "score_moment_norm".to_string(),
                self.residuals.score_moment.norm(),
            ),
            (
                "covariate_moment_norm".to_string(),
                self.residuals.covariate_moment.norm(),
            ),
            (
                "cross_moment_norm".to_string(),
                self.residuals.cross_moment.norm(),
            ),
            ("min_weight".to_string(), self.weights.min()),
            ("max_weight".to_string(), self.weights.max()),
        ];
        match &self.solver {
            SolverDiagnostics::Unweighted | SolverDiagnostics::Supplied => {}
            SolverDiagnostics::Parametric(fit) => {
                rows.push(("moment_residual_rms".into(), fit.moment_residual_norm));
                rows.push(("iterations".into(), fit.iterations as f64));
                rows.push(("pd_projections".into(), fit.pd_projections as f64));
                rows.push(("exact_root".into(), if fit.exact { 1.0 } else { 0.0 }));
                for (idx, v) in fit.beta.iter().enumerate() {
                    rows.push((format!("beta_{idx}"), *v));
                }
                for (idx, v) in fit.sigma.iter().enumerate() {
                    rows.push((format!("sigma_{idx}"), *v));
                }
            }
            SolverDiagnostics::Nonparametric {
                theta,
                gamma,
                inner_objective,
                profile_value,
                infeasible_thetas,
                rescaled,
            } => {
                rows.push(("theta".into(), *theta));
                rows.push(("inner_objective".into(), *inner_objective));
                rows.push(("profile_objective".into(), *profile_value));
                rows.push(("rescaled".into(), if *rescaled { 1.0 } else { 0.0 }));
                rows.push((
                    "infeasible_grid_points".into(),
                    infeasible_thetas.len() as f64,
                ));
                for t in infeasible_thetas {
                    rows.push(("infeasible_theta".into(), *t));
                }
                for (idx, v) in gamma.iter().enumerate() {
                    rows.push((format!("gamma_{idx}"), *v));
                }
            }
        }
        rows
    }
}

/// Solver knobs shared by both balancing methods.
#[derive(Debug, Clone, Copy, Default)]
pub struct BalanceOptions {
    /// Empirical-likelihood penalty; `None` uses `0.1/n`.
    pub rho: Option<f64>,
    pub hvec: HVectorForm,
    pub profile: ProfileObjective,
    pub param: ParamOptions,
}

/// Estimate weights with the chosen method.
pub fn estimate_weights(
    design: &StandardizedDesign,
    method: Method,
    options: &BalanceOptions,
) -> crate::Result<BalanceWeights> {
    match method {
        Method::Unweighted => Ok(BalanceWeights::unweighted(design)),
        Method::Parametric => estimate_weights_param_with(design, &options.param),
        Method::Nonparametric => {
            let mut problem = ElProblem::new(design.clone())?
                .with_hvec(options.hvec)
                .with_profile(options.profile);
            if let Some(r) = options.rho {
                problem = problem.with_rho(r)?;
            }
            Ok(estimate_weights_np(&problem)?.into_balance_weights(&problem))
        }
    }
}
