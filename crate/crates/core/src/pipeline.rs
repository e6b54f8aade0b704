//! End-to-end estimation: FPCA, balancing weights, truncated outcome fit.
//!
//! [`simulate_run`] evaluates every estimator cell on one simulated dataset;
//! [`analyze`] runs the data workflow (optional AVI selection, group
//! interaction and bootstrap bands) on user data.

use nalgebra::{DMatrix, DVector};

use crate::balance::{
    estimate_weights, BalanceOptions, BalanceWeights, ConstraintResiduals, Method,
    SolverDiagnostics,
};
use crate::error::{Error, Result};
use crate::fdata::FunctionalSample;
use crate::fpca::{decompose, standardize, standardize_scores, FpcaModel};
use crate::metrics::{weighted_f_statistic, FStatistic};
use crate::outcome::{
    avi_select, bootstrap_bands, fit_interaction, fit_truncated, BootstrapBands, BootstrapOptions,
    CoefficientTable, EffectEstimate,
};
use crate::simgen::{generate, SimConfig};

/// An estimator: a weighting method plus, for balancing methods, the PVE used to pick `L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimator {
    pub method: Method,
    pub pve_l: Option<f64>,
}

impl Estimator {
    pub fn label(&self) -> String {
        match self.pve_l {
            Some(p) => format!("{}@{p}", self.method),
            None => self.method.to_string(),
        }
    }
}

/// Unweighted once, then every balancing method at every `PVE_L`.
pub fn estimator_grid(methods: &[Method], pve_l: &[f64]) -> Vec<Estimator> {
    let mut out = Vec::new();
    if methods.contains(&Method::Unweighted) {
        out.push(Estimator {
            method: Method::Unweighted,
            pve_l: None,
        });
    }
    for &p in pve_l {
        for &m in methods.iter().filter(|m| **m != Method::Unweighted) {
            out.push(Estimator {
                method: m,
                pve_l: Some(p),
            });
        }
    }
    out
}

/// Result of one estimator on one simulated dataset.
#[derive(Debug, Clone)]
pub struct EstimatorRun {
    pub estimator: Estimator,
    /// Effect curve for each `PVE_L*`, in plan order; `Err` keeps the failure message.
    pub curves: std::result::Result<Vec<DVector<f64>>, String>,
    /// F statistic of each of the first `L` scores on the raw covariates, weighted.
    pub f_weighted: Vec<FStatistic>,
}

#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub run_index: usize,
    pub truth: DVector<f64>,
    /// Unweighted F statistics of the leading scores.
    pub f_unweighted: Vec<FStatistic>,
    pub rank_l: Vec<usize>,
    pub rank_lstar: Vec<usize>,
    pub estimators: Vec<EstimatorRun>,
}

#[derive(Debug, Clone)]
pub struct SimulationPlan {
    pub config: SimConfig,
    pub pve_l: Vec<f64>,
    pub pve_lstar: Vec<f64>,
    pub methods: Vec<Method>,
    pub weights: BalanceOptions,
    /// Number of leading scores whose balance F statistic is recorded.
    pub balance_components: usize,
}

impl SimulationPlan {
    pub fn new(config: SimConfig) -> Self {
        Self {
            config,
            pve_l: vec![0.95, 0.99],
            pve_lstar: vec![0.95, 0.99],
            methods: vec![
                Method::Unweighted,
                Method::Parametric,
                Method::Nonparametric,
            ],
            weights: BalanceOptions::default(),
            balance_components: 6,
        }
    }

    pub fn estimators(&self) -> Vec<Estimator> {
        estimator_grid(&self.methods, &self.pve_l)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        for p in self.pve_l.iter().chain(&self.pve_lstar) {
            if !(*p > 0.0 && *p <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "PVE thresholds must lie in (0, 1], got {p}"
                )));
            }
        }
        if self.methods.is_empty() || self.pve_lstar.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one method and one PVE_L* are required".into(),
            ));
        }
        if self.pve_l.is_empty() && self.methods.iter().any(|m| *m != Method::Unweighted) {
            return Err(Error::InvalidArgument(
                "balancing methods need at least one PVE_L".into(),
            ));
        }
        Ok(())
    }
}

fn score_f_statistics(
    model: &FpcaModel,
    count: usize,
    covariates: &DMatrix<f64>,
    weights: &DVector<f64>,
) -> Vec<FStatistic> {
    (0..count.min(model.n_components()))
        .map(|k| {
            let a = model.scores.column(k).into_owned();
            weighted_f_statistic(&a, covariates, weights).unwrap_or(FStatistic::Finite(f64::NAN))
        })
        .collect()
}

/// Every estimator of `plan` on simulated dataset `run_index`.
pub fn simulate_run(plan: &SimulationPlan, run_index: usize) -> Result<SimulationRun> {
    let data = generate(&plan.config, run_index)?;
    let model = decompose(&data.sample)?;
    let rank_l = plan
        .pve_l
        .iter()
        .map(|p| model.select_rank(*p))
        .collect::<Result<Vec<_>>>()?;
    let rank_lstar = plan
        .pve_lstar
        .iter()
        .map(|p| model.select_rank(*p))
        .collect::<Result<Vec<_>>>()?;
    let ones = DVector::from_element(data.outcome.len(), 1.0);
    let f_unweighted = score_f_statistics(&model, plan.balance_components, &data.covariates, &ones);

    let estimators = plan
        .estimators()
        .into_iter()
        .map(|estimator| {
            let weights = match estimator.pve_l {
                None => Ok(ones.clone()),
                Some(p) => {
                    let l = rank_l[plan
                        .pve_l
                        .iter()
                        .position(|q| *q == p)
                        .expect("pve_l from plan")];
                    standardize(&model, l, &data.covariates)
                        .and_then(|design| {
                            estimate_weights(&design, estimator.method, &plan.weights)
                        })
                        .map(|w| w.weights)
                }
            };
            let fitted = weights.and_then(|w| {
                let curves = rank_lstar
                    .iter()
                    .map(|&ls| {
                        let ids: Vec<usize> = (0..ls).collect();
                        fit_truncated(&data.outcome, &model.scores_for(&ids), &w, &model, &ids)
                            .map(|e| e.curve)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((w, curves))
            });
            match fitted {
                Ok((w, curves)) => EstimatorRun {
                    estimator,
                    f_weighted: score_f_statistics(
                        &model,
                        plan.balance_components,
                        &data.covariates,
                        &w,
                    ),
                    curves: Ok(curves),
                },
                Err(e) => EstimatorRun {
                    estimator,
                    f_weighted: Vec::new(),
                    curves: Err(e.to_string()),
                },
            }
        })
        .collect();

    Ok(SimulationRun {
        run_index,
        truth: data.truth,
        f_unweighted,
        rank_l,
        rank_lstar,
        estimators,
    })
}

/// How outcome-model components are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BasisChoice {
    /// Leading components reaching this PVE.
    Pve(f64),
    /// Initial set by PVE, then AVI share.
    Avi { initial_pve: f64, share: f64 },
}

#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    pub method: Method,
    pub pve_l: f64,
    pub basis: BasisChoice,
    pub weights: BalanceOptions,
    pub bootstrap: Option<BootstrapOptions>,
    /// Reuse the full-sample weights in every bootstrap replicate.
    pub frozen_weights: bool,
    /// Use these weights instead of estimating them; bootstrap replicates resample them.
    pub supplied_weights: Option<DVector<f64>>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            method: Method::Nonparametric,
            pve_l: 0.95,
            basis: BasisChoice::Pve(0.95),
            weights: BalanceOptions::default(),
            bootstrap: None,
            frozen_weights: false,
            supplied_weights: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub model: FpcaModel,
    pub rank_l: usize,
    pub basis_ids: Vec<usize>,
    pub weights: BalanceWeights,
    /// Named effect curves: `effect`, or `group0`, `group1`, `difference`.
    pub effects: Vec<(String, EffectEstimate)>,
    pub table: Option<CoefficientTable>,
    /// Bands aligned with `effects`.
    pub bands: Option<BootstrapBands>,
}

fn centered_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    let n = m.nrows() as f64;
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    out
}

fn fit_effects(
    model: &FpcaModel,
    basis: &DMatrix<f64>,
    outcome: &DVector<f64>,
    group: Option<&[f64]>,
    weights: &DVector<f64>,
    basis_ids: &[usize],
) -> Result<(Vec<(String, EffectEstimate)>, Option<CoefficientTable>)> {
    match group {
        None => Ok((
            vec![(
                "effect".into(),
                fit_truncated(outcome, basis, weights, model, basis_ids)?,
            )],
            None,
        )),
        Some(g) => {
            let fit = fit_interaction(outcome, basis, g, weights, model, basis_ids)?;
            let mut effects = vec![("group0".to_string(), fit.baseline.clone())];
            if let (Some(one), Some(diff)) = (fit.group_one(), fit.difference.clone()) {
                effects.push(("group1".into(), one));
                effects.push(("difference".into(), diff));
            }
            Ok((effects, Some(fit.table)))
        }
    }
}

/// Data workflow on `sample` with covariates, outcome and an optional binary group.
pub fn analyze(
    sample: &FunctionalSample,
    covariates: &DMatrix<f64>,
    outcome: &DVector<f64>,
    group: Option<&[f64]>,
    options: &AnalysisOptions,
) -> Result<Analysis> {
    let n = sample.n();
    if covariates.nrows() != n || outcome.len() != n {
        return Err(Error::Dimension {
            context: "analysis rows",
            expected: n,
            actual: if covariates.nrows() != n {
                covariates.nrows()
            } else {
                outcome.len()
            },
        });
    }
    let model = decompose(sample)?;
    let rank_l = model.select_rank(options.pve_l)?;
    let basis_ids = match options.basis {
        BasisChoice::Pve(p) => (0..model.select_rank(p)?).collect(),
        BasisChoice::Avi { initial_pve, share } => avi_select(outcome, &model, initial_pve, share)?,
    };
    let design = standardize(&model, rank_l, covariates)?;
    let weights = match &options.supplied_weights {
        None => estimate_weights(&design, options.method, &options.weights)?,
        Some(w) => {
            if w.len() != n {
                return Err(Error::Dimension {
                    context: "supplied weights",
                    expected: n,
                    actual: w.len(),
                });
            }
            BalanceWeights {
                residuals: ConstraintResiduals::evaluate(&design, w),
                weights: w.clone(),
                method: options.method,
                solver: SolverDiagnostics::Supplied,
            }
        }
    };
    let frozen = options.frozen_weights
        || options.supplied_weights.is_some()
        || options.method == Method::Unweighted;
    let basis = model.scores_for(&basis_ids);
    let (effects, table) =
        fit_effects(&model, &basis, outcome, group, &weights.weights, &basis_ids)?;

    let bands = match &options.bootstrap {
        None => None,
        Some(boot) => {
            let leading: Vec<usize> = (0..rank_l).collect();
            let replicate = |idx: &[usize]| -> Result<Vec<DVector<f64>>> {
                let scores = model.scores.select_rows(idx);
                let w = if frozen {
                    weights.weights.select_rows(idx)
                } else {
                    let d = standardize_scores(
                        &scores.select_columns(&leading),
                        &covariates.select_rows(idx),
                    )?;
                    estimate_weights(&d, options.method, &options.weights)?.weights
                };
                let b = centered_columns(&scores.select_columns(&basis_ids));
                let y = outcome.select_rows(idx);
                let g: Option<Vec<f64>> = group.map(|g| idx.iter().map(|&i| g[i]).collect());
                let (fx, _) = fit_effects(&model, &b, &y, g.as_deref(), &w, &basis_ids)?;
                if fx.len() != effects.len() {
                    return Err(Error::InsufficientData(
                        "a group is missing from the replicate".into(),
                    ));
                }
                Ok(fx.into_iter().map(|(_, e)| e.curve).collect())
            };
            Some(bootstrap_bands(n, boot, replicate)?)
        }
    };

    Ok(Analysis {
        model,
        rank_l,
        basis_ids,
        weights,
        effects,
        table,
        bands,
    })
}
