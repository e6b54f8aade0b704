//! Seeded generators for the four Monte Carlo settings.
//!
//! Curves are `X_i(t) = Σ_{k≤6} A_ik φ_k(t)` with Fourier eigenfunctions
//! `φ_{2k−1} = √2 sin(2πkt)`, `φ_{2k} = √2 cos(2πkt)` and independent scores
//! of variances `(16, 12, 8, 4, 1, 0.5)`. Covariates and outcome depend on the
//! setting:
//!
//! | setting | `C_1`              | outcome extra term |
//! |---------|--------------------|--------------------|
//! | 1       | `Z_1 + W_1`        | none               |
//! | 2       | `(Z_1 + 0.5)² + W_1` | none             |
//! | 3       | `Z_1 + W_1`        | `C_2²`             |
//! | 4       | `(Z_1 + 0.5)² + W_1` | `C_2²`           |
//!
//! with `C_2 = 0.2 Z_2 + W_2`, `C_3 = 0.2 Z_3 + W_3` and
//! `Y = 1 + ∫μX + 2C_1 [+ C_2²] + e`.
//!
//! Random draws come from per-(run, block, subject) substreams, so settings
//! that share a mechanism share the exact draws.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fdata::{FunctionalSample, Grid};
use crate::io::DataTable;
use crate::streams::substream;

/// Standard deviations of the six true FPC scores.
pub const SCORE_SDS: [f64; 6] = [
    4.0,
    2.0 * 1.732_050_807_568_877_2,
    2.0 * SQRT_2,
    2.0,
    1.0,
    1.0 / SQRT_2,
];
/// Population eigenvalues `(16, 12, 8, 4, 1, 0.5)`.
pub const POPULATION_EIGENVALUES: [f64; 6] = [16.0, 12.0, 8.0, 4.0, 1.0, 0.5];
/// Coefficients of the true effect in the eigenbasis.
pub const TRUE_EFFECT_COEFFS: [f64; 4] = [2.0, 1.0, 0.5, 0.5];

const BLOCK_SCORES: u64 = 1;
const BLOCK_COVARIATE_NOISE: u64 = 2;
const BLOCK_OUTCOME_NOISE: u64 = 3;
const STANDIN_STREAM: u64 = 0x57A4D;

/// Number of levels in the stand-in curves.
pub const STANDIN_LEVELS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Setting {
    One = 1,
    Two = 2,
    Three = 3,
    Four = 4,
}

impl Setting {
    pub const ALL: [Setting; 4] = [Setting::One, Setting::Two, Setting::Three, Setting::Four];

    pub fn from_index(k: u32) -> Result<Self> {
        match k {
            1 => Ok(Setting::One),
            2 => Ok(Setting::Two),
            3 => Ok(Setting::Three),
            4 => Ok(Setting::Four),
            _ => Err(Error::InvalidArgument(format!(
                "setting must be 1-4, got {k}"
            ))),
        }
    }

    pub fn index(&self) -> u32 {
        *self as u32
    }

    /// Scores enter `C_1` quadratically.
    fn nonlinear_covariate(&self) -> bool {
        matches!(self, Setting::Two | Setting::Four)
    }

    /// Outcome contains `C_2²`.
    fn nonlinear_outcome(&self) -> bool {
        matches!(self, Setting::Three | Setting::Four)
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let k: u32 = s
            .trim()
            .parse()
            .map_err(|_| Error::Usage(format!("setting must be an integer 1-4, got `{s}`")))?;
        Setting::from_index(k)
    }
}

/// How the second argument of `N(0, v)` is read for `W_2`, `W_3` and `e`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseScale {
    #[default]
    Variance,
    StandardDeviation,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub setting: Setting,
    pub n: usize,
    pub grid_size: usize,
    pub seed: u64,
    pub runs: usize,
    pub noise_scale: NoiseScale,
}

impl SimConfig {
    pub fn new(setting: Setting, seed: u64) -> Self {
        Self {
            setting,
            n: 200,
            grid_size: 128,
            seed,
            runs: 200,
            noise_scale: NoiseScale::Variance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument(format!(
                "n must be at least 2, got {}",
                self.n
            )));
        }
        if self.grid_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid size must be at least 2, got {}",
                self.grid_size
            )));
        }
        Ok(())
    }

    fn covariate_noise_sd(&self) -> f64 {
        match self.noise_scale {
            NoiseScale::Variance => 0.5f64.sqrt(),
            NoiseScale::StandardDeviation => 0.5,
        }
    }

    fn outcome_noise_sd(&self) -> f64 {
        match self.noise_scale {
            NoiseScale::Variance => 5.0,
            NoiseScale::StandardDeviation => 25.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimDataset {
    pub sample: FunctionalSample,
    /// `n × 3`.
    pub covariates: DMatrix<f64>,
    pub outcome: DVector<f64>,
    /// True effect `μ` on the grid.
    pub truth: DVector<f64>,
    /// `n × 6` true FPC scores.
    pub true_scores: DMatrix<f64>,
}

/// `φ_k` (zero-based `k < 6`) at `t`.
pub fn eigenfunction(k: usize, t: f64) -> f64 {
    let freq = (k / 2 + 1) as f64;
    if k % 2 == 0 {
        SQRT_2 * (2.0 * PI * freq * t).sin()
    } else {
        SQRT_2 * (2.0 * PI * freq * t).cos()
    }
}

/// `6 × m` matrix of the analytic eigenfunctions on `grid`.
pub fn eigenfunction_matrix(grid: &Grid) -> DMatrix<f64> {
    DMatrix::from_fn(6, grid.len(), |k, j| eigenfunction(k, grid.points()[j]))
}

/// True effect `μ(t) = 2φ_1 + φ_2 + 0.5φ_3 + 0.5φ_4` on `grid`.
pub fn true_effect(grid: &Grid) -> DVector<f64> {
    grid.map(|t| {
        TRUE_EFFECT_COEFFS
            .iter()
            .enumerate()
            .map(|(k, c)| c * eigenfunction(k, t))
            .sum()
    })
}

fn normals<const K: usize>(seed: u64, run: u64, block: u64, subject: u64) -> [f64; K] {
    let mut rng = substream(seed, &[run, block, subject]);
    let mut out = [0.0; K];
    for v in out.iter_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
    out
}

/// Dataset for run `run_index` of `config`.
pub fn generate(config: &SimConfig, run_index: usize) -> Result<SimDataset> {
    config.validate()?;
    let n = config.n;
    let grid = Grid::uniform(config.grid_size)?;
    let phi = eigenfunction_matrix(&grid);
    let run = run_index as u64;

    let mut scores = DMatrix::zeros(n, 6);
    let mut covariates = DMatrix::zeros(n, 3);
    let mut outcome = DVector::zeros(n);
    let w_sd = config.covariate_noise_sd();
    let e_sd = config.outcome_noise_sd();

    for i in 0..n {
        let z: [f64; 6] = normals(config.seed, run, BLOCK_SCORES, i as u64);
        let w: [f64; 3] = normals(config.seed, run, BLOCK_COVARIATE_NOISE, i as u64);
        let [e]: [f64; 1] = normals(config.seed, run, BLOCK_OUTCOME_NOISE, i as u64);
        for k in 0..6 {
            scores[(i, k)] = SCORE_SDS[k] * z[k];
        }
        let c1 = if config.setting.nonlinear_covariate() {
            (z[0] + 0.5).powi(2) + w[0]
        } else {
            z[0] + w[0]
        };
        let c2 = 0.2 * z[1] + w_sd * w[1];
        let c3 = 0.2 * z[2] + w_sd * w[2];
        covariates[(i, 0)] = c1;
        covariates[(i, 1)] = c2;
        covariates[(i, 2)] = c3;

        let effect: f64 = TRUE_EFFECT_COEFFS
            .iter()
            .enumerate()
            .map(|(k, c)| c * scores[(i, k)])
            .sum();
        let mut y = 1.0 + effect + 2.0 * c1 + e_sd * e;
        if config.setting.nonlinear_outcome() {
            y += c2 * c2;
        }
        outcome[i] = y;
    }
    let values = &scores * &phi;
    let sample = FunctionalSample::new(grid.clone(), values)?;
    Ok(SimDataset {
        sample,
        covariates,
        outcome,
        truth: true_effect(&grid),
        true_scores: scores,
    })
}

/// Synthetic stand-in for a body-composition study: circumference curves on
/// 128 levels, covariates `age`, `height`, `activity`, a binary `group` and an
/// outcome with group-specific effects. Scores depend on the covariates and
/// the group, so unweighted fits are confounded.
pub fn standin_dataset(n: usize, seed: u64) -> Result<(FunctionalSample, DataTable)> {
    if n < 10 {
        return Err(Error::InvalidArgument(format!(
            "stand-in needs n >= 10, got {n}"
        )));
    }
    let grid = Grid::uniform(STANDIN_LEVELS)?;
    let phi = eigenfunction_matrix(&grid);
    let mean = grid.map(|t| 60.0 + 25.0 * (PI * t).sin());
    let sds = [4.0, 3.0, 2.0, 1.5, 1.0, 0.5];
    let mut scores = DMatrix::zeros(n, 6);
    let mut covariates = DMatrix::zeros(n, 3);
    let mut outcome = DVector::zeros(n);
    let mut group = vec![0.0; n];
    for i in 0..n {
        let mut rng = substream(seed, &[STANDIN_STREAM, i as u64]);
        let mut z = [0.0; 11];
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let g = if z[9] > 0.0 { 1.0 } else { 0.0 };
        let age = 45.0 + 10.0 * z[6];
        let height = 170.0 + 8.0 * z[7] + 6.0 * g;
        let activity = z[8];
        for k in 0..6 {
            scores[(i, k)] = sds[k] * z[k];
        }
        scores[(i, 0)] += 0.2 * (age - 45.0) + 2.0 * g - 1.5 * activity;
        scores[(i, 1)] += 0.15 * (height - 173.0);
        scores[(i, 2)] += 0.5 * activity;
        let a = scores.row(i);
        let y = 30.0 - 17.0 * g - 0.8 * a[0] - 0.6 * a[1]
            + 0.3 * a[2]
            + g * (-0.2 * a[0] + 0.1 * a[1])
            + 0.3 * (age - 45.0)
            + 0.1 * (height - 173.0)
            - 2.0 * activity
            + 3.0 * z[10];
        outcome[i] = y;
        group[i] = g;
        covariates[(i, 0)] = age;
        covariates[(i, 1)] = height;
        covariates[(i, 2)] = activity;
    }
    let mut values = &scores * &phi;
    for mut row in values.row_iter_mut() {
        row += mean.transpose();
    }
    let sample = FunctionalSample::new(grid, values)?;
    let data = DataTable {
        covariate_names: vec!["age".into(), "height".into(), "activity".into()],
        covariates,
        outcome,
        group: Some(group),
    };
    Ok((sample, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n;
        let vb = b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / n;
        let cov = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>()
            / n;
        (va, vb, cov)
    }

    #[test]
    fn setting_one_population_moments() {
        let mut cfg = SimConfig::new(Setting::One, 11);
        cfg.n = 100_000;
        cfg.grid_size = 8;
        let d = generate(&cfg, 0).unwrap();
        let a1: Vec<f64> = d.true_scores.column(0).iter().copied().collect();
        let c1: Vec<f64> = d.covariates.column(0).iter().copied().collect();
        let (va, vc, cov) = moments(&a1, &c1);
        assert!((va - 16.0).abs() < 0.5, "{va}");
        assert!((vc - 2.0).abs() < 0.05, "{vc}");
        assert!((cov - 4.0).abs() < 0.1, "{cov}");
    }

    #[test]
    fn setting_two_covariance() {
        let mut cfg = SimConfig::new(Setting::Two, 12);
        cfg.n = 100_000;
        cfg.grid_size = 8;
        let d = generate(&cfg, 0).unwrap();
        let a1: Vec<f64> = d.true_scores.column(0).iter().copied().collect();
        let c1: Vec<f64> = d.covariates.column(0).iter().copied().collect();
        let (_, _, cov) = moments(&a1, &c1);
        assert!((cov - 4.0).abs() < 0.1, "{cov}");
    }

    #[test]
    fn deterministic_and_shared_across_settings() {
        let mut cfg = SimConfig::new(Setting::One, 5);
        cfg.n = 50;
        let a = generate(&cfg, 3).unwrap();
        let b = generate(&cfg, 3).unwrap();
        assert_eq!(a.sample, b.sample);
        assert_eq!(a.outcome, b.outcome);
        cfg.setting = Setting::Three;
        let c = generate(&cfg, 3).unwrap();
        assert_eq!(a.covariates, c.covariates);
        assert_eq!(a.sample, c.sample);
        let other_run = generate(&cfg, 4).unwrap();
        assert_ne!(a.covariates, other_run.covariates);
    }

    #[test]
    fn curves_rebuild_from_scores_bitwise() {
        let mut cfg = SimConfig::new(Setting::Four, 9);
        cfg.n = 20;
        let d = generate(&cfg, 0).unwrap();
        let phi = eigenfunction_matrix(d.sample.grid());
        assert_eq!(&(&d.true_scores * phi), d.sample.values());
    }

    #[test]
    fn invalid_setting_rejected() {
        assert!(Setting::from_index(5).is_err());
        assert!("0".parse::<Setting>().is_err());
        assert_eq!("3".parse::<Setting>().unwrap(), Setting::Three);
    }
}
