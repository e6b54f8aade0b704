//! Nonparametric weights from the penalized empirical-likelihood program,
//! over a few penalty levels.
//!
//! cargo run --release --example empirical_likelihood_weights -- [setting]

use fps_causal::balance::{estimate_weights_np, ElProblem};
use fps_causal::fpca::{decompose, standardize};
use fps_causal::simgen::{generate, Setting, SimConfig};

fn main() {
    let setting: Setting = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "1".into())
        .parse()
        .expect("setting");
    let data = generate(&SimConfig::new(setting, 1), 0).expect("simulated data");
    let model = decompose(&data.sample).expect("fpca");
    let design =
        standardize(&model, model.select_rank(0.95).unwrap(), &data.covariates).expect("design");
    let n = design.n() as f64;

    println!(
        "{:>10} {:>8} {:>10} {:>10} {:>12}",
        "rho", "theta", "min w", "max w", "cross resid"
    );
    for rho in [0.01 / n, 0.1 / n, 1.0 / n, 10.0 / n] {
        let problem = ElProblem::new(design.clone())
            .unwrap()
            .with_rho(rho)
            .unwrap();
        match estimate_weights_np(&problem) {
            Ok(sol) => println!(
                "{rho:>10.2e} {:>8.4} {:>10.4} {:>10.4} {:>12.2e}",
                sol.theta_hat,
                sol.weights.min(),
                sol.weights.max(),
                sol.constraint_residuals.cross_moment.norm()
            ),
            Err(e) => println!("{rho:>10.2e} failed: {e}"),
        }
    }
}
