//! Parametric balancing weights and the balance they buy.
//!
//! cargo run --release --example parametric_weights -- [setting] [run]

use fps_causal::balance::{estimate_weights_param, SolverDiagnostics};
use fps_causal::fpca::{decompose, standardize};
use fps_causal::metrics::weighted_f_statistic;
use fps_causal::simgen::{generate, Setting, SimConfig};
use nalgebra::DVector;

fn main() {
    let mut args = std::env::args().skip(1);
    let setting: Setting = args
        .next()
        .unwrap_or_else(|| "1".into())
        .parse()
        .expect("setting");
    let run: usize = args.next().map_or(0, |s| s.parse().expect("run"));
    let data = generate(&SimConfig::new(setting, 1), run).expect("simulated data");
    let model = decompose(&data.sample).expect("fpca");
    let l = model.select_rank(0.95).unwrap();
    let design = standardize(&model, l, &data.covariates).expect("design");
    let w = estimate_weights_param(&design).expect("weights");

    if let SolverDiagnostics::Parametric(fit) = &w.solver {
        println!(
            "L = {l}, iterations {}, moment RMS {:.2e}, exact root: {}",
            fit.iterations, fit.moment_residual_norm, fit.exact
        );
        println!("beta (p x L):{}", fit.beta);
    }
    println!(
        "weights in [{:.3}, {:.3}]",
        w.weights.min(),
        w.weights.max()
    );

    let ones = DVector::from_element(w.weights.len(), 1.0);
    for k in 0..l {
        let a = model.scores.column(k).into_owned();
        let before = weighted_f_statistic(&a, &data.covariates, &ones).unwrap();
        let after = weighted_f_statistic(&a, &data.covariates, &w.weights).unwrap();
        println!(
            "FPC{}: F unweighted {:>8.3}  weighted {:>8.3}",
            k + 1,
            before.value(),
            after.value()
        );
    }
}
