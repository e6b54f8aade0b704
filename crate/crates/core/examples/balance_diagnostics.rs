//! Score-covariate balance before and after weighting, per component and covariate.
//!
//! cargo run --release --example balance_diagnostics -- [setting]

use fps_causal::balance::{estimate_weights, BalanceOptions, Method};
use fps_causal::fpca::{decompose, standardize};
use fps_causal::metrics::balance_report;
use fps_causal::simgen::{generate, Setting, SimConfig};
use nalgebra::DVector;

fn main() {
    let setting: Setting = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "2".into())
        .parse()
        .expect("setting");
    let data = generate(&SimConfig::new(setting, 3), 0).expect("simulated data");
    let model = decompose(&data.sample).expect("fpca");
    let design = standardize(&model, model.select_rank(0.95).unwrap(), &data.covariates).unwrap();
    let scores = model.scores.columns(0, 4).into_owned();

    for method in [
        Method::Unweighted,
        Method::Parametric,
        Method::Nonparametric,
    ] {
        let w = match method {
            Method::Unweighted => DVector::from_element(design.n(), 1.0),
            m => {
                estimate_weights(&design, m, &BalanceOptions::default())
                    .expect("weights")
                    .weights
            }
        };
        let report = balance_report(&scores, &data.covariates, &w).unwrap();
        println!("{method}");
        for k in 0..4 {
            let corr: Vec<String> = report
                .correlations
                .row(k)
                .iter()
                .map(|c| format!("{c:.3}"))
                .collect();
            println!(
                "  FPC{}  F = {:>8}  |corr| = [{}]",
                k + 1,
                format!("{:.3}", report.f_statistics[k].value()),
                corr.join(", ")
            );
        }
    }
}
