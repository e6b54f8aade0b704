//! Eigen-decomposition of simulated curves and PVE rank selection.
//!
//! cargo run --release --example fpca_recovery -- [n]

use fps_causal::fpca::{decompose, select_rank};
use fps_causal::simgen::{generate, Setting, SimConfig, POPULATION_EIGENVALUES};

fn main() {
    let n: usize = std::env::args()
        .nth(1)
        .map_or(2000, |s| s.parse().expect("n"));
    let mut config = SimConfig::new(Setting::One, 1);
    config.n = n;
    let data = generate(&config, 0).expect("simulated data");
    let model = decompose(&data.sample).expect("fpca");

    println!("component  estimate  population  relative error");
    for (k, truth) in POPULATION_EIGENVALUES.iter().enumerate() {
        let est = model.eigenvalues[k];
        println!(
            "{:>9}  {est:>8.3}  {truth:>10.1}  {:>14.3}",
            k + 1,
            (est - truth).abs() / truth
        );
    }
    for p in [0.95, 0.99] {
        println!(
            "PVE {p}: sample L = {}, population L = {}",
            model.select_rank(p).unwrap(),
            select_rank(&POPULATION_EIGENVALUES, p).unwrap()
        );
    }
}
