//! Monte Carlo accuracy table for one simulation setting.
//!
//! cargo run --release --example monte_carlo_table -- [setting] [runs] [seed]

use fps_causal::cli::{accuracy_table, summary_table};
use fps_causal::pipeline::{simulate_run, SimulationPlan};
use fps_causal::simgen::{Setting, SimConfig};
use rayon::prelude::*;

fn main() {
    let mut args = std::env::args().skip(1);
    let setting: Setting = args
        .next()
        .unwrap_or_else(|| "1".into())
        .parse()
        .expect("setting");
    let runs: usize = args.next().map_or(20, |s| s.parse().expect("runs"));
    let seed: u64 = args.next().map_or(7, |s| s.parse().expect("seed"));

    let mut config = SimConfig::new(setting, seed);
    config.runs = runs;
    let plan = SimulationPlan::new(config);
    let results: Vec<_> = (0..runs)
        .into_par_iter()
        .map(|r| simulate_run(&plan, r).expect("simulation run"))
        .collect();
    let cells = accuracy_table(&plan, &results).expect("accuracy");
    print!("{}", summary_table(&plan, &cells));
}
