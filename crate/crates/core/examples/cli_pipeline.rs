//! The command-line pipeline driven in-process: validate, fpca, balance,
//! fit and diagnostics on one simulated dataset written to CSV.
//!
//! cargo run --release --example cli_pipeline -- [out_dir]

use std::path::PathBuf;

use fps_causal::cli::run;
use fps_causal::io::{write_curves, write_data, DataTable};
use fps_causal::simgen::{generate, Setting, SimConfig};

fn main() {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "target/cli_pipeline".into()),
    );
    std::fs::create_dir_all(&out).unwrap();
    let data = generate(&SimConfig::new(Setting::One, 5), 0).unwrap();
    let curves = out.join("curves.csv");
    let table = out.join("data.csv");
    write_curves(&curves, data.sample.grid(), data.sample.values()).unwrap();
    write_data(
        &table,
        &DataTable {
            covariate_names: vec!["c1".into(), "c2".into(), "c3".into()],
            covariates: data.covariates,
            outcome: data.outcome,
            group: None,
        },
    )
    .unwrap();
    let (c, d) = (curves.to_str().unwrap(), table.to_str().unwrap());

    let steps: [(&str, Vec<&str>); 5] = [
        ("validate", vec!["--curves", c, "--data", d]),
        ("fpca", vec!["--curves", c, "--data", d]),
        (
            "balance",
            vec![
                "--curves",
                c,
                "--data",
                d,
                "--method",
                "parametric,nonparametric",
            ],
        ),
        (
            "fit",
            vec![
                "--curves",
                c,
                "--data",
                d,
                "--method",
                "unweighted,nonparametric",
            ],
        ),
        (
            "diagnostics",
            vec!["--curves", c, "--data", d, "--components", "4"],
        ),
    ];
    for (cmd, extra) in steps {
        let dir = out.join(cmd);
        let mut argv = vec!["fps-causal", cmd, "--out", dir.to_str().unwrap()];
        argv.extend(extra);
        let code = run(argv);
        println!("{cmd:<12} exit {code}");
    }
    println!(
        "{}",
        std::fs::read_to_string(out.join("diagnostics/balance.csv")).unwrap()
    );
}
