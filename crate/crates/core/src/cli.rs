//! Batch command-line front end.
//!
//! Every subcommand writes into `--out` and finishes with `manifest.txt`, a
//! `key = value` file listing the resolved options and every output. The
//! manifest is itself a valid `--config` file, so `--config manifest.txt`
//! reruns the command. Exit codes: 0 success, 1 usage, 2 data, 3 solver.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use nalgebra::DVector;
use rayon::prelude::*;

use crate::balance::{
    estimate_weights, BalanceOptions, HVectorForm, Method, ParamOptions, ProfileObjective,
};
use crate::error::{Error, Result};
use crate::fdata::{FunctionalSample, Grid};
use crate::fpca::{decompose, standardize, FpcaModel};
use crate::io::{self, TableWriter};
use crate::metrics::{balance_report, summarize_runs};
use crate::outcome::BootstrapOptions;
use crate::pipeline::{
    analyze, simulate_run, AnalysisOptions, BasisChoice, Estimator, SimulationPlan, SimulationRun,
};
use crate::simgen::{NoiseScale, Setting, SimConfig};

#[derive(Parser, Debug)]
#[command(
    name = "fps-causal",
    version,
    about = "Functional propensity score weighting for curve-valued treatments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Eigen-decompose curves; optionally write standardized designs.
    Fpca(FpcaArgs),
    /// Estimate balancing weights from a design file or from curves and data.
    Balance(BalanceArgs),
    /// Fit the weighted outcome model and write effect curves.
    Fit(FitArgs),
    /// Balance report for data, or balance and accuracy reports for a simulation.
    Diagnostics(DiagnosticsArgs),
    /// Monte Carlo replication with a summary table.
    Simulate(SimulateArgs),
    /// Check input files and report every schema violation.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// key = value file; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct Inputs {
    #[arg(long)]
    curves: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Keep grid columns FIRST..=LAST (1-based).
    #[arg(long, value_name = "FIRST:LAST")]
    trim: Option<String>,
}

#[derive(Args, Debug)]
struct Solver {
    /// Empirical-likelihood penalty; defaults to 0.1/n.
    #[arg(long)]
    rho: Option<f64>,
    /// Use n·θ·Γ0 in the moment vector instead of θ·Γ0.
    #[arg(long)]
    hvec_literal: bool,
    /// Profile θ by the dual value instead of the log-likelihood.
    #[arg(long)]
    dual_profile: bool,
    /// Fail instead of falling back when the moment equations have no root.
    #[arg(long)]
    require_root: bool,
}

impl Solver {
    fn options(&self) -> Result<BalanceOptions> {
        if let Some(r) = self.rho {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::Usage(format!("--rho must be positive, got {r}")));
            }
        }
        Ok(BalanceOptions {
            rho: self.rho,
            hvec: if self.hvec_literal {
                HVectorForm::Literal
            } else {
                HVectorForm::default()
            },
            profile: if self.dual_profile {
                ProfileObjective::DualValue
            } else {
                ProfileObjective::LogLikelihood
            },
            param: ParamOptions {
                require_root: self.require_root,
            },
        })
    }
}

#[derive(Args, Debug)]
struct FpcaArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    inputs: Inputs,
    /// Comma-separated PVE thresholds for the design files.
    #[arg(long, default_value = "0.95")]
    pve_l: String,
}

#[derive(Args, Debug)]
struct BalanceArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    inputs: Inputs,
    /// Standardized design CSV (`a1..aL,c1..cp`).
    #[arg(long, conflicts_with_all = ["curves", "data"])]
    design: Option<PathBuf>,
    #[arg(long, default_value = "nonparametric")]
    method: String,
    #[arg(long, default_value = "0.95")]
    pve_l: String,
    #[command(flatten)]
    solver: Solver,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    inputs: Inputs,
    /// Weights CSV (`id,weight`) used instead of estimating weights.
    #[arg(long, conflicts_with = "method")]
    weights: Option<PathBuf>,
    #[arg(long, default_value = "nonparametric")]
    method: String,
    #[arg(long, default_value = "0.95")]
    pve_l: String,
    /// Outcome-model PVE; the initial PVE when AVI selection is on.
    #[arg(long, default_value = "0.95")]
    pve_lstar: String,
    /// Select outcome components by cumulative AVI share.
    #[arg(long)]
    avi_share: Option<f64>,
    /// Bootstrap replicates for pointwise bands.
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long, default_value_t = 0.99)]
    level: f64,
    /// Reuse full-sample weights in every bootstrap replicate.
    #[arg(long)]
    frozen_weights: bool,
    #[command(flatten)]
    solver: Solver,
}

#[derive(Args, Debug)]
struct DiagnosticsArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    sim: SimArgs,
    /// Simulation setting(s) instead of data: `1`, `1,3` or `all`.
    #[arg(long, conflicts_with_all = ["curves", "data"])]
    setting: Option<String>,
    /// Leading components reported.
    #[arg(long, default_value_t = 6)]
    components: usize,
    #[arg(long, default_value = "unweighted,parametric,nonparametric")]
    method: String,
    #[arg(long, default_value = "0.95,0.99")]
    pve_l: String,
    #[arg(long, default_value = "0.95,0.99")]
    pve_lstar: String,
    #[command(flatten)]
    solver: Solver,
}

#[derive(Args, Debug)]
struct SimArgs {
    #[arg(long, default_value_t = 200)]
    runs: usize,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 128)]
    grid: usize,
    /// Read the noise terms N(0, v) with v as a standard deviation.
    #[arg(long)]
    sd_parameterization: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long, default_value = "1")]
    setting: String,
    #[arg(long, default_value_t = 6)]
    components: usize,
    #[arg(long, default_value = "unweighted,parametric,nonparametric")]
    method: String,
    #[arg(long, default_value = "0.95,0.99")]
    pve_l: String,
    #[arg(long, default_value = "0.95,0.99")]
    pve_lstar: String,
    #[command(flatten)]
    solver: Solver,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    curves: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
}

const SUBCOMMANDS: [&str; 6] = [
    "fpca",
    "balance",
    "fit",
    "diagnostics",
    "simulate",
    "validate",
];
const MANIFEST: &str = "manifest.txt";
const MANIFEST_ONLY_KEYS: [&str; 3] = ["command", "version", "output"];

/// Files written and cells that failed during one command.
#[derive(Default)]
struct Report {
    out: PathBuf,
    outputs: Vec<String>,
    failures: Vec<(String, Error)>,
}

impl Report {
    fn new(out: &Path) -> Result<Self> {
        fs::create_dir_all(out)?;
        Ok(Self {
            out: out.to_path_buf(),
            ..Default::default()
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    fn fail(&mut self, cell: &str, e: Error) {
        eprintln!("{cell}: {e}");
        self.failures.push((cell.to_string(), e));
    }

    fn exit_code(&self) -> i32 {
        self.failures
            .iter()
            .map(|(_, e)| e.exit_code())
            .max()
            .unwrap_or(0)
    }
}

/// Run the command line `args` (program name first) and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match merge_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let mut command = Cli::command();
    for name in SUBCOMMANDS {
        command = command.mut_subcommand(name, |s| s.args_override_self(true));
    }
    let matches = match command.try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 1;
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let resolved = resolved_options(name, sub);
    match dispatch(cli.command, &resolved) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Insert `--key value` pairs from `--config` right after the subcommand so later flags override them.
fn merge_config(mut args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy().into_owned();
        if a == "--config" {
            path = args.get(i + 1).map(PathBuf::from);
            break;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
            break;
        }
        i += 1;
    }
    let Some(path) = path else { return Ok(args) };
    let Some(sub_pos) = args
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()))
    else {
        return Ok(args);
    };
    let sub = args[sub_pos].to_string_lossy().into_owned();
    let text = fs::read_to_string(&path)?;
    let mut extra = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Usage(format!(
                "{}:{}: expected `key = value`",
                path.display(),
                lineno + 1
            ))
        })?;
        let key = key.trim().replace('_', "-");
        let (key, value) = (key.as_str(), value.trim());
        if key == "command" && value != sub {
            return Err(Error::Usage(format!(
                "{} was written by `{value}`, not `{sub}`",
                path.display()
            )));
        }
        if MANIFEST_ONLY_KEYS.contains(&key) || key == "config" {
            continue;
        }
        match value {
            "true" => extra.push(OsString::from(format!("--{key}"))),
            "false" => {}
            v => {
                extra.push(OsString::from(format!("--{key}")));
                extra.push(OsString::from(v));
            }
        }
    }
    args.splice(sub_pos + 1..sub_pos + 1, extra);
    Ok(args)
}

/// Every argument of the subcommand with its effective value, defaults included.
fn resolved_options(name: &str, sub: &ArgMatches) -> Vec<(String, String)> {
    let mut rows = vec![
        ("command".to_string(), name.to_string()),
        ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
    ];
    let mut ids: Vec<&str> = sub
        .ids()
        .map(|id| id.as_str())
        .filter(|id| *id != "config" && !id.starts_with(char::is_uppercase))
        .collect();
    ids.sort_unstable();
    for id in ids {
        if let Ok(Some(mut raw)) = sub.try_get_raw(id) {
            if let Some(v) = raw.next() {
                rows.push((id.replace('_', "-"), v.to_string_lossy().into_owned()));
            }
        }
    }
    rows
}

fn write_manifest(report: &Report, resolved: &[(String, String)]) -> Result<()> {
    let mut text = String::new();
    for (k, v) in resolved {
        if k != "out" {
            let _ = writeln!(text, "{k} = {v}");
        }
    }
    let _ = writeln!(text, "out = {}", report.out.display());
    for (cell, e) in &report.failures {
        let _ = writeln!(text, "# failed {cell}: {e}");
    }
    for o in &report.outputs {
        let _ = writeln!(text, "output = {o}");
    }
    fs::write(report.out.join(MANIFEST), text)?;
    Ok(())
}

fn dispatch(command: Command, resolved: &[(String, String)]) -> Result<i32> {
    let report = match command {
        Command::Validate(a) => return validate(&a),
        Command::Fpca(a) => fpca(&a)?,
        Command::Balance(a) => balance(&a)?,
        Command::Fit(a) => fit(&a)?,
        Command::Diagnostics(a) => diagnostics(&a)?,
        Command::Simulate(a) => simulate(&a)?,
    };
    write_manifest(&report, resolved)?;
    Ok(report.exit_code())
}

fn parse_list<T: std::str::FromStr>(flag: &str, s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse()
                .map_err(|_| Error::Usage(format!("--{flag}: cannot parse `{p}`")))
        })
        .collect()
}

fn parse_pve(flag: &str, s: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = parse_list(flag, s)?;
    if v.is_empty() {
        return Err(Error::Usage(format!("--{flag} needs at least one value")));
    }
    if let Some(p) = v.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(Error::Usage(format!(
            "--{flag}: thresholds must lie in (0, 1], got {p}"
        )));
    }
    Ok(v)
}

fn parse_methods(s: &str) -> Result<Vec<Method>> {
    let mut v = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::parse)
        .collect::<Result<Vec<Method>>>()?;
    v.dedup();
    if v.is_empty() {
        return Err(Error::Usage("--method needs at least one method".into()));
    }
    Ok(v)
}

fn parse_settings(s: &str) -> Result<Vec<Setting>> {
    if s.trim() == "all" {
        return Ok(Setting::ALL.to_vec());
    }
    let v: Vec<Setting> = s.split(',').map(str::parse).collect::<Result<_>>()?;
    Ok(v)
}

fn short(method: Method) -> &'static str {
    match method {
        Method::Unweighted => "unweighted",
        Method::Parametric => "para",
        Method::Nonparametric => "np",
    }
}

impl Inputs {
    fn curves(&self) -> Result<FunctionalSample> {
        let path = self
            .curves
            .as_ref()
            .ok_or_else(|| Error::Usage("--curves is required".into()))?;
        let sample = io::read_curves(path)?;
        match &self.trim {
            None => Ok(sample),
            Some(t) => {
                let (a, b) = t
                    .split_once(':')
                    .and_then(|(a, b)| {
                        Some((
                            a.trim().parse::<usize>().ok()?,
                            b.trim().parse::<usize>().ok()?,
                        ))
                    })
                    .filter(|(a, b)| *a >= 1 && a < b)
                    .ok_or_else(|| {
                        Error::Usage(format!(
                            "--trim expects FIRST:LAST with 1 <= FIRST < LAST, got `{t}`"
                        ))
                    })?;
                if b > sample.m() {
                    return Err(Error::Usage(format!(
                        "--trim {t} exceeds the {} grid columns",
                        sample.m()
                    )));
                }
                sample.restrict(a - 1..b)
            }
        }
    }

    fn both(&self) -> Result<(FunctionalSample, io::DataTable)> {
        let sample = self.curves()?;
        let path = self
            .data
            .as_ref()
            .ok_or_else(|| Error::Usage("--data is required".into()))?;
        let data = io::read_data(path)?;
        if data.n() != sample.n() {
            return Err(Error::Schema {
                file: path.display().to_string(),
                message: format!("{} data rows but {} curves", data.n(), sample.n()),
            });
        }
        Ok((sample, data))
    }
}

fn validate(a: &ValidateArgs) -> Result<i32> {
    let violations = io::validate_inputs(&a.curves, a.data.as_deref())?;
    for v in &violations {
        println!("{v}");
    }
    if violations.is_empty() {
        println!("ok");
        Ok(0)
    } else {
        Ok(2)
    }
}

fn fpca(a: &FpcaArgs) -> Result<Report> {
    let pve_l = parse_pve("pve-l", &a.pve_l)?;
    let sample = a.inputs.curves()?;
    let data = match &a.inputs.data {
        Some(_) => Some(a.inputs.both()?.1),
        None => None,
    };
    let model = decompose(&sample)?;
    let mut report = Report::new(&a.common.out)?;
    write_model(&mut report, &model)?;
    if let Some(data) = data {
        for p in pve_l {
            let l = model.select_rank(p)?;
            let design = standardize(&model, l, &data.covariates)?;
            io::write_design(report.path(&format!("design_pvel{p}.csv")), &design)?;
        }
    }
    Ok(report)
}

fn write_model(report: &mut Report, model: &FpcaModel) -> Result<()> {
    let mut w = TableWriter::create(
        report.path("eigenvalues.csv"),
        &["component", "eigenvalue", "pve"],
    )?;
    for k in 0..model.n_components() {
        w.row([
            (k + 1).to_string(),
            io::num(model.eigenvalues[k]),
            io::num(model.pve[k]),
        ])?;
    }
    w.finish()?;

    let k = model.n_components();
    let mut header = vec!["t".to_string()];
    header.extend((1..=k).map(|j| format!("phi{j}")));
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = TableWriter::create(report.path("eigenfunctions.csv"), &refs)?;
    for (j, t) in model.grid.points().iter().enumerate() {
        let mut row = vec![io::num(t)];
        row.extend(model.eigenfunctions.column(j).iter().map(io::num));
        w.row(row)?;
    }
    w.finish()?;

    let mut header = vec!["id".to_string()];
    header.extend((1..=k).map(|j| format!("a{j}")));
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = TableWriter::create(report.path("scores.csv"), &refs)?;
    for i in 0..model.scores.nrows() {
        let mut row = vec![(i + 1).to_string()];
        row.extend(model.scores.row(i).iter().map(io::num));
        w.row(row)?;
    }
    w.finish()
}

fn balance(a: &BalanceArgs) -> Result<Report> {
    let methods = parse_methods(&a.method)?;
    let options = a.solver.options()?;
    let cells: Vec<(String, crate::fpca::StandardizedDesign)> = match &a.design {
        Some(path) => vec![(String::new(), io::read_design(path)?)],
        None => {
            let pve_l = parse_pve("pve-l", &a.pve_l)?;
            let (sample, data) = a.inputs.both()?;
            let model = decompose(&sample)?;
            pve_l
                .iter()
                .map(|&p| {
                    Ok((
                        format!("_pvel{p}"),
                        standardize(&model, model.select_rank(p)?, &data.covariates)?,
                    ))
                })
                .collect::<Result<_>>()?
        }
    };
    let mut report = Report::new(&a.common.out)?;
    for (suffix, design) in &cells {
        for &m in &methods {
            let cell = format!("{}{suffix}", short(m));
            match estimate_weights(design, m, &options) {
                Ok(w) => {
                    io::write_weights(report.path(&format!("weights_{cell}.csv")), &w.weights)?;
                    let rows: Vec<(String, String)> = w
                        .diagnostic_rows()
                        .into_iter()
                        .map(|(k, v)| (k, io::num(v)))
                        .collect();
                    io::write_key_values(report.path(&format!("diagnostics_{cell}.csv")), &rows)?;
                }
                Err(e) => report.fail(&cell, e),
            }
        }
    }
    Ok(report)
}

fn write_effect(
    path: PathBuf,
    grid: &Grid,
    curve: &DVector<f64>,
    band: Option<(&DVector<f64>, &DVector<f64>)>,
) -> Result<()> {
    let mut w = TableWriter::create(path, &["t", "estimate", "lower", "upper"])?;
    for (j, t) in grid.points().iter().enumerate() {
        let (lo, hi) = band.map_or((String::new(), String::new()), |(l, u)| {
            (io::num(l[j]), io::num(u[j]))
        });
        w.row([io::num(t), io::num(curve[j]), lo, hi])?;
    }
    w.finish()
}

/// Coefficient table: one row per term, one estimate/se/p block per cell.
#[derive(Default)]
struct CoefficientColumns {
    terms: Vec<String>,
    cells: Vec<(String, BTreeMap<String, [String; 3]>)>,
}

impl CoefficientColumns {
    fn add(&mut self, cell: String, rows: Vec<(String, [String; 3])>) {
        let mut map = BTreeMap::new();
        for (term, vals) in rows {
            if !self.terms.contains(&term) {
                self.terms.push(term.clone());
            }
            map.insert(term, vals);
        }
        self.cells.push((cell, map));
    }

    fn write(&self, path: PathBuf) -> Result<()> {
        let mut header = vec!["term".to_string()];
        for (cell, _) in &self.cells {
            header.extend(
                ["estimate", "se", "p_value"]
                    .iter()
                    .map(|s| format!("{cell}_{s}")),
            );
        }
        let refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut w = TableWriter::create(path, &refs)?;
        let mut terms = self.terms.clone();
        if let Some(pos) = terms.iter().position(|t| t == "F") {
            let f = terms.remove(pos);
            terms.push(f);
        }
        for term in &terms {
            let mut row = vec![term.clone()];
            for (_, map) in &self.cells {
                row.extend(map.get(term).cloned().unwrap_or_default());
            }
            w.row(row)?;
        }
        w.finish()
    }
}

fn fit(a: &FitArgs) -> Result<Report> {
    let options = a.solver.options()?;
    let pve_l = parse_pve("pve-l", &a.pve_l)?;
    let pve_lstar = parse_pve("pve-lstar", &a.pve_lstar)?;
    if let Some(s) = a.avi_share {
        if !(s > 0.0 && s <= 1.0) {
            return Err(Error::Usage(format!(
                "--avi-share must lie in (0, 1], got {s}"
            )));
        }
    }
    let bootstrap = a.bootstrap.map(|replicates| BootstrapOptions {
        replicates,
        level: a.level,
        seed: a.common.seed,
        ..Default::default()
    });
    let supplied = a.weights.as_ref().map(io::read_weights).transpose()?;
    let methods = if supplied.is_some() {
        vec![Method::Unweighted]
    } else {
        parse_methods(&a.method)?
    };
    let (sample, data) = a.inputs.both()?;

    let mut cells = Vec::new();
    for &m in &methods {
        let ls: Vec<Option<f64>> = if m == Method::Unweighted {
            vec![None]
        } else {
            pve_l.iter().copied().map(Some).collect()
        };
        for l in ls {
            for &lstar in &pve_lstar {
                let mut label = match (&supplied, l) {
                    (Some(_), _) => "supplied".to_string(),
                    (None, None) => short(m).to_string(),
                    (None, Some(p)) => format!("{}_pvel{p}", short(m)),
                };
                let _ = write!(label, "_pvelstar{lstar}");
                if a.avi_share.is_some() {
                    label.push_str("_avi");
                }
                cells.push((label, m, l.unwrap_or(pve_l[0]), lstar));
            }
        }
    }

    let mut report = Report::new(&a.common.out)?;
    let mut table = CoefficientColumns::default();
    let mut weights_written = Vec::new();
    for (label, method, l, lstar) in cells {
        let opts = AnalysisOptions {
            method,
            pve_l: l,
            basis: match a.avi_share {
                Some(share) => BasisChoice::Avi {
                    initial_pve: lstar,
                    share,
                },
                None => BasisChoice::Pve(lstar),
            },
            weights: options,
            bootstrap: bootstrap.clone(),
            frozen_weights: a.frozen_weights,
            supplied_weights: supplied.clone(),
        };
        let result = match analyze(
            &sample,
            &data.covariates,
            &data.outcome,
            data.group.as_deref(),
            &opts,
        ) {
            Ok(r) => r,
            Err(e) => {
                report.fail(&label, e);
                continue;
            }
        };
        let weight_key = (
            method,
            if method == Method::Unweighted {
                None
            } else {
                Some(l.to_bits())
            },
        );
        if supplied.is_none() && !weights_written.contains(&weight_key) {
            weights_written.push(weight_key);
            let name = match weight_key.1 {
                None => format!("weights_{}.csv", short(method)),
                Some(_) => format!("weights_{}_pvel{l}.csv", short(method)),
            };
            io::write_weights(report.path(&name), &result.weights.weights)?;
        }
        for (idx, (name, effect)) in result.effects.iter().enumerate() {
            let band = result
                .bands
                .as_ref()
                .map(|b| (&b.lower[idx], &b.upper[idx]));
            write_effect(
                report.path(&format!("effect_{label}_{name}.csv")),
                &effect.grid,
                &effect.curve,
                band,
            )?;
        }
        let rows = match &result.table {
            Some(t) => {
                let mut rows: Vec<(String, [String; 3])> = t
                    .rows
                    .iter()
                    .map(|r| {
                        (
                            r.term.clone(),
                            [io::num(r.estimate), io::num(r.se), io::num(r.p_value)],
                        )
                    })
                    .collect();
                rows.push((
                    "F".into(),
                    [
                        t.f_statistic.to_string(),
                        String::new(),
                        io::num(t.f_p_value),
                    ],
                ));
                rows
            }
            None => {
                let e = &result.effects[0].1;
                let mut rows = vec![(
                    "intercept".to_string(),
                    [io::num(e.intercept), String::new(), String::new()],
                )];
                rows.extend(e.basis_ids.iter().zip(e.basis_coeffs.iter()).map(|(k, c)| {
                    (
                        format!("fpc{}", k + 1),
                        [c.to_string(), String::new(), String::new()],
                    )
                }));
                rows
            }
        };
        table.add(label, rows);
    }
    if !table.cells.is_empty() {
        table.write(report.path("coefficients.csv"))?;
    }
    Ok(report)
}

fn diagnostics(a: &DiagnosticsArgs) -> Result<Report> {
    let methods = parse_methods(&a.method)?;
    let pve_l = parse_pve("pve-l", &a.pve_l)?;
    let options = a.solver.options()?;
    if let Some(settings) = &a.setting {
        let plan = SimPlanArgs {
            settings: parse_settings(settings)?,
            sim: &a.sim,
            seed: a.common.seed,
            methods,
            pve_l,
            pve_lstar: parse_pve("pve-lstar", &a.pve_lstar)?,
            components: a.components,
            options,
        };
        let mut report = Report::new(&a.common.out)?;
        run_simulation(&plan, &mut report, false)?;
        return Ok(report);
    }
    let (sample, data) = a.inputs.both()?;
    let model = decompose(&sample)?;
    let k = a.components.min(model.n_components());
    if k == 0 {
        return Err(Error::Usage("--components must be at least 1".into()));
    }
    let scores = model.scores.columns(0, k).into_owned();
    let mut report = Report::new(&a.common.out)?;
    let mut header = vec![
        "method".to_string(),
        "pve_l".into(),
        "fpc".into(),
        "f_statistic".into(),
    ];
    header.extend(data.covariate_names.iter().map(|c| format!("corr_{c}")));
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = TableWriter::create(report.path("balance.csv"), &refs)?;
    for est in crate::pipeline::estimator_grid(&methods, &pve_l) {
        let cell = est.label();
        let weights = match est.pve_l {
            None => Ok(DVector::from_element(sample.n(), 1.0)),
            Some(p) => model
                .select_rank(p)
                .and_then(|l| standardize(&model, l, &data.covariates))
                .and_then(|d| estimate_weights(&d, est.method, &options))
                .map(|w| w.weights),
        };
        let rep = weights.and_then(|wt| balance_report(&scores, &data.covariates, &wt));
        match rep {
            Ok(rep) => {
                for f in 0..k {
                    let mut row = vec![
                        est.method.to_string(),
                        est.pve_l.map(|p| p.to_string()).unwrap_or_default(),
                        (f + 1).to_string(),
                        rep.f_statistics[f].to_string(),
                    ];
                    row.extend(rep.correlations.row(f).iter().map(io::num));
                    w.row(row)?;
                }
            }
            Err(e) => report.fail(&cell, e),
        }
    }
    w.finish()?;
    Ok(report)
}

struct SimPlanArgs<'a> {
    settings: Vec<Setting>,
    sim: &'a SimArgs,
    seed: u64,
    methods: Vec<Method>,
    pve_l: Vec<f64>,
    pve_lstar: Vec<f64>,
    components: usize,
    options: BalanceOptions,
}

impl SimPlanArgs<'_> {
    fn plan(&self, setting: Setting) -> Result<SimulationPlan> {
        let mut config = SimConfig::new(setting, self.seed);
        config.n = self.sim.n;
        config.grid_size = self.sim.grid;
        config.runs = self.sim.runs;
        config.noise_scale = if self.sim.sd_parameterization {
            NoiseScale::StandardDeviation
        } else {
            NoiseScale::Variance
        };
        let mut plan = SimulationPlan::new(config);
        plan.methods = self.methods.clone();
        plan.pve_l = self.pve_l.clone();
        plan.pve_lstar = self.pve_lstar.clone();
        plan.balance_components = self.components;
        plan.weights = self.options;
        plan.validate().map_err(|e| Error::Usage(e.to_string()))?;
        if plan.config.runs < 2 {
            return Err(Error::Usage("--runs must be at least 2".into()));
        }
        Ok(plan)
    }
}

fn simulate(a: &SimulateArgs) -> Result<Report> {
    let plan = SimPlanArgs {
        settings: parse_settings(&a.setting)?,
        sim: &a.sim,
        seed: a.common.seed,
        methods: parse_methods(&a.method)?,
        pve_l: parse_pve("pve-l", &a.pve_l)?,
        pve_lstar: parse_pve("pve-lstar", &a.pve_lstar)?,
        components: a.components,
        options: a.solver.options()?,
    };
    let mut report = Report::new(&a.common.out)?;
    run_simulation(&plan, &mut report, true)?;
    Ok(report)
}

/// Accuracy of one estimator at one `PVE_L*` over the successful runs.
pub struct CellAccuracy {
    pub estimator: Estimator,
    pub pve_lstar: f64,
    pub runs: usize,
    pub failed: usize,
    pub mise: f64,
    pub aise: f64,
    pub isb: f64,
    pub mean_curve: DVector<f64>,
}

/// Per-cell accuracy over the runs of one plan.
pub fn accuracy_table(plan: &SimulationPlan, runs: &[SimulationRun]) -> Result<Vec<CellAccuracy>> {
    let grid = Grid::uniform(plan.config.grid_size)?;
    let Some(first) = runs.first() else {
        return Err(Error::InsufficientData(
            "no simulation run succeeded".into(),
        ));
    };
    let truth = &first.truth;
    let mut out = Vec::new();
    for (e_idx, estimator) in plan.estimators().into_iter().enumerate() {
        for (s_idx, &pve_lstar) in plan.pve_lstar.iter().enumerate() {
            let curves: Vec<DVector<f64>> = runs
                .iter()
                .filter_map(|r| {
                    r.estimators[e_idx]
                        .curves
                        .as_ref()
                        .ok()
                        .map(|c| c[s_idx].clone())
                })
                .collect();
            let failed = plan.config.runs - curves.len();
            let (mise, aise, isb, mean_curve) = match summarize_runs(&curves, truth, &grid) {
                Ok(r) => {
                    let mut mean = DVector::zeros(truth.len());
                    for c in &curves {
                        mean += c;
                    }
                    mean /= curves.len() as f64;
                    (r.mise, r.aise, r.isb, mean)
                }
                Err(_) => (
                    f64::NAN,
                    f64::NAN,
                    f64::NAN,
                    DVector::from_element(truth.len(), f64::NAN),
                ),
            };
            out.push(CellAccuracy {
                estimator,
                pve_lstar,
                runs: curves.len(),
                failed,
                mise,
                aise,
                isb,
                mean_curve,
            });
        }
    }
    Ok(out)
}

fn run_simulation(args: &SimPlanArgs, report: &mut Report, summary: bool) -> Result<()> {
    let plans: Vec<SimulationPlan> = args
        .settings
        .iter()
        .map(|s| args.plan(*s))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = plans
        .iter()
        .enumerate()
        .flat_map(|(p, plan)| (0..plan.config.runs).map(move |r| (p, r)))
        .collect();
    let results: Vec<Result<SimulationRun>> = jobs
        .par_iter()
        .map(|&(p, r)| simulate_run(&plans[p], r))
        .collect();

    let mut by_plan: Vec<Vec<SimulationRun>> = plans.iter().map(|_| Vec::new()).collect();
    let mut fail_rows = Vec::new();
    for ((p, r), res) in jobs.iter().zip(results) {
        match res {
            Ok(run) => {
                for e in &run.estimators {
                    if let Err(msg) = &e.curves {
                        fail_rows.push([
                            plans[*p].config.setting.to_string(),
                            r.to_string(),
                            e.estimator.label(),
                            msg.clone(),
                        ]);
                    }
                }
                by_plan[*p].push(run);
            }
            Err(e) => fail_rows.push([
                plans[*p].config.setting.to_string(),
                r.to_string(),
                "all".into(),
                e.to_string(),
            ]),
        }
    }

    let mut acc = TableWriter::create(
        report.path("accuracy.csv"),
        &[
            "setting",
            "method",
            "pve_l",
            "pve_lstar",
            "runs",
            "failed",
            "mise",
            "aise",
            "isb",
        ],
    )?;
    let mut bal = TableWriter::create(
        report.path("balance.csv"),
        &["setting", "run", "method", "pve_l", "fpc", "f_statistic"],
    )?;
    let mut text = String::new();
    for (plan, runs) in plans.iter().zip(&by_plan) {
        let setting = plan.config.setting.to_string();
        for run in runs {
            let mut put =
                |method: &str, pve: String, fs: &[crate::metrics::FStatistic]| -> Result<()> {
                    for (k, f) in fs.iter().enumerate() {
                        bal.row([
                            setting.clone(),
                            run.run_index.to_string(),
                            method.to_string(),
                            pve.clone(),
                            (k + 1).to_string(),
                            f.to_string(),
                        ])?;
                    }
                    Ok(())
                };
            put("unweighted", String::new(), &run.f_unweighted)?;
            for e in run
                .estimators
                .iter()
                .filter(|e| e.estimator.pve_l.is_some())
            {
                put(
                    e.estimator.method.as_str(),
                    e.estimator.pve_l.map(|p| p.to_string()).unwrap_or_default(),
                    &e.f_weighted,
                )?;
            }
        }
        let cells = match accuracy_table(plan, runs) {
            Ok(c) => c,
            Err(e) => {
                report.fail(&format!("setting {setting}"), e);
                continue;
            }
        };
        for c in &cells {
            acc.row([
                setting.clone(),
                c.estimator.method.to_string(),
                c.estimator.pve_l.map(|p| p.to_string()).unwrap_or_default(),
                c.pve_lstar.to_string(),
                c.runs.to_string(),
                c.failed.to_string(),
                io::num(c.mise),
                io::num(c.aise),
                io::num(c.isb),
            ])?;
        }
        write_mean_curves(report, plan, &runs[0].truth, &cells)?;
        if summary {
            text.push_str(&summary_table(plan, &cells));
            text.push('\n');
        }
    }
    acc.finish()?;
    bal.finish()?;

    let mut f = TableWriter::create(
        report.path("failures.csv"),
        &["setting", "run", "estimator", "message"],
    )?;
    for row in &fail_rows {
        f.row(row)?;
    }
    f.finish()?;
    if summary {
        let path = report.path("summary.txt");
        fs::write(path, text)?;
    }
    Ok(())
}

fn write_mean_curves(
    report: &mut Report,
    plan: &SimulationPlan,
    truth: &DVector<f64>,
    cells: &[CellAccuracy],
) -> Result<()> {
    let grid = Grid::uniform(plan.config.grid_size)?;
    let mut header = vec!["t".to_string(), "truth".to_string()];
    header.extend(cells.iter().map(|c| match c.estimator.pve_l {
        None => format!("{}_pvelstar{}", short(c.estimator.method), c.pve_lstar),
        Some(p) => format!(
            "{}_pvel{p}_pvelstar{}",
            short(c.estimator.method),
            c.pve_lstar
        ),
    }));
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let name = format!("mean_effect_setting{}.csv", plan.config.setting);
    let mut w = TableWriter::create(report.path(&name), &refs)?;
    for (j, t) in grid.points().iter().enumerate() {
        let mut row = vec![io::num(t), io::num(truth[j])];
        row.extend(cells.iter().map(|c| io::num(c.mean_curve[j])));
        w.row(row)?;
    }
    w.finish()
}

/// Text table with one row per estimator and a MISE/AISE/ISB block per `PVE_L*`.
pub fn summary_table(plan: &SimulationPlan, cells: &[CellAccuracy]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "Setting {} ({} runs, n = {})",
        plan.config.setting, plan.config.runs, plan.config.n
    );
    let _ = write!(s, "{:<24}", "");
    for p in &plan.pve_lstar {
        let _ = write!(s, "  {:<28}", format!("PVE_L* = {p}"));
    }
    s.push('\n');
    let _ = write!(s, "{:<24}", "");
    for _ in &plan.pve_lstar {
        let _ = write!(s, "  {:>8} {:>8} {:>8} ", "MISE", "AISE", "ISB");
    }
    s.push('\n');
    let mut last_l: Option<Option<f64>> = None;
    for est in plan.estimators() {
        let name = match est.method {
            Method::Unweighted => "Unweighted",
            Method::Parametric => "Para",
            Method::Nonparametric => "Np",
        };
        let lead = match est.pve_l {
            None => String::new(),
            Some(p) if last_l != Some(Some(p)) => format!("PVE_L = {p}"),
            Some(_) => String::new(),
        };
        last_l = Some(est.pve_l);
        let _ = write!(s, "{:<14}{:<10}", lead, name);
        let mut notes = Vec::new();
        for p in &plan.pve_lstar {
            let c = cells
                .iter()
                .find(|c| c.estimator == est && c.pve_lstar == *p)
                .expect("a cell per estimator and PVE_L*");
            let _ = write!(s, "  {:>8.4} {:>8.4} {:>8.4} ", c.mise, c.aise, c.isb);
            if c.failed > 0 {
                notes.push(format!("PVE_L* = {p}: based on {} runs", c.runs));
            }
        }
        if !notes.is_empty() {
            let _ = write!(s, "  ({})", notes.join("; "));
        }
        s.push('\n');
    }
    s
}

/// Entry point of the `fps-causal` binary.
pub fn main() -> ! {
    std::process::exit(run(std::env::args_os()))
}
