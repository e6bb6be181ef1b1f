//! Command-line front end.
//!
//! `run` simulates one case and writes `trajectory.csv`, `events.csv`,
//! `metrics.json` and the effective `scenario.toml` into the output
//! directory. `oracle` prints the centralized solution, `compare` runs
//! several cases in parallel and tabulates event counts and CE, and
//! `validate` runs the property suite.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{run_algorithm1, DynamicsError, Layer, Layout, MetricsBundle, SimulationRun};
use crate::etm::{replay_threshold_ordering, EtmKind, TriggerSample};
use crate::oracle::{self, KktReport, OracleError, OracleReport};
use crate::projection::Interval;
use crate::scenario::{Scenario, ScenarioError, CASES};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("usage: {0}")]
    Usage(String),
}

impl CliError {
    /// 2 for usage errors, 3 for runtime invariant violations, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Dynamics(DynamicsError::InvariantViolation { .. } | DynamicsError::NonFiniteState { .. }) => 3,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Parser)]
#[command(name = "etpt", version, about = "Event-triggered prescribed-time multiobjective dispatch")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one case and write trajectories, events and metrics.
    Run(RunArgs),
    /// Print the centralized reference solution as JSON.
    Oracle(OracleArgs),
    /// Simulate several cases in parallel and tabulate counts and CE.
    Compare(CompareArgs),
    /// Run the property suite and report pass/fail per property.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Integrator step in seconds.
    #[arg(long)]
    pub step: Option<f64>,
    /// Event-count window in seconds.
    #[arg(long)]
    pub window: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// One of case1..case6; the scenario's own settings when absent.
    #[arg(long)]
    pub case: Option<String>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Also write `oracle.json` into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Cases to compare (repeatable or comma separated); `all` expands to case1..case6.
    #[arg(long = "case", value_delimiter = ',')]
    pub cases: Vec<String>,
    /// Also write `comparison.csv` and `comparison.txt` into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long)]
    pub case: Option<String>,
}

/// Loads a scenario, applies the case and the flag overrides, validates.
pub fn load_scenario(args: &ScenarioArgs, case: Option<&str>) -> Result<Scenario, CliError> {
    let mut s = Scenario::load(&args.scenario)?;
    configure(&mut s, case, args.step, args.window)?;
    s.validate()?;
    Ok(s)
}

fn configure(s: &mut Scenario, case: Option<&str>, step: Option<f64>, window: Option<f64>) -> Result<(), CliError> {
    if let Some(c) = case {
        s.apply_case(c)?;
    }
    if let Some(h) = step {
        s.integrator.step = h;
    }
    if let Some(w) = window {
        s.integrator.window = w;
    }
    Ok(())
}

/// Runs every layer of a validated scenario to its horizon.
pub fn simulate(s: &Scenario, record_trajectory: bool) -> Result<SimulationRun, CliError> {
    let mut config = s.sim_config();
    config.record_trajectory = record_trajectory;
    Ok(run_algorithm1(&s.label, s.problem(), s.network()?, config)?)
}

/// Simulates `s` and writes every artifact into `dir`.
pub fn run_case(s: &Scenario, dir: &Path) -> Result<MetricsBundle, CliError> {
    let run = simulate(s, true)?;
    write_artifacts(s, &run, dir)?;
    Ok(run.metrics)
}

pub fn write_artifacts(s: &Scenario, run: &SimulationRun, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("trajectory.csv");
    write_trajectory(run, fs::File::create(&path).map_err(io_err(&path))?)?;
    let path = dir.join("events.csv");
    write_events(run, fs::File::create(&path).map_err(io_err(&path))?)?;
    let path = dir.join("metrics.json");
    fs::write(&path, serde_json::to_string_pretty(&run.metrics)?).map_err(io_err(&path))?;
    let path = dir.join("scenario.toml");
    fs::write(&path, s.to_toml()).map_err(io_err(&path))?;
    Ok(())
}

/// One row per recorded variable: `t,layer,agent,objective,var,value`.
pub fn write_trajectory<W: Write>(run: &SimulationRun, out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "layer", "agent", "objective", "var", "value"])?;
    let Layout { n, k } = run.layout;
    let l = run.layout;
    for sample in &run.samples {
        let x = &sample.state;
        let t = sample.t;
        for kk in 0..k {
            for i in 0..n {
                let sub = Layer::Subproblem.as_str();
                for (var, value) in [
                    ("xbar", x[l.xbar(kk, i)]),
                    ("y", x[l.y(kk, i)]),
                    ("z", x[l.z(kk, i)]),
                    ("eta", x[l.eta_sub(kk, i)]),
                    ("omega", sample.weights[i * k + kk]),
                ] {
                    w.serialize((t, sub, i, Some(kk), var, value))?;
                }
                w.serialize((t, Layer::Ideal.as_str(), i, Some(kk), "xhat", x[l.xhat(kk, i)]))?;
            }
        }
        for i in 0..n {
            for (var, value) in [("x", x[l.x(i)]), ("nu", x[l.nu(i)]), ("mu", x[l.mu(i)]), ("eta", x[l.eta_comp(i)])] {
                w.serialize((t, Layer::Compromise.as_str(), i, None::<usize>, var, value))?;
            }
        }
    }
    w.flush().map_err(|e| CliError::Csv(e.into()))?;
    Ok(())
}

/// `t,layer,agent,objective,broadcast_value`, unstrided.
pub fn write_events<W: Write>(run: &SimulationRun, out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "layer", "agent", "objective", "broadcast_value"])?;
    for e in &run.events {
        w.serialize((e.t, e.layer.as_str(), e.agent, e.objective, e.broadcast_value))?;
    }
    w.flush().map_err(|e| CliError::Csv(e.into()))?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct OracleDocument<'a> {
    pub label: &'a str,
    pub total_demand: f64,
    pub report: &'a OracleReport,
    pub compromise_kkt: KktReport,
}

pub fn oracle_json(s: &Scenario) -> Result<String, CliError> {
    let problem = s.problem();
    let report = oracle::solve_problem(&problem)?;
    let prefs = report.preferences(&problem);
    let kkt = report.compromise.verify_kkt(&prefs, &problem.bounds(), problem.total_demand());
    let doc = OracleDocument { label: &s.label, total_demand: problem.total_demand(), report: &report, compromise_kkt: kkt };
    Ok(serde_json::to_string_pretty(&doc)?)
}

/// One line of the case comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseRow {
    pub label: String,
    pub tbg: String,
    pub etm: String,
    pub per_agent: Vec<u64>,
    pub total: u64,
    pub ce: Option<f64>,
    pub min_inter_event: f64,
    pub distance_to_oracle: Option<f64>,
}

/// Expands `all` and rejects unknown labels.
pub fn expand_cases(cases: &[String]) -> Result<Vec<String>, CliError> {
    let mut out = Vec::new();
    for c in cases {
        if c == "all" {
            out.extend(CASES.iter().map(|s| s.to_string()));
        } else if CASES.contains(&c.as_str()) {
            out.push(c.clone());
        } else {
            return Err(CliError::Usage(format!("unknown case `{c}` (expected case1..case6 or all)")));
        }
    }
    Ok(out)
}

/// Runs each case of `base` in parallel; at least two cases are required.
pub fn compare_cases(base: &Scenario, cases: &[String]) -> Result<Vec<CaseRow>, CliError> {
    if cases.len() < 2 {
        return Err(CliError::Usage(format!("compare needs at least two cases, got {}", cases.len())));
    }
    cases
        .par_iter()
        .map(|c| {
            let mut s = base.clone();
            s.apply_case(c)?;
            s.validate()?;
            let m = simulate(&s, false)?.metrics;
            Ok(CaseRow {
                label: c.clone(),
                tbg: format!("{:?}", s.tbg.compromise.kind),
                etm: format!("{:?}", s.etm.kind),
                per_agent: m.per_agent_total,
                total: m.total,
                ce: m.convergence_error,
                min_inter_event: m.min_inter_event,
                distance_to_oracle: m.distance_to_oracle,
            })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

/// Aligned text table.
pub fn format_table(rows: &[CaseRow]) -> String {
    let n = rows.first().map_or(0, |r| r.per_agent.len());
    let mut header: Vec<String> = vec!["case".into(), "tbg".into(), "etm".into()];
    header.extend((1..=n).map(|i| format!("agent{i}")));
    header.extend(["total".into(), "ce".into(), "min_gap".into()]);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut v = vec![r.label.clone(), r.tbg.clone(), r.etm.clone()];
            v.extend(r.per_agent.iter().map(|c| c.to_string()));
            v.extend([r.total.to_string(), opt(r.ce), format!("{:.2e}", r.min_inter_event)]);
            v
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| body.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(j, (c, w))| if j == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") }).collect::<Vec<_>>().join("  ").trim_end().to_string()
    };
    let mut out = line(&header);
    out.push('\n');
    for r in &body {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

pub fn table_csv(rows: &[CaseRow]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let n = rows.first().map_or(0, |r| r.per_agent.len());
    let mut header: Vec<String> = vec!["case".into(), "tbg".into(), "etm".into()];
    header.extend((1..=n).map(|i| format!("agent{i}")));
    header.extend(["total".into(), "ce".into(), "min_inter_event".into(), "distance_to_oracle".into()]);
    w.write_record(&header)?;
    for r in rows {
        let mut v = vec![r.label.clone(), r.tbg.clone(), r.etm.clone()];
        v.extend(r.per_agent.iter().map(|c| c.to_string()));
        v.push(r.total.to_string());
        v.push(r.ce.map_or(String::new(), |x| x.to_string()));
        v.push(r.min_inter_event.to_string());
        v.push(r.distance_to_oracle.map_or(String::new(), |x| x.to_string()));
        w.write_record(&v)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check { name: name.to_string(), passed, detail });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-5;
pub const STEP_DOUBLING_TOL: f64 = 1e-4;

/// Worst relative mismatch between an analytic derivative and a central
/// difference over `samples` points of `set`.
pub fn gradient_mismatch(
    value: impl Fn(f64) -> f64,
    gradient: impl Fn(f64) -> f64,
    set: &Interval,
    samples: usize,
    rng: &mut impl Rng,
) -> f64 {
    // keep x ± h inside the interval
    let margin = (1e3 * FD_STEP).min(0.25 * set.width());
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let x = rng.gen_range(set.lower + margin..=set.upper - margin);
        let fd = (value(x + FD_STEP) - value(x - FD_STEP)) / (2.0 * FD_STEP);
        let g = gradient(x);
        worst = worst.max((fd - g).abs() / g.abs().max(1.0));
    }
    worst
}

/// Runs the property suite on `s`; never fails, the report carries failures.
pub fn validate(s: &Scenario) -> ValidationReport {
    let mut report = ValidationReport::default();
    if let Err(e) = s.validate() {
        report.push("scenario", false, e.to_string());
        return report;
    }
    report.push("scenario", true, "all scenario invariants hold".into());

    let problem = s.problem();
    let bounds = problem.bounds();
    let demand = problem.total_demand();
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed.unwrap_or(0));

    let oracle = match oracle::solve_problem(&problem) {
        Ok(r) => r,
        Err(e) => {
            report.push("oracle agreement", false, e.to_string());
            return report;
        }
    };
    let prefs = oracle.preferences(&problem);

    let mut worst: f64 = 0.0;
    for (agent, b) in problem.agents.iter().zip(&bounds) {
        for f in &agent.objectives {
            worst = worst.max(gradient_mismatch(|x| f.value(x), |x| f.gradient(x), b, 100, &mut rng));
        }
    }
    for (u, b) in prefs.iter().zip(&bounds) {
        let value = |x| u.value(x).unwrap_or(f64::NAN);
        let gradient = |x| u.gradient(x).unwrap_or(f64::NAN);
        worst = worst.max(gradient_mismatch(value, gradient, b, 100, &mut rng));
    }
    report.push("gradients", worst <= FD_TOL, format!("max relative mismatch {worst:.2e} (tol {FD_TOL:.0e})"));

    let mut max_diff: f64 = 0.0;
    let mut max_kkt: f64 = 0.0;
    let mut agree = |sol: &oracle::DispatchSolution, reference: Result<Vec<f64>, OracleError>, kkt: KktReport| {
        let d = match reference {
            Ok(x) => x.iter().zip(&sol.x_star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
            Err(_) => f64::INFINITY,
        };
        max_diff = max_diff.max(d);
        max_kkt = max_kkt.max(kkt.max_residual());
    };
    for (k, sol) in oracle.subproblems.iter().enumerate() {
        let column = problem.objective_column(k);
        let pg = oracle::projected_gradient_dispatch(&column, &bounds, demand, 1e-12);
        agree(sol, pg, sol.verify_kkt(&column, &bounds, demand));
    }
    let pg = oracle::projected_gradient_dispatch(&prefs, &bounds, demand, 1e-12);
    agree(&oracle.compromise, pg, oracle.compromise.verify_kkt(&prefs, &bounds, demand));
    report.push(
        "oracle agreement",
        max_diff < 1e-6 && max_kkt < 1e-7,
        format!("water-filling vs projected gradient {max_diff:.2e}, KKT residual {max_kkt:.2e}"),
    );

    let mut config = s.sim_config();
    config.record_trajectory = false;
    config.record_trigger_samples = true;
    let run = match run_algorithm1(&s.label, problem.clone(), s.network().expect("validated"), config) {
        Ok(r) => r,
        Err(e) => {
            report.push("simulation", false, e.to_string());
            return report;
        }
    };
    report.push("simulation", true, format!("{} steps to t = {}", run.metrics.steps, run.metrics.t_final));
    runtime_checks(&mut report, s, &run);

    let mut halved = s.clone();
    halved.integrator.step /= 2.0;
    match simulate(&halved, false) {
        Ok(fine) => {
            let d = decision_distance(&run, &fine);
            report.push(
                "step doubling",
                d < STEP_DOUBLING_TOL,
                format!("max final decision change {d:.2e} kW at h/2 (tol {STEP_DOUBLING_TOL:.0e})"),
            );
        }
        Err(e) => report.push("step doubling", false, e.to_string()),
    }
    report
}

fn runtime_checks(report: &mut ValidationReport, s: &Scenario, run: &SimulationRun) {
    let m = &run.metrics;
    let n = s.agents.len() as f64;
    let cons_tol = 1e-6 * n;
    report.push(
        "conservation",
        m.max_abs_sum_z < cons_tol && m.max_abs_sum_mu < cons_tol,
        format!("max |sum z| {:.2e}, max |sum mu| {:.2e}", m.max_abs_sum_z, m.max_abs_sum_mu),
    );
    report.push(
        "feasibility",
        m.max_bound_violation <= 1e-9,
        format!("max bound violation {:.2e}", m.max_bound_violation),
    );
    if s.etm.kind == EtmKind::Static {
        report.push("eta positivity", true, "static rule carries no trigger variable".into());
    } else {
        let ratio = m.min_envelope_ratio.unwrap_or(0.0);
        report.push(
            "eta positivity",
            m.min_eta > 0.0 && ratio >= 1.0 - 1e-6,
            format!("min eta {:.3e}, min eta / exponential lower bound {ratio:.6}", m.min_eta),
        );
    }
    report.push(
        "inter-event time",
        m.min_inter_event >= m.min_evaluation_step * (1.0 - 1e-9),
        format!("min inter-event {:.3e} s, min evaluation step {:.3e} s", m.min_inter_event, m.min_evaluation_step),
    );
    report.push(
        "weight simplex",
        m.max_weight_sum_error <= 1e-9,
        format!("max |sum_k w - 1| {:.2e}", m.max_weight_sum_error),
    );

    let mut violations = 0;
    let mut fired = (0, 0);
    let sub = |k: usize| run.config.etm_subproblem[k];
    let groups = (0..run.layout.k)
        .map(|k| (Layer::Subproblem, Some(k), sub(k)))
        .chain([(Layer::Compromise, None, run.config.etm_compromise)]);
    for (layer, objective, params) in groups {
        let samples: Vec<TriggerSample> = run
            .trigger_records
            .iter()
            .filter(|r| r.layer == layer && r.objective == objective)
            .map(|r| r.sample)
            .collect();
        let c = replay_threshold_ordering(&params, &samples);
        violations += c.ordering_violations;
        fired.0 += c.dynamic_paper;
        fired.1 += c.dynamic_prior;
    }
    report.push(
        "threshold ordering",
        violations == 0,
        format!("replay fires {} (dynamic rule) vs {} (prior rule), {violations} violations", fired.0, fired.1),
    );

    let d = m.distance_to_oracle.unwrap_or(f64::INFINITY);
    report.push("convergence to oracle", d < 1e-3, format!("max |x - x*| = {d:.3e} kW at t = {}", m.t_final));
}

/// `max |a − b|` over every final decision variable (`x̄`, `x̂`, `x`).
pub fn decision_distance(a: &SimulationRun, b: &SimulationRun) -> f64 {
    let l = a.layout;
    let mut idx: Vec<usize> = (0..l.n).map(|i| l.x(i)).collect();
    for k in 0..l.k {
        idx.extend((0..l.n).flat_map(|i| [l.xbar(k, i), l.xhat(k, i)]));
    }
    idx.iter().map(|&j| (a.final_state[j] - b.final_state[j]).abs()).fold(0.0, f64::max)
}

/// Dispatches a parsed command line.
pub fn execute(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Run(args) => {
            let s = load_scenario(&args.scenario, args.case.as_deref())?;
            let m = run_case(&s, &args.out)?;
            println!(
                "{}: {} events in {} s, CE {}, min inter-event {:.3e} s, distance to oracle {}",
                m.label,
                m.total,
                m.window,
                opt(m.convergence_error),
                m.min_inter_event,
                opt(m.distance_to_oracle)
            );
            println!("artifacts written to {}", args.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Oracle(args) => {
            let s = load_scenario(&args.scenario, None)?;
            let json = oracle_json(&s)?;
            if let Some(dir) = &args.out {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
                let path = dir.join("oracle.json");
                fs::write(&path, &json).map_err(io_err(&path))?;
            }
            println!("{json}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare(args) => {
            let cases = expand_cases(&args.cases)?;
            let base = load_scenario(&args.scenario, None)?;
            let rows = compare_cases(&base, &cases)?;
            let text = format_table(&rows);
            print!("{text}");
            if let Some(dir) = &args.out {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
                let path = dir.join("comparison.csv");
                fs::write(&path, table_csv(&rows)?).map_err(io_err(&path))?;
                let path = dir.join("comparison.txt");
                fs::write(&path, &text).map_err(io_err(&path))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate(args) => {
            let mut s = Scenario::load_unvalidated(&args.scenario.scenario)?;
            configure(&mut s, args.case.as_deref(), args.scenario.step, args.scenario.window)?;
            let report = validate(&s);
            print!("{report}");
            Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(label: &str, total: u64) -> CaseRow {
        CaseRow {
            label: label.into(),
            tbg: "Quadratic".into(),
            etm: "DynamicPaper".into(),
            per_agent: vec![total / 2, total - total / 2],
            total,
            ce: Some(0.01),
            min_inter_event: 1e-3,
            distance_to_oracle: None,
        }
    }

    #[test]
    fn table_is_aligned() {
        let t = format_table(&[row("case1", 10), row("case5", 12345)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1].len(), lines[2].len());
        assert!(lines[0].starts_with("case"));
    }

    #[test]
    fn csv_table_has_header_and_rows() {
        let c = table_csv(&[row("case1", 10), row("case2", 11)]).unwrap();
        let lines: Vec<&str> = c.lines().collect();
        assert_eq!(lines[0], "case,tbg,etm,agent1,agent2,total,ce,min_inter_event,distance_to_oracle");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn expand_rejects_unknown() {
        assert_eq!(expand_cases(&["all".into()]).unwrap().len(), 6);
        assert!(matches!(expand_cases(&["case9".into()]), Err(CliError::Usage(_))));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
        let e = CliError::Dynamics(DynamicsError::InvariantViolation { t: 0.0, what: "x".into() });
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn fd_check_flags_wrong_gradient() {
        let set = Interval { lower: 0.0, upper: 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(gradient_mismatch(|x| x * x, |x| 2.0 * x, &set, 50, &mut rng) < 1e-8);
        assert!(gradient_mismatch(|x| x * x, |x| 2.1 * x, &set, 50, &mut rng) > 1e-3);
    }
}
