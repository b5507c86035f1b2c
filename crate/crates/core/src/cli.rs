//! The `fbnash` command line: config loading, the `solve`, `verify`,
//! `oracle` and `check` pipelines, and their output files.
//!
//! Exit codes: 0 success, 1 solver failure or non-convergence, 2 refuted /
//! failed check, 3 inconclusive certificate, 64 malformed config or input,
//! 65 enumeration budget exceeded.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::adjoint::AdjointTrajectory;
use crate::drivers::{sample_ensemble, Backend, BinomialLattice, RegressionConfig, TimeGrid, GENERATOR};
use crate::equilibrium::{
    brute_force_nash, riccati_from_lq, solve_nash, solve_riccati, solve_state, GradientConfig, OracleOptions,
    OracleReport, OracleStatus,
};
use crate::error::Error;
use crate::fbsde::{ControlProcess, FbsdeConfig, StateTrajectory};
use crate::hamiltonian::{build_certificate, vi_residual, CertificateOptions, Verdict, VerificationCertificate, ViResidualReport};
use crate::problem::{lq_to_problem, validate_problem, DerivativeCheckOptions, GameProblem, LqGameSpec, Player, Var};
use crate::process::Process;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_REFUTED: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;
pub const EXIT_CONFIG: i32 = 64;
pub const EXIT_BUDGET: i32 = 65;

#[derive(Debug, Parser)]
#[command(name = "fbnash", version, about = "Open-loop Nash equilibria of FBSDE-driven games")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the projected-gradient equilibrium search and certify the result.
    Solve(CommonArgs),
    /// Certify a given control file.
    Verify(VerifyArgs),
    /// Run the brute-force grid Nash oracle and/or the Riccati oracle.
    Oracle(CommonArgs),
    /// Spot-check every derivative of the configured problem.
    Check(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (default: `output.dir` from the config, else `fbnash-out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores); never changes results.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Controls CSV (default: `verify.controls` from the config).
    #[arg(long)]
    pub controls: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    Lattice {
        steps: usize,
    },
    MonteCarlo {
        steps: usize,
        paths: usize,
        #[serde(default = "default_degree")]
        degree: usize,
        #[serde(default = "default_true")]
        include_brownian: bool,
    },
}

fn default_degree() -> usize {
    RegressionConfig::default().degree
}

fn default_true() -> bool {
    true
}

impl BackendConfig {
    pub fn steps(&self) -> usize {
        match *self {
            BackendConfig::Lattice { steps } | BackendConfig::MonteCarlo { steps, .. } => steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Control grid of player 1 (used for every coordinate and node).
    pub grid1: Option<Vec<f64>>,
    pub grid2: Option<Vec<f64>>,
    pub budget: u64,
    /// Also solve the single-player Riccati equation.
    pub riccati: bool,
    pub riccati_substeps: usize,
    /// `report.json` of a previous `solve` to compare costs against.
    pub compare_report: Option<PathBuf>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            grid1: None,
            grid2: None,
            budget: OracleOptions::default().budget,
            riccati: false,
            riccati_substeps: 20,
            compare_report: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub controls: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    pub samples: usize,
    pub radius: f64,
    pub step: f64,
    pub rel_tol: f64,
    /// Testing aid: perturbs the claimed `b_x` so that the check must fail.
    pub corrupt_derivative: bool,
}

impl Default for CheckConfig {
    fn default() -> Self {
        let d = DerivativeCheckOptions::default();
        Self {
            samples: d.samples,
            radius: 10.0,
            step: d.step,
            rel_tol: d.rel_tol,
            corrupt_derivative: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// Rows per time step in `trajectory.csv` (all scenarios when absent).
    pub max_scenarios: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds path sampling and every randomized check.
    #[serde(default)]
    pub seed: u64,
    pub problem: LqGameSpec,
    pub backend: BackendConfig,
    #[serde(default)]
    pub fbsde: FbsdeConfig,
    #[serde(default)]
    pub gradient: GradientConfig,
    #[serde(default)]
    pub certificate: CertificateOptions,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    fn validate(&self) -> Result<(), String> {
        let steps = self.backend.steps();
        if steps == 0 {
            return Err("backend.steps must be at least 1".into());
        }
        if let BackendConfig::MonteCarlo { paths, degree, .. } = self.backend {
            if paths < 2 {
                return Err("backend.paths must be at least 2".into());
            }
            if !(1..=4).contains(&degree) {
                return Err(format!("backend.degree must lie in 1..=4, got {degree}"));
            }
        }
        self.fbsde.validate().map_err(|e| format!("fbsde: {e}"))?;
        self.gradient.validate().map_err(|e| format!("gradient: {e}"))?;
        let c = &self.certificate;
        if c.grid < 2 || c.samples == 0 || !(c.tol >= 0.0) || !(c.neighbourhood > 0.0) || !(c.endpoint_radius > 0.0) {
            return Err("certificate: grid ≥ 2, samples ≥ 1, tol ≥ 0 and positive radii are required".into());
        }
        if let Some(r) = c.radius {
            if !(r > 0.0) {
                return Err("certificate.radius must be positive".into());
            }
        }
        let k = &self.check;
        if k.samples == 0 || !(k.radius > 0.0) || !(k.step > 0.0) || !(k.rel_tol > 0.0) {
            return Err("check: samples, radius, step and rel_tol must be positive".into());
        }
        if self.oracle.riccati_substeps == 0 {
            return Err("oracle.riccati_substeps must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Budget(String),
    Solver(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Budget(_) => EXIT_BUDGET,
            Failure::Solver(_) => EXIT_FAILURE,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Budget(m) | Failure::Solver(m) => m,
        }
    }

    fn solver(e: Error) -> Self {
        match e {
            Error::Budget { .. } => Failure::Budget(e.to_string()),
            e => Failure::Solver(e.to_string()),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> Failure {
    Failure::Solver(format!("i/o: {e}"))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}

pub fn execute(cli: &Cli) -> i32 {
    let (name, common) = match &cli.command {
        Command::Solve(a) => ("solve", a),
        Command::Verify(a) => ("verify", &a.common),
        Command::Oracle(a) => ("oracle", a),
        Command::Check(a) => ("check", a),
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(common.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {} worker threads: {e}", common.threads);
            return EXIT_FAILURE;
        }
    };
    let started = Instant::now();
    let result = pool.install(|| {
        let mut cfg = RunConfig::load(&common.config).map_err(Failure::Config)?;
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        cfg.certificate.seed = cfg.seed;
        let out = common
            .out
            .clone()
            .or_else(|| cfg.output.dir.clone())
            .unwrap_or_else(|| PathBuf::from("fbnash-out"));
        fs::create_dir_all(&out).map_err(io_err)?;
        let code = match &cli.command {
            Command::Solve(_) => cmd_solve(&cfg, &out)?,
            Command::Verify(a) => cmd_verify(&cfg, &out, a.controls.as_deref())?,
            Command::Oracle(_) => cmd_oracle(&cfg, &out)?,
            Command::Check(_) => cmd_check(&cfg, &out)?,
        };
        write_metadata(&out, name, &cfg)?;
        Ok::<_, Failure>((code, out))
    });
    match result {
        Ok((code, out)) => {
            let timing = Timing {
                command: name,
                wall_time_seconds: started.elapsed().as_secs_f64(),
                threads: pool.current_num_threads(),
            };
            if let Err(e) = write_json(&out.join("timing.json"), &timing) {
                eprintln!("error: {}", e.message());
                return EXIT_FAILURE;
            }
            code
        }
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}

#[derive(Serialize)]
struct Metadata<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    generator: &'static str,
    config: &'a RunConfig,
}

/// Kept apart from `metadata.json` so that every other output is
/// byte-reproducible.
#[derive(Serialize)]
struct Timing<'a> {
    command: &'a str,
    wall_time_seconds: f64,
    threads: usize,
}

fn write_metadata(out: &Path, command: &str, cfg: &RunConfig) -> Result<(), Failure> {
    let meta = Metadata {
        tool: "fbnash",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: cfg.seed,
        generator: GENERATOR,
        config: cfg,
    };
    write_json(&out.join("metadata.json"), &meta)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(io_err)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err)
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Problem and backend described by a config.
pub fn build(cfg: &RunConfig) -> crate::Result<(GameProblem, Backend)> {
    let problem = lq_to_problem(&cfg.problem)?;
    let grid = TimeGrid::new(cfg.problem.horizon, cfg.backend.steps())?;
    let backend = match cfg.backend {
        BackendConfig::Lattice { .. } => Backend::lattice(BinomialLattice::new(grid)),
        BackendConfig::MonteCarlo {
            paths,
            degree,
            include_brownian,
            ..
        } => Backend::monte_carlo(
            sample_ensemble(grid, paths, cfg.problem.d, cfg.seed)?,
            RegressionConfig { degree, include_brownian },
        )?,
    };
    backend.check_compatible(problem.dims.d, problem.horizon)?;
    Ok((problem, backend))
}

#[derive(Serialize)]
struct SolveReport<'a> {
    converged: bool,
    stalled: bool,
    iterations: usize,
    tolerance: f64,
    #[serde(rename = "J1")]
    j1: f64,
    #[serde(rename = "J1_std_error")]
    j1_std_error: f64,
    #[serde(rename = "J2")]
    j2: f64,
    #[serde(rename = "J2_std_error")]
    j2_std_error: f64,
    rho1: f64,
    rho2: f64,
    merit: f64,
    certificate: &'static str,
    witness_kind: Option<&'static str>,
    backend: &'static str,
    steps: usize,
    scenarios_at_terminal: usize,
    state_picard_iterations: usize,
    state_picard_residual: f64,
    state_picard_converged: bool,
    adjoint1_picard_iterations: usize,
    adjoint1_picard_residual: f64,
    adjoint2_picard_iterations: usize,
    adjoint2_picard_residual: f64,
    ridge_fallbacks: usize,
    convention: &'a str,
}

fn witness_kind(v: &Verdict) -> Option<&'static str> {
    match v {
        Verdict::Refuted { witness } => Some(match witness {
            crate::hamiltonian::Witness::Stationarity { .. } => "stationarity",
            crate::hamiltonian::Witness::Convexity { .. } => "convexity",
        }),
        _ => None,
    }
}

fn backend_name(b: &Backend) -> &'static str {
    if b.is_lattice() {
        "lattice"
    } else {
        "monte_carlo"
    }
}

fn cmd_solve(cfg: &RunConfig, out: &Path) -> Result<i32, Failure> {
    let (problem, backend) = build(cfg).map_err(config_err)?;
    let r = solve_nash(&problem, &backend, &cfg.fbsde, &cfg.gradient, &cfg.certificate).map_err(Failure::solver)?;
    let st = &r.state;
    let report = SolveReport {
        converged: r.converged,
        stalled: r.stalled,
        iterations: r.iterations,
        tolerance: cfg.gradient.tol,
        j1: r.costs[0].value,
        j1_std_error: r.costs[0].std_error,
        j2: r.costs[1].value,
        j2_std_error: r.costs[1].std_error,
        rho1: r.rho[0],
        rho2: r.rho[1],
        merit: r.merit(),
        certificate: r.certificate.verdict.label(),
        witness_kind: witness_kind(&r.certificate.verdict),
        backend: backend_name(&backend),
        steps: backend.steps(),
        scenarios_at_terminal: backend.scenarios(backend.steps()),
        state_picard_iterations: st.state_diagnostics.iterations,
        state_picard_residual: st.state_diagnostics.residual,
        state_picard_converged: st.state_diagnostics.converged,
        adjoint1_picard_iterations: st.adjoint_diagnostics[0].iterations,
        adjoint1_picard_residual: st.adjoint_diagnostics[0].residual,
        adjoint2_picard_iterations: st.adjoint_diagnostics[1].iterations,
        adjoint2_picard_residual: st.adjoint_diagnostics[1].residual,
        ridge_fallbacks: st.state_diagnostics.ridge_fallbacks
            + st.adjoint_diagnostics.iter().map(|d| d.ridge_fallbacks).sum::<usize>(),
        convention: &r.certificate.convention,
    };
    write_json(&out.join("report.json"), &report)?;
    write_json(&out.join("certificate.json"), &r.certificate)?;
    write_trajectory(
        &out.join("trajectory.csv"),
        &problem,
        &backend,
        &st.traj,
        &r.controls,
        &st.adjoints,
        cfg.output.max_scenarios,
    )?;
    write_controls(&out.join("controls.csv"), &backend, &r.controls)?;

    let mut w = csv::Writer::from_path(out.join("history.csv")).map_err(io_err)?;
    w.write_record(["iteration", "J1", "J2", "rho1", "rho2", "alpha"]).map_err(io_err)?;
    for h in &r.history {
        w.write_record([h.iteration.to_string(), fmt(h.j1), fmt(h.j2), fmt(h.rho1), fmt(h.rho2), fmt(h.alpha)])
            .map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;

    println!(
        "solve: converged={} iterations={} J1={:.10e} J2={:.10e} rho=({:.3e}, {:.3e}) certificate={}",
        r.converged,
        r.iterations,
        r.costs[0].value,
        r.costs[1].value,
        r.rho[0],
        r.rho[1],
        r.certificate.verdict.label()
    );
    Ok(match r.certificate.verdict {
        Verdict::Refuted { .. } => EXIT_REFUTED,
        _ if r.converged => EXIT_OK,
        _ => EXIT_FAILURE,
    })
}

fn trajectory_header(problem: &GameProblem) -> Vec<String> {
    let d = problem.dims;
    let mut h: Vec<String> = ["step", "t", "scenario_id"].iter().map(|s| s.to_string()).collect();
    let vec = |h: &mut Vec<String>, name: &str, len: usize| h.extend((1..=len).map(|i| format!("{name}_{i}")));
    let mat = |h: &mut Vec<String>, name: &str, rows: usize| {
        for i in 1..=rows {
            for c in 1..=d.d {
                h.push(format!("{name}_{i}{c}"));
            }
        }
    };
    vec(&mut h, "x", d.n);
    vec(&mut h, "y", d.m);
    mat(&mut h, "z", d.m);
    vec(&mut h, "u1", d.k1);
    vec(&mut h, "u2", d.k2);
    for i in 1..=2 {
        vec(&mut h, &format!("k{i}"), d.m);
        vec(&mut h, &format!("p{i}"), d.n);
        mat(&mut h, &format!("q{i}"), d.n);
    }
    h
}

fn write_trajectory(
    path: &Path,
    problem: &GameProblem,
    backend: &Backend,
    traj: &StateTrajectory,
    u: &ControlProcess,
    adjoints: &[AdjointTrajectory; 2],
    cap: Option<usize>,
) -> Result<(), Failure> {
    let dims = problem.dims;
    let steps = backend.steps();
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(trajectory_header(problem)).map_err(io_err)?;
    let blank = |row: &mut Vec<String>, n: usize| row.extend(std::iter::repeat(String::new()).take(n));
    let push = |row: &mut Vec<String>, v: &[f64]| row.extend(v.iter().map(|&x| fmt(x)));
    for j in 0..=steps {
        let count = backend.scenarios(j).min(cap.unwrap_or(usize::MAX));
        for s in 0..count {
            let mut row = vec![j.to_string(), fmt(backend.grid().t(j)), s.to_string()];
            push(&mut row, traj.x.at(j, s));
            push(&mut row, traj.y.at(j, s));
            let live = j < steps;
            if live {
                push(&mut row, traj.z.at(j, s));
                push(&mut row, u.u1.at(j, s));
                push(&mut row, u.u2.at(j, s));
            } else {
                blank(&mut row, dims.m * dims.d + dims.k1 + dims.k2);
            }
            for a in adjoints {
                push(&mut row, a.k.at(j, s));
                push(&mut row, a.p.at(j, s));
                if live {
                    push(&mut row, a.q.at(j, s));
                } else {
                    blank(&mut row, dims.n * dims.d);
                }
            }
            w.write_record(&row).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

fn write_controls(path: &Path, backend: &Backend, u: &ControlProcess) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    let mut header = vec!["step".to_string(), "scenario_id".to_string()];
    header.extend((1..=u.u1.dim()).map(|i| format!("u1_{i}")));
    header.extend((1..=u.u2.dim()).map(|i| format!("u2_{i}")));
    w.write_record(&header).map_err(io_err)?;
    for j in 0..backend.steps() {
        for s in 0..backend.scenarios(j) {
            let mut row = vec![j.to_string(), s.to_string()];
            row.extend(u.u1.at(j, s).iter().chain(u.u2.at(j, s)).map(|&v| fmt(v)));
            w.write_record(&row).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// Reads controls from a CSV with columns `step`, `scenario_id`, `u1_*`,
/// `u2_*` (a `controls.csv` or a complete `trajectory.csv`). Rows with empty
/// control fields (terminal rows) are skipped.
pub fn read_controls(path: &Path, problem: &GameProblem, backend: &Backend) -> Result<ControlProcess, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let header = r.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (Some(step_col), Some(scen_col)) = (col("step"), col("scenario_id")) else {
        return Err("controls file needs `step` and `scenario_id` columns".into());
    };
    let dims = [problem.dims.k1, problem.dims.k2];
    let mut cols = [Vec::new(), Vec::new()];
    for (i, prefix) in ["u1", "u2"].iter().enumerate() {
        for c in 1..=dims[i] {
            cols[i].push(col(&format!("{prefix}_{c}")).ok_or(format!("missing column {prefix}_{c}"))?);
        }
        if col(&format!("{prefix}_{}", dims[i] + 1)).is_some() {
            return Err(format!("{prefix} has more than {} columns", dims[i]));
        }
    }
    let steps = backend.steps();
    let mut levels: [Vec<Vec<f64>>; 2] = [0, 1].map(|i| (0..steps).map(|j| vec![f64::NAN; backend.scenarios(j) * dims[i]]).collect());
    let mut seen: Vec<Vec<bool>> = (0..steps).map(|j| vec![false; backend.scenarios(j)]).collect();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let at = |c: usize| rec.get(c).unwrap_or("").trim();
        let cells: Vec<&str> = cols.iter().flatten().map(|&c| at(c)).collect();
        if !cells.is_empty() && cells.iter().all(|c| c.is_empty()) {
            continue;
        }
        let row = line + 2;
        let j: usize = at(step_col).parse().map_err(|_| format!("row {row}: bad step"))?;
        let s: usize = at(scen_col).parse().map_err(|_| format!("row {row}: bad scenario_id"))?;
        if j >= steps || s >= backend.scenarios(j) {
            return Err(format!("row {row}: (step {j}, scenario {s}) is outside the backend layout"));
        }
        if std::mem::replace(&mut seen[j][s], true) {
            return Err(format!("row {row}: duplicate (step {j}, scenario {s})"));
        }
        for i in 0..2 {
            for (c, &col) in cols[i].iter().enumerate() {
                let v: f64 = at(col).parse().map_err(|_| format!("row {row}: bad u{}_{}", i + 1, c + 1))?;
                levels[i][j][s * dims[i] + c] = v;
            }
        }
    }
    if let Some((j, s)) = seen.iter().enumerate().find_map(|(j, l)| l.iter().position(|b| !b).map(|s| (j, s))) {
        return Err(format!("controls missing at step {j}, scenario {s}"));
    }
    let [l1, l2] = levels;
    Ok(ControlProcess {
        u1: Process::from_levels(dims[0], l1),
        u2: Process::from_levels(dims[1], l2),
    })
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    verdict: &'static str,
    rho1: f64,
    rho2: f64,
    state_converged: bool,
    vi: &'a ViResidualReport,
    certificate: &'a VerificationCertificate,
}

fn cmd_verify(cfg: &RunConfig, out: &Path, controls: Option<&Path>) -> Result<i32, Failure> {
    let (problem, backend) = build(cfg).map_err(config_err)?;
    let path = controls
        .or(cfg.verify.controls.as_deref())
        .ok_or_else(|| Failure::Config("no controls file given (--controls or verify.controls)".into()))?;
    let u = read_controls(path, &problem, &backend).map_err(Failure::Config)?;
    let state = solve_state(&problem, &u, &backend, &cfg.fbsde, None).map_err(Failure::solver)?;
    let vi = vi_residual(&problem, &state.traj, &state.adjoints[0], &state.adjoints[1], &u, &backend)
        .map_err(Failure::solver)?;
    let cert = build_certificate(
        &problem,
        &state.traj,
        [&state.adjoints[0], &state.adjoints[1]],
        &u,
        &backend,
        &cfg.certificate,
    )
    .map_err(Failure::solver)?;
    let report = VerifyReport {
        verdict: cert.verdict.label(),
        rho1: vi.rho(Player::One),
        rho2: vi.rho(Player::Two),
        state_converged: state.converged(),
        vi: &vi,
        certificate: &cert,
    };
    write_json(&out.join("certificate.json"), &report)?;
    println!(
        "verify: rho=({:.3e}, {:.3e}) certificate={}",
        report.rho1, report.rho2, report.verdict
    );
    Ok(match cert.verdict {
        Verdict::Certified => EXIT_OK,
        Verdict::Refuted { .. } => EXIT_REFUTED,
        Verdict::Inconclusive { .. } => EXIT_INCONCLUSIVE,
    })
}

#[derive(Serialize)]
struct RiccatiReport {
    times: Vec<f64>,
    /// `P(t)` row-major per knot.
    p: Vec<Vec<f64>>,
    /// `K(t)` row-major per knot; the control is `-K x`.
    gain: Vec<Vec<f64>>,
    value_at_initial: f64,
}

#[derive(Serialize)]
struct CostGaps {
    #[serde(rename = "J1_solve")]
    j1_solve: f64,
    #[serde(rename = "J2_solve")]
    j2_solve: f64,
    #[serde(rename = "J1_gap")]
    j1_gap: f64,
    #[serde(rename = "J2_gap")]
    j2_gap: f64,
}

#[derive(Serialize)]
struct OracleFile {
    grid: Option<OracleReport>,
    riccati: Option<RiccatiReport>,
    comparison: Option<CostGaps>,
}

fn row_major(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn cmd_oracle(cfg: &RunConfig, out: &Path) -> Result<i32, Failure> {
    let (problem, _) = build(cfg).map_err(config_err)?;
    let BackendConfig::Lattice { steps } = cfg.backend else {
        return Err(Failure::Config("the oracle needs backend.kind = \"lattice\"".into()));
    };
    let oc = &cfg.oracle;
    let grids_given = oc.grid1.is_some() || oc.grid2.is_some();
    if !grids_given && !oc.riccati {
        return Err(Failure::Config("nothing to do: set oracle.grid1/grid2 and/or oracle.riccati".into()));
    }
    let grid = if grids_given {
        let g1 = oc.grid1.clone().unwrap_or_default();
        let g2 = oc.grid2.clone().unwrap_or_default();
        let lattice = BinomialLattice::new(TimeGrid::new(cfg.problem.horizon, steps).map_err(config_err)?);
        let opts = OracleOptions {
            budget: oc.budget,
            fbsde: cfg.fbsde,
        };
        let r = brute_force_nash(&problem, &lattice, [&g1, &g2], &opts).map_err(|e| match e {
            Error::Invalid(_) => config_err(e),
            e => Failure::solver(e),
        })?;
        Some(r)
    } else {
        None
    };
    let riccati = if oc.riccati {
        let spec = riccati_from_lq(&cfg.problem).map_err(config_err)?;
        let sol = solve_riccati(&spec, cfg.problem.horizon, steps, oc.riccati_substeps).map_err(Failure::solver)?;
        Some(RiccatiReport {
            value_at_initial: sol.value(&cfg.problem.initial),
            times: sol.times.clone(),
            p: sol.p.iter().map(row_major).collect(),
            gain: sol.gain.iter().map(row_major).collect(),
        })
    } else {
        None
    };
    let comparison = match (&oc.compare_report, &grid) {
        (Some(path), Some(g)) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            let v: serde_json::Value = serde_json::from_str(&text).map_err(config_err)?;
            let get = |k: &str| {
                v.get(k)
                    .and_then(serde_json::Value::as_f64)
                    .ok_or_else(|| Failure::Config(format!("{}: missing {k}", path.display())))
            };
            let (j1, j2) = (get("J1")?, get("J2")?);
            let gaps = CostGaps {
                j1_solve: j1,
                j2_solve: j2,
                j1_gap: j1 - g.costs[0],
                j2_gap: j2 - g.costs[1],
            };
            println!("oracle: cost gaps J1 {:+.6e}, J2 {:+.6e}", gaps.j1_gap, gaps.j2_gap);
            Some(gaps)
        }
        _ => None,
    };
    let status = grid.as_ref().map(|g| g.status);
    if let Some(g) = &grid {
        println!(
            "oracle: status={:?} J=({:.10e}, {:.10e}) evaluations={}",
            g.status, g.costs[0], g.costs[1], g.evaluations
        );
    }
    if let Some(r) = &riccati {
        println!("oracle: riccati value at the initial state {:.10e}", r.value_at_initial);
    }
    write_json(&out.join("oracle.json"), &OracleFile { grid, riccati, comparison })?;
    Ok(if status == Some(OracleStatus::NoPureNash) { EXIT_REFUTED } else { EXIT_OK })
}

fn cmd_check(cfg: &RunConfig, out: &Path) -> Result<i32, Failure> {
    let mut problem = lq_to_problem(&cfg.problem).map_err(config_err)?;
    if cfg.check.corrupt_derivative {
        let b = problem.coeffs.b.clone();
        problem.coeffs.b = b.clone().with_jacobian(Var::X, move |pt| b.jacobian(Var::X, pt).add_scalar(0.5));
    }
    let opts = DerivativeCheckOptions {
        samples: cfg.check.samples,
        seed: cfg.seed,
        step: cfg.check.step,
        rel_tol: cfg.check.rel_tol,
    };
    let report = match validate_problem(&problem, &opts, cfg.check.radius) {
        Ok(r) => r,
        Err(e) => {
            println!("check: FAIL {e}");
            write_json(&out.join("check.json"), &serde_json::json!({ "passed": false, "error": e.to_string() }))?;
            return Ok(EXIT_REFUTED);
        }
    };
    for r in &report.reports {
        println!(
            "check: {} {:<6} max relative error {:.3e}",
            if r.passed { "PASS" } else { "FAIL" },
            r.function,
            r.max_rel_error()
        );
    }
    for w in &report.warnings {
        println!("check: warning: {w}");
    }
    write_json(&out.join("check.json"), &report)?;
    Ok(if report.passed { EXIT_OK } else { EXIT_REFUTED })
}
