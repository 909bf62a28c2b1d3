//! Command line: `solve`, `verify` and `sweep`.
//!
//! Exit codes: 0 converged and every mandatory check passed, 2 the saddle
//! iteration did not converge, 3 a check failed, 64 usage or configuration
//! error, 66 missing or unreadable input.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{RunConfig, KEYS};
use crate::functional::PhysicalParams;
use crate::grid::{graph_from_indicator, DensityField, DomainSpec, PotentialField};
use crate::io::{read_field, write_field, FieldKind, IoError, Report};
use crate::maglaw::MagnetizationLaw;
use crate::saddle::{
    check_saddle, free_surface_residual, nontriviality_check, potential_norm, run_saddle, verify_bottom_distance,
    verify_duality_linear, verify_norm_bound, CheckResult, SaddleError, SaddleState, VerifyReport,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NONCONVERGED: i32 = 2;
pub const EXIT_CHECK: i32 = 3;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_NOINPUT: i32 = 66;

/// Random probes per side in the saddle check.
const SADDLE_PROBES: usize = 64;
/// Tolerance of the linear-law duality identities.
const DUALITY_TOL: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(name = "ferrosaddle", version, about = "Saddle points of the ferrofluid free-boundary functional")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the saddle iteration and write fields and a report.
    Solve(Common),
    /// Re-check a state written by `solve`.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Directory holding the state; defaults to the output directory.
        #[arg(long)]
        state: Option<PathBuf>,
    },
    /// One run per point of the Cartesian product of `key=v1,v2,...` lists.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(value_name = "KEY=VALUES", required = true)]
        params: Vec<String>,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.directory`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Leave timings out of reports so reruns are byte-identical.
    #[arg(long)]
    deterministic: bool,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads for `sweep`.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

/// A failure that maps to an exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    fn no_input(message: impl Into<String>) -> Self {
        Self { code: EXIT_NOINPUT, message: message.into() }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Self::no_input(e.to_string())
    }
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Solve(common) => cmd_solve(&common),
        Command::Verify { common, state } => cmd_verify(&common, state.as_deref()),
        Command::Sweep { common, params } => cmd_sweep(&common, &params),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut config = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::no_input(format!("{}: {e}", path.display())))?;
            RunConfig::parse(&text).map_err(|e| Failure::usage(format!("{}:{e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        config.output_directory = out.clone();
    }
    if common.deterministic {
        config.deterministic = true;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

/// Grid, law and constants of a configuration.
pub struct Problem {
    pub spec: DomainSpec,
    pub law: MagnetizationLaw,
    pub params: PhysicalParams,
}

impl Problem {
    pub fn new(config: &RunConfig) -> Result<Self, Failure> {
        let err = |e: crate::Error| Failure::usage(e.to_string());
        let spec = config.domain().map_err(err)?;
        let law = config.magnetization_law().map_err(err)?;
        let params = config.physical_params(&law).map_err(err)?;
        Ok(Self { spec, law, params })
    }
}

/// Every check applied to a computed pair `(u, χ)`.
pub fn verify_state(
    problem: &Problem,
    config: &RunConfig,
    u: &PotentialField,
    chi: &DensityField,
    saddle_tol: f64,
) -> crate::Result<VerifyReport> {
    let Problem { spec, law, params } = problem;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = check_saddle(spec, law, params, u, chi, SADDLE_PROBES, saddle_tol, &mut rng)?;
    report.extend(verify_norm_bound(spec, params, u)?);
    report.extend(verify_bottom_distance(spec, law, params, chi)?);
    report.extend(nontriviality_check(spec, law, params, chi)?);
    if let MagnetizationLaw::Linear { mu } = *law {
        report.extend(verify_duality_linear(spec, params, mu, chi, &config.inner, DUALITY_TOL, &mut rng)?);
    }
    if let Ok(eta) = graph_from_indicator(spec, chi) {
        let r = free_surface_residual(spec, law, params, u, &eta)?;
        report.push(CheckResult::diagnostic("free_surface.norm", r.norm, f64::NAN));
        report.push(CheckResult::diagnostic("free_surface.potential_jump", r.potential_jump, spec.h_z()));
        report.push(CheckResult::diagnostic("free_surface.flux_jump", r.flux_jump, f64::NAN));
    }
    Ok(report)
}

fn push_checks(report: &mut Report, checks: &VerifyReport) {
    for c in &checks.checks {
        let verdict = match (c.mandatory, c.passed) {
            (false, _) => "diagnostic",
            (true, true) => "pass",
            (true, false) => "FAIL",
        };
        report.push(format!("check.{}", c.name), format!("{:e} {:e} {verdict}", c.measured, c.bound));
    }
    report.push("verdict", if checks.passed() { "pass" } else { "fail" });
}

fn config_report(config: &RunConfig) -> Report {
    let mut report = Report::new();
    for (k, v) in config.entries() {
        report.push(format!("config.{k}"), v);
    }
    report
}

/// Configuration echoed in a report.
pub fn config_from_report(report: &Report) -> Result<RunConfig, crate::config::ConfigError> {
    let text: String = report.section("config").iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    RunConfig::parse(&text)
}

/// Outcome of one solve.
pub struct RunOutcome {
    pub state: SaddleState,
    pub checks: VerifyReport,
    pub report: Report,
    pub code: i32,
}

/// Solves `config`, writes fields and `report.txt` to `dir`.
pub fn solve_into(config: &RunConfig, dir: &Path) -> Result<RunOutcome, Failure> {
    let problem = Problem::new(config)?;
    let options = config.saddle_options().map_err(|e| Failure::usage(e.to_string()))?;
    let Problem { spec, law, params } = &problem;
    let state = match run_saddle(spec, law, params, &options) {
        Ok(s) => s,
        Err(SaddleError::NonConvergence(s)) => *s,
        Err(SaddleError::Invalid(e)) => return Err(Failure::usage(e.to_string())),
    };

    fs::create_dir_all(dir).map_err(|e| Failure::no_input(format!("{}: {e}", dir.display())))?;
    let eta = graph_from_indicator(spec, &state.chi).ok();
    for &format in &config.formats {
        write_field(dir, "u", spec, FieldKind::Nodes, state.u.as_slice(), format)?;
        write_field(dir, "rho", spec, FieldKind::Cells, state.rho.as_slice(), format)?;
        write_field(dir, "chi", spec, FieldKind::Cells, state.chi.as_slice(), format)?;
        if let Some(eta) = &eta {
            write_field(dir, "eta", spec, FieldKind::Columns, eta.as_slice(), format)?;
        }
    }

    let tol = saddle_tolerance(&state);
    let checks = verify_state(&problem, config, &state.u, &state.chi, tol).map_err(|e| Failure::usage(e.to_string()))?;

    let mut report = config_report(config);
    let u_norm = potential_norm(spec, &state.u).unwrap_or(f64::NAN);
    let results: [(&str, String); 16] = [
        ("status", if state.converged { "converged" } else { "not_converged" }.into()),
        ("sweeps", state.history.len().to_string()),
        ("lower", format!("{:e}", state.lower)),
        ("upper", format!("{:e}", state.upper)),
        ("certified_upper", format!("{:e}", state.certified_upper)),
        ("gap", format!("{:e}", state.gap)),
        ("relative_gap", format!("{:e}", state.relative_gap())),
        ("value", format!("{:e}", state.value(spec, law, params))),
        ("lower_sweep", state.lower_sweep.to_string()),
        ("upper_sweep", state.upper_sweep.to_string()),
        ("u_norm", format!("{u_norm:e}")),
        ("mu_drive", format!("{:e}", params.mu_drive)),
        ("p0", format!("{:e}", params.p0)),
        ("gap_monotone", state.gap_monotone.to_string()),
        ("subsolves_converged", state.subsolves_converged.to_string()),
        ("graph_like", eta.is_some().to_string()),
    ];
    for (k, v) in results {
        report.push(format!("result.{k}"), v);
    }
    if !config.deterministic {
        report.push("result.wallclock_seconds", format!("{:.3}", state.wallclock));
    }
    for h in &state.history {
        report.push(
            format!("iter.{}", h.sweep),
            format!(
                "{:e} {:e} {:e} {:e} {:e} {:e} {:e} {:e} {} {} {}",
                h.lower,
                h.upper,
                h.mixed_lower,
                h.certified_upper,
                h.gap,
                h.u_norm,
                h.volume,
                h.theta,
                h.inner_iterations,
                h.outer_iterations,
                h.subsolves_converged
            ),
        );
    }
    push_checks(&mut report, &checks);
    let path = dir.join("report.txt");
    fs::write(&path, format!("# ferrosaddle run report\n# iter.N = lower upper mixed_lower certified_upper gap u_norm volume theta inner_iterations outer_iterations subsolves_converged\n{}", report.to_text()))
        .map_err(|e| Failure::no_input(format!("{}: {e}", path.display())))?;

    let code = if !state.converged {
        EXIT_NONCONVERGED
    } else if !checks.passed() {
        EXIT_CHECK
    } else {
        EXIT_OK
    };
    Ok(RunOutcome { state, checks, report, code })
}

/// Violation allowed in the saddle inequalities of a computed state: each
/// side is bounded by the certified gap.
pub fn saddle_tolerance(state: &SaddleState) -> f64 {
    (state.certified_upper - state.lower).max(state.gap).max(0.0) + 1e-9 * (1.0 + state.upper.abs())
}

fn cmd_solve(common: &Common) -> Result<i32, Failure> {
    let config = load_config(common)?;
    let dir = config.output_directory.clone();
    let outcome = solve_into(&config, &dir)?;
    eprintln!(
        "{} after {} sweeps, gap {:.3e} (relative {:.3e}); checks {}",
        if outcome.state.converged { "converged" } else { "not converged" },
        outcome.state.history.len(),
        outcome.state.gap,
        outcome.state.relative_gap(),
        if outcome.checks.passed() { "passed" } else { "failed" }
    );
    Ok(outcome.code)
}

fn cmd_verify(common: &Common, state_dir: Option<&Path>) -> Result<i32, Failure> {
    let config = load_config(common)?;
    let problem = Problem::new(&config)?;
    let dir = state_dir.map(Path::to_path_buf).unwrap_or_else(|| config.output_directory.clone());
    let spec = &problem.spec;
    let u = read_field(&dir, "u", spec, FieldKind::Nodes)?;
    let chi = read_field(&dir, "chi", spec, FieldKind::Cells)?;
    let u = PotentialField::from_values(spec, u).map_err(|e| Failure::no_input(format!("u: {e}")))?;
    let chi = DensityField::from_values(chi).map_err(|e| Failure::no_input(format!("chi: {e}")))?;
    if !chi.is_binary() {
        return Err(Failure::no_input("chi: not a binary indicator"));
    }
    // Without the run history the saddle check falls back to the gap recorded
    // in the report, if there is one.
    let recorded = fs::read_to_string(dir.join("report.txt")).ok().map(|t| Report::parse(&t));
    let read = |key: &str| recorded.as_ref().and_then(|r| r.get(key)).and_then(|v| v.parse::<f64>().ok());
    let tol = match (read("result.certified_upper"), read("result.lower"), read("result.gap"), read("result.upper")) {
        (Some(c), Some(l), Some(g), Some(m)) => (c - l).max(g).max(0.0) + 1e-9 * (1.0 + m.abs()),
        _ => config.tol_gap,
    };
    let checks = verify_state(&problem, &config, &u, &chi, tol).map_err(|e| Failure::no_input(e.to_string()))?;
    let mut report = config_report(&config);
    push_checks(&mut report, &checks);
    let path = dir.join("verify.txt");
    fs::write(&path, format!("# ferrosaddle verify report\n{}", report.to_text()))
        .map_err(|e| Failure::no_input(format!("{}: {e}", path.display())))?;
    for c in checks.failures() {
        eprintln!("FAIL {}: {:e} > {:e}", c.name, c.measured, c.bound);
    }
    Ok(if checks.passed() { EXIT_OK } else { EXIT_CHECK })
}

/// Resolves a sweep key: a full key, or the last component of exactly one.
fn resolve_key(key: &str) -> Result<&'static str, Failure> {
    if let Some(k) = KEYS.iter().find(|k| **k == key) {
        return Ok(k);
    }
    let matches: Vec<&'static str> = KEYS.iter().copied().filter(|k| k.rsplit('.').next() == Some(key)).collect();
    match matches.as_slice() {
        [k] => Ok(k),
        [] => Err(Failure::usage(format!("unknown sweep key '{key}'"))),
        _ => Err(Failure::usage(format!("ambiguous sweep key '{key}'"))),
    }
}

/// Parses `key=v1,v2,...` arguments.
pub fn parse_sweep(args: &[String]) -> Result<Vec<(&'static str, Vec<String>)>, Failure> {
    if args.is_empty() {
        return Err(Failure::usage("sweep needs at least one KEY=VALUES argument"));
    }
    args.iter()
        .map(|a| {
            let (k, v) = a.split_once('=').ok_or_else(|| Failure::usage(format!("expected KEY=VALUES, got '{a}'")))?;
            let values: Vec<String> = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            if values.is_empty() {
                return Err(Failure::usage(format!("empty value list for '{k}'")));
            }
            Ok((resolve_key(k.trim())?, values))
        })
        .collect()
}

/// Cartesian product, last key varying fastest.
fn product(axes: &[(&'static str, Vec<String>)]) -> Vec<Vec<(&'static str, String)>> {
    let mut out = vec![Vec::new()];
    for (key, values) in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push((*key, v.clone()));
                    p
                })
            })
            .collect();
    }
    out
}

/// One line of `sweep.csv`.
fn sweep_row(outcome: &Result<RunOutcome, Failure>) -> String {
    let check = |o: &RunOutcome, name: &str| o.checks.get(name).map(|c| (c.measured, c.bound));
    match outcome {
        Ok(o) => {
            let (norm, norm_bound) = check(o, "norm_bound").unwrap_or((f64::NAN, f64::NAN));
            let (bottom, bottom_bound) = check(o, "bottom_distance").unwrap_or((f64::NAN, f64::NAN));
            format!(
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{}",
                o.state.converged,
                o.state.lower,
                o.state.upper,
                o.state.gap,
                o.state.relative_gap(),
                norm,
                norm_bound,
                norm_bound - norm,
                bottom,
                bottom_bound,
                bottom_bound - bottom,
                o.checks.passed(),
                o.code
            )
        }
        Err(f) => format!("false,,,,,,,,,,,false,{}", f.code),
    }
}

fn cmd_sweep(common: &Common, args: &[String]) -> Result<i32, Failure> {
    let base = load_config(common)?;
    let axes = parse_sweep(args)?;
    let points = product(&axes);
    let root = base.output_directory.clone();
    let mut configs = Vec::with_capacity(points.len());
    for (i, point) in points.iter().enumerate() {
        let mut c = base.clone();
        c.output_directory = root.join(format!("run_{i:03}"));
        for (k, v) in point {
            c.set(k, v).map_err(|e| Failure::usage(format!("{k} = {v}: {e}")))?;
        }
        c.validate().map_err(|e| Failure::usage(e.to_string()))?;
        configs.push(c);
    }
    fs::create_dir_all(&root).map_err(|e| Failure::no_input(format!("{}: {e}", root.display())))?;
    let threads = common
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, configs.len());

    let outcomes: Vec<Mutex<Option<Result<RunOutcome, Failure>>>> = configs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= configs.len() {
                    break;
                }
                let outcome = solve_into(&configs[i], &configs[i].output_directory);
                *outcomes[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(outcome);
            });
        }
    });

    let mut csv = String::from("run");
    for (k, _) in &axes {
        csv.push(',');
        csv.push_str(k);
    }
    csv.push_str(",converged,lower,upper,gap,relative_gap,u_norm,norm_bound,norm_margin,bottom_distance,bottom_bound,bottom_margin,checks_passed,exit\n");
    let mut code = EXIT_OK;
    for (i, (point, slot)) in points.iter().zip(outcomes).enumerate() {
        let outcome = slot.into_inner().unwrap_or_else(|e| e.into_inner()).expect("every run is executed");
        let run_code = match &outcome {
            Ok(o) => o.code,
            Err(f) => {
                eprintln!("run_{i:03}: {}", f.message);
                f.code
            }
        };
        if run_code != EXIT_OK {
            code = EXIT_NONCONVERGED;
        }
        csv.push_str(&format!("run_{i:03}"));
        for (_, v) in point {
            csv.push(',');
            csv.push_str(v);
        }
        csv.push(',');
        csv.push_str(&sweep_row(&outcome));
        csv.push('\n');
    }
    let path = root.join("sweep.csv");
    fs::write(&path, csv).map_err(|e| Failure::no_input(format!("{}: {e}", path.display())))?;
    eprintln!("{} runs written to {}", points.len(), root.display());
    Ok(code)
}
