//! Command-line front end: certify dominance, run engines under schedules,
//! compare solvers. See the repository README for file formats.
//!
//! Exit codes: 0 success, 1 invalid input, 2 certification refusal,
//! 3 numeric degeneracy. A diverged run is a reported outcome (summary
//! field), not an error exit.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use minsum::analysis;
use minsum::baselines::{self, SolveReport};
use minsum::dominance::{self, Certification, DominanceCertificate};
use minsum::hyper;
use minsum::quadratic;
use minsum::schedule::{run_engine, EngineKind, Schedule};
use minsum::trace::{RunOptions, Trace};
use minsum::{Error, Program};

#[derive(Parser)]
#[command(name = "minsum", version, about = "Min-sum message passing for convex programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify scaled diagonal dominance and write the certificate JSON.
    Certify(CertifyArgs),
    /// Run an engine under a schedule; emit a trace CSV and a summary JSON.
    Solve(SolveArgs),
    /// Iterations-to-accuracy table across solvers and seeds.
    Compare(CompareArgs),
}

#[derive(Args)]
struct CertifyArgs {
    /// Problem file (JSON).
    #[arg(long)]
    problem: PathBuf,
    /// Half-width of the sampling box (per variable) for non-quadratic
    /// programs; defaults to the problem's B.
    #[arg(long = "box")]
    box_radius: Option<f64>,
    /// Sample count for box certification.
    #[arg(long, default_value_t = 64)]
    samples: usize,
    /// Where to write the certificate JSON (stdout when omitted).
    #[arg(long)]
    certificate: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum EngineArg {
    Quadratic,
    Piecewise,
    Hyper,
}

#[derive(Args)]
struct SolveArgs {
    /// Problem file (JSON).
    #[arg(long)]
    problem: PathBuf,
    #[arg(long, value_enum, default_value_t = EngineArg::Quadratic)]
    engine: EngineArg,
    /// `sync`, `async`, or a path to a schedule script JSON.
    #[arg(long, default_value = "sync")]
    schedule: String,
    /// Seed for the random asynchronous schedule.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    horizon: usize,
    /// Update-window witness of the random asynchronous schedule.
    #[arg(long, default_value_t = 5)]
    window: usize,
    /// Largest read lag of the random asynchronous schedule.
    #[arg(long, default_value_t = 5)]
    lag_bound: usize,
    /// Grid resolution for the piecewise engine.
    #[arg(long, default_value_t = 401)]
    grid_m: usize,
    /// Box half-width override (piecewise engine); defaults to the
    /// problem's B.
    #[arg(long = "B")]
    box_radius: Option<f64>,
    /// Stop once the largest message change falls to this value.
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    /// Certificate JSON (from `certify`) to carry bound parameters.
    #[arg(long)]
    certificate: Option<PathBuf>,
    /// Solve the program by damped Newton too and report the final error
    /// (and, with a certificate, the per-iterate bound verdict).
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    out_trace: Option<PathBuf>,
    /// Summary JSON path (stdout when omitted).
    #[arg(long)]
    out_summary: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Problem file (JSON).
    #[arg(long)]
    problem: PathBuf,
    /// Comma-separated subset of minsum,newton,coordinate,gradient.
    #[arg(long, default_value = "minsum,newton,coordinate,gradient")]
    solvers: String,
    /// Number of schedule seeds (0, 1, ..).
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 2000)]
    horizon: usize,
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value_t = 5)]
    lag_bound: usize,
    /// Table CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("MINSUM_LOG")).init();
    // Clap's own usage exit code would collide with the refusal code.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Certify(args) => cmd_certify(&args),
        Command::Solve(args) => cmd_solve(&args),
        Command::Compare(args) => cmd_compare(&args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// 1 for anything wrong with the inputs, 3 for numeric trouble inside a
/// computation that was validly posed.
fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Dimension { .. }
        | Error::InvalidProgram(_)
        | Error::Unsupported(_)
        | Error::InvalidSchedule(_)
        | Error::Json(_)
        | Error::Io(_) => 1,
        Error::DegenerateCurvature(_) | Error::NumericFailure(_) => 3,
    }
}

fn load_problem(path: &Path) -> Result<Program, Error> {
    let text = std::fs::read_to_string(path)?;
    let program = Program::from_json_str(&text)?;
    log::info!(
        "loaded {}: n={} edges={} hypers={}",
        path.display(),
        program.n(),
        program.edges().len(),
        program.hypers().len()
    );
    Ok(program)
}

fn write_or_print(path: Option<&Path>, content: &str) -> Result<(), Error> {
    match path {
        Some(p) => std::fs::write(p, content)?,
        None => println!("{content}"),
    }
    Ok(())
}

fn cmd_certify(args: &CertifyArgs) -> Result<ExitCode, Error> {
    let program = load_problem(&args.problem)?;
    let outcome = if program.is_all_quadratic() && args.box_radius.is_none() {
        dominance::certify_quadratic(&program)?
    } else {
        let r = args.box_radius.or(program.box_radius()).ok_or_else(|| {
            Error::InvalidProgram(
                "sampled certification needs a box: pass --box or set B in the problem".into(),
            )
        })?;
        let bounds = vec![(-r, r); program.n()];
        dominance::certify_sampled(&program, &bounds, args.samples, None)?
    };
    match outcome {
        Certification::Granted(cert) => {
            let text = serde_json::to_string_pretty(&cert)?;
            write_or_print(args.certificate.as_deref(), &text)?;
            log::info!("certified: lambda={} K={}", cert.lambda, cert.k);
            Ok(ExitCode::SUCCESS)
        }
        Certification::Refused(r) => {
            eprintln!("certification refused: {}", r.reason);
            if let Some(required) = r.required_lambda {
                eprintln!("required contraction factor: {required}");
            }
            Ok(ExitCode::from(2))
        }
    }
}

fn load_certificate(path: &Path) -> Result<DominanceCertificate, Error> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Parse `sync`, `async`, or a script path into a concrete schedule.
fn build_schedule(args: &SolveArgs, n: usize) -> Result<Schedule, Error> {
    match args.schedule.as_str() {
        "sync" => Ok(Schedule::synchronous(n, args.horizon)),
        "async" => {
            Schedule::random_total_async(n, args.horizon, args.seed, args.window, args.lag_bound)
        }
        path => Schedule::from_script_json(&std::fs::read_to_string(path)?),
    }
}

/// Inject a `--B` override by rewriting the problem record, so the value
/// passes the same validation as a file-borne one.
fn override_box(program: &Program, b: f64) -> Result<Program, Error> {
    let mut value: serde_json::Value = serde_json::to_value(program)?;
    value["B"] = json!(b);
    Ok(serde_json::from_value(value)?)
}

fn max_abs_err(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

#[derive(Serialize)]
struct ScheduleSummary {
    kind: String,
    seed: Option<u64>,
    horizon: usize,
    window: Option<usize>,
    lag_bound: Option<usize>,
}

fn cmd_solve(args: &SolveArgs) -> Result<ExitCode, Error> {
    let mut program = load_problem(&args.problem)?;
    if let Some(b) = args.box_radius {
        program = override_box(&program, b)?;
    }
    let kind = match args.engine {
        EngineArg::Quadratic => EngineKind::Quadratic,
        EngineArg::Piecewise => {
            if program.box_radius().is_none() {
                return Err(Error::InvalidProgram(
                    "the piecewise engine needs a box: pass --B or set B in the problem".into(),
                ));
            }
            EngineKind::Piecewise { m: args.grid_m }
        }
        EngineArg::Hyper => {
            if program.hypers().is_empty() {
                return Err(Error::InvalidProgram(
                    "the hyper engine needs hyper factors; use --engine quadratic".into(),
                ));
            }
            EngineKind::Hyper
        }
    };

    let certificate = args.certificate.as_deref().map(load_certificate).transpose()?;
    let oracle: Option<SolveReport> = if args.oracle {
        Some(baselines::newton_solve(&program, &vec![0.0; program.n()], 1e-10)?)
    } else {
        None
    };

    // The per-iterate bound needs both the contraction certificate and the
    // minimizer, and applies to the exact-message engines only (grid
    // approximation error is outside the envelope's reach).
    let bound = match (&certificate, &oracle) {
        (Some(cert), Some(report)) if args.engine != EngineArg::Piecewise => {
            if program.hypers().is_empty() {
                let init = quadratic::init_messages(&program)?;
                Some(analysis::bound_params(&program, cert, &report.x, &init.messages)?)
            } else {
                Some(hyper::bound_params(&program, cert, &report.x)?)
            }
        }
        _ => None,
    };

    let schedule = build_schedule(args, program.n())?;
    let options = RunOptions { horizon: schedule.horizon(), tol: args.tol, bound };
    let trace = run_engine(kind, &program, &schedule, &options)?;

    if let Some(path) = &args.out_trace {
        trace.write_csv(path)?;
    }

    let last = trace.rows.last();
    let mut summary = json!({
        "engine": match args.engine {
            EngineArg::Quadratic => "quadratic",
            EngineArg::Piecewise => "piecewise",
            EngineArg::Hyper => "hyper",
        },
        "schedule": schedule_summary(args),
        "tol": args.tol,
        "iterations": last.map(|r| r.t).unwrap_or(0),
        "final": last.map(|r| r.estimate.clone()).unwrap_or_default(),
        "converged": trace.converged,
        "diverged": trace.diverged,
    });
    if let Some(m) = trace.grid_m {
        summary["grid_m"] = json!(m);
    }
    if let Some(cert) = &certificate {
        summary["certificate"] = json!({ "lambda": cert.lambda, "K": cert.k });
    }
    if let Some(report) = &oracle {
        summary["oracle"] = json!({
            "x": report.x,
            "converged": report.converged,
            "grad_norm": report.grad_norm,
        });
        summary["final_error"] =
            json!(last.map(|r| max_abs_err(&r.estimate, &report.x)).unwrap_or(f64::NAN));
        if bound.is_some() {
            summary["bound_ok"] = json!(bound_holds(&trace, &report.x));
        }
    }

    let text = serde_json::to_string_pretty(&summary)?;
    write_or_print(args.out_summary.as_deref(), &text)?;
    Ok(ExitCode::SUCCESS)
}

fn schedule_summary(args: &SolveArgs) -> ScheduleSummary {
    let random = args.schedule == "async";
    ScheduleSummary {
        kind: args.schedule.clone(),
        seed: random.then_some(args.seed),
        horizon: args.horizon,
        window: random.then_some(args.window),
        lag_bound: random.then_some(args.lag_bound),
    }
}

/// Every traced iterate sits inside the geometric envelope.
fn bound_holds(trace: &Trace, x_star: &[f64]) -> bool {
    trace.rows.iter().all(|row| match row.bound_value {
        Some(b) => max_abs_err(&row.estimate, x_star) <= b + 1e-9,
        None => true,
    })
}

#[derive(Copy, Clone, PartialEq, Eq)]
enum Solver {
    Minsum,
    Newton,
    Coordinate,
    Gradient,
}

impl Solver {
    fn parse(name: &str) -> Result<Solver, Error> {
        match name {
            "minsum" => Ok(Solver::Minsum),
            "newton" => Ok(Solver::Newton),
            "coordinate" => Ok(Solver::Coordinate),
            "gradient" => Ok(Solver::Gradient),
            other => Err(Error::InvalidProgram(format!(
                "unknown solver {other:?}: expected minsum, newton, coordinate, or gradient"
            ))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Solver::Minsum => "minsum",
            Solver::Newton => "newton",
            Solver::Coordinate => "coordinate",
            Solver::Gradient => "gradient",
        }
    }
}

const COMPARE_ACCURACY: f64 = 1e-8;

/// First trace time whose estimate is within `COMPARE_ACCURACY` of the
/// minimizer; `None` when the run never gets there.
fn iterations_to_accuracy(trace: &Trace, x_star: &[f64]) -> Option<usize> {
    trace
        .rows
        .iter()
        .find(|row| max_abs_err(&row.estimate, x_star) < COMPARE_ACCURACY)
        .map(|row| row.t)
}

fn cmd_compare(args: &CompareArgs) -> Result<ExitCode, Error> {
    let program = load_problem(&args.problem)?;
    let solvers: Vec<Solver> = args
        .solvers
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| Solver::parse(s.trim()))
        .collect::<Result<_, _>>()?;
    if solvers.is_empty() {
        return Err(Error::InvalidProgram("empty solver list".into()));
    }
    if args.seeds == 0 {
        return Err(Error::InvalidProgram("need at least one seed".into()));
    }

    let oracle = baselines::newton_solve(&program, &vec![0.0; program.n()], 1e-12)?;
    if !oracle.converged {
        return Err(Error::NumericFailure(format!(
            "oracle solve stalled at gradient norm {}",
            oracle.grad_norm
        )));
    }
    let x_star = oracle.x.clone();
    let options = RunOptions { horizon: args.horizon, tol: 1e-12, bound: None };
    let alpha = baselines::default_step_size(&program)?;

    let mut columns: Vec<Vec<Option<usize>>> = vec![Vec::new(); solvers.len()];
    for seed in 0..args.seeds {
        let schedule = Schedule::random_total_async(
            program.n(),
            args.horizon,
            seed,
            args.window,
            args.lag_bound,
        )?;
        for (c, solver) in solvers.iter().enumerate() {
            let entry = match solver {
                Solver::Newton => {
                    // Newton is schedule-free; the column repeats per seed.
                    let r = baselines::newton_solve(&program, &vec![0.0; program.n()], 1e-10)?;
                    (r.converged && max_abs_err(&r.x, &x_star) < COMPARE_ACCURACY)
                        .then_some(r.iterations)
                }
                Solver::Minsum => {
                    let kind = if program.hypers().is_empty() {
                        EngineKind::Quadratic
                    } else {
                        EngineKind::Hyper
                    };
                    let trace = run_engine(kind, &program, &schedule, &options)?;
                    iterations_to_accuracy(&trace, &x_star)
                }
                Solver::Coordinate => {
                    let trace =
                        baselines::coordinate_descent_async(&program, &schedule, &options)?;
                    iterations_to_accuracy(&trace, &x_star)
                }
                Solver::Gradient => {
                    let trace =
                        baselines::gradient_descent_async(&program, &schedule, alpha, &options)?;
                    iterations_to_accuracy(&trace, &x_star)
                }
            };
            columns[c].push(entry);
        }
    }

    let mut out = String::new();
    out.push_str("seed");
    for s in &solvers {
        out.push(',');
        out.push_str(s.name());
    }
    out.push('\n');
    for seed in 0..args.seeds as usize {
        out.push_str(&seed.to_string());
        for col in &columns {
            out.push(',');
            out.push_str(&cell(col[seed]));
        }
        out.push('\n');
    }
    out.push_str("median");
    for col in &columns {
        out.push(',');
        out.push_str(&median_cell(col));
    }
    out.push('\n');

    write_or_print(args.out.as_deref(), out.trim_end())?;
    Ok(ExitCode::SUCCESS)
}

fn cell(entry: Option<usize>) -> String {
    match entry {
        Some(it) => it.to_string(),
        None => "\u{2014}".into(),
    }
}

/// Median of the converged entries; em dash when none converged.
fn median_cell(col: &[Option<usize>]) -> String {
    let mut vals: Vec<usize> = col.iter().flatten().copied().collect();
    if vals.is_empty() {
        return "\u{2014}".into();
    }
    vals.sort_unstable();
    let mid = vals.len() / 2;
    let median = if vals.len() % 2 == 1 {
        vals[mid] as f64
    } else {
        (vals[mid - 1] + vals[mid]) as f64 / 2.0
    };
    if median.fract() == 0.0 {
        format!("{}", median as usize)
    } else {
        format!("{median}")
    }
}
