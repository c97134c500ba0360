//! `focp` command-line driver.
//!
//! Exit codes: 0 converged, 1 bad flags or invalid configuration, 2 solver
//! stopped without converging, 3 evaluation failure.

mod config;

use clap::{Args, Parser, Subcommand};
use config::Settings;
use focp::bench::{convergence_study, run_example, BenchError, Derivatives, ExampleId, Formulation};
use focp::fracint::{FracIntegrationMatrix, Scheme};
use focp::nlp::{iteration_log_csv, SolverOptions, Status};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const DEFAULT_ALPHA: f64 = 0.5;
const DEFAULT_N: usize = 100;

#[derive(Parser, Debug)]
#[command(name = "focp", version, about = "Direct transcription solver for fractional optimal control problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve a built-in example and write the trajectory as CSV.
    Solve(RunFlags),
    /// Write a fractional integration matrix as CSV.
    Matrix(RunFlags),
    /// Solve example 1 on several meshes and report error norms and slopes.
    Study(RunFlags),
}

/// Flags shared by every subcommand; each one overrides the same key in `--config`.
#[derive(Args, Debug, Default)]
struct RunFlags {
    /// Flat JSON object with the same keys as the flags (underscores for dashes).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Example id: 1, 2, 3 or 4.
    #[arg(long)]
    example: Option<String>,
    /// gl, tr or si [default: tr]
    #[arg(long)]
    scheme: Option<String>,
    /// Fractional order in (0, 1] [default: 0.5]
    #[arg(long)]
    alpha: Option<f64>,
    /// Number of intervals [default: 100]
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated mesh sizes for `study`.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    ns: Option<Vec<usize>>,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Per-iteration solver log (CSV).
    #[arg(long)]
    log: Option<PathBuf>,
    /// KKT residual tolerance [default: 1e-10]
    #[arg(long)]
    kkt_tol: Option<f64>,
    #[arg(long)]
    max_outer: Option<usize>,
    #[arg(long)]
    max_inner: Option<usize>,
    /// full or reduced [default: per example]
    #[arg(long)]
    formulation: Option<String>,
    /// analytic or fd [default: analytic]
    #[arg(long)]
    derivatives: Option<String>,
    /// Parallel solves for `study` [default: 1]
    #[arg(long)]
    workers: Option<usize>,
}

impl RunFlags {
    fn settings(&self) -> Result<Settings, Failure> {
        let flags = Settings {
            example: self.example.clone(),
            scheme: self.scheme.clone(),
            alpha: self.alpha,
            n: self.n,
            ns: self.ns.clone(),
            output: self.output.clone(),
            log: self.log.clone(),
            kkt_tol: self.kkt_tol,
            max_outer: self.max_outer,
            max_inner: self.max_inner,
            formulation: self.formulation.clone(),
            derivatives: self.derivatives.clone(),
            workers: self.workers,
        };
        match &self.config {
            Some(path) => Ok(flags.or(Settings::from_file(path).map_err(Failure::Usage)?)),
            None => Ok(flags),
        }
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    NotConverged,
    Eval(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::NotConverged => 2,
            Failure::Eval(_) => 3,
        }
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Eval(_) => Failure::Eval(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

fn scheme_of(s: &Settings) -> Result<Scheme, Failure> {
    s.scheme.as_deref().unwrap_or("tr").parse().map_err(Failure::Usage)
}

fn alpha_of(s: &Settings) -> Result<f64, Failure> {
    let alpha = s.alpha.unwrap_or(DEFAULT_ALPHA);
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Failure::Usage(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    Ok(alpha)
}

fn example_of(s: &Settings) -> Result<ExampleId, Failure> {
    let raw = s.example.as_deref().ok_or_else(|| Failure::Usage("--example is required".into()))?;
    raw.parse().map_err(|e: focp::bench::UnknownExample| Failure::Usage(e.to_string()))
}

fn options_of(s: &Settings) -> Result<SolverOptions<f64>, Failure> {
    let mut opts = SolverOptions::default();
    if let Some(tol) = s.kkt_tol {
        if !(tol > 0.0) {
            return Err(Failure::Usage(format!("kkt_tol must be positive, got {tol}")));
        }
        opts.kkt_tol = tol;
    }
    if let Some(k) = s.max_outer {
        opts.max_outer_iters = k;
    }
    if let Some(k) = s.max_inner {
        opts.max_inner_iters = k;
    }
    Ok(opts)
}

fn derivatives_of(s: &Settings) -> Result<Derivatives, Failure> {
    match s.derivatives.as_deref().unwrap_or("analytic") {
        "analytic" => Ok(Derivatives::Analytic),
        "fd" | "finite-difference" => Ok(Derivatives::FiniteDifference),
        other => Err(Failure::Usage(format!("unknown derivatives {other:?}, expected analytic or fd"))),
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Usage(format!("cannot write to standard output: {e}"))),
    }
}

/// Summary goes to standard output, or to standard error when the CSV does.
fn report(to_stdout: bool, line: &str) {
    if to_stdout {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
}

fn cmd_solve(s: &Settings) -> Result<(), Failure> {
    let id = example_of(s)?;
    let scheme = scheme_of(s)?;
    let alpha = alpha_of(s)?;
    let n = s.n.unwrap_or(DEFAULT_N);
    let opts = options_of(s)?;
    let derivatives = derivatives_of(s)?;
    let formulation = match &s.formulation {
        Some(f) => f.parse::<Formulation>().map_err(Failure::Usage)?,
        None => id.formulation(),
    };
    let run = run_example(id, scheme, alpha, n, &opts, derivatives, formulation)?;
    write_output(s.output.as_deref(), &run.solution_csv())?;
    if let Some(log) = &s.log {
        write_output(Some(log), &iteration_log_csv(&run.solution.history))?;
    }
    let sol = &run.solution;
    report(
        s.output.is_some(),
        &format!(
            "J_n={} t_f={} kkt={:.3e} iterations={} status={:?}",
            run.objective, run.final_time, sol.kkt_residual, sol.iterations, sol.status
        ),
    );
    if let Some(err) = &sol.error {
        return Err(Failure::Eval(err.to_string()));
    }
    match sol.status {
        Status::Converged => Ok(()),
        Status::Infeasible => Err(Failure::Eval("evaluation failed at the initial guess".into())),
        Status::MaxIters | Status::LineSearchFailure => Err(Failure::NotConverged),
    }
}

fn cmd_matrix(s: &Settings) -> Result<(), Failure> {
    let scheme = scheme_of(s)?;
    let alpha = alpha_of(s)?;
    let n = s.n.unwrap_or(DEFAULT_N);
    let m = FracIntegrationMatrix::<f64>::new(scheme, alpha, n).map_err(|e| Failure::Usage(e.to_string()))?;
    write_output(s.output.as_deref(), &m.to_csv())
}

fn cmd_study(s: &Settings) -> Result<(), Failure> {
    let id = match &s.example {
        Some(_) => example_of(s)?,
        None => ExampleId::Ex1Exact,
    };
    let scheme = scheme_of(s)?;
    let alpha = alpha_of(s)?;
    let ns = s.ns.clone().unwrap_or_default();
    let opts = options_of(s)?;
    let workers = s.workers.unwrap_or(1);
    if workers == 0 {
        return Err(Failure::Usage("workers must be at least 1".into()));
    }
    let study = convergence_study(id, scheme, alpha, &ns, &opts, workers)?;
    write_output(s.output.as_deref(), &study.to_csv())?;
    report(
        s.output.is_some(),
        &format!("slope_u={} slope_x={} meshes={}", study.slope_u, study.slope_x, study.rows.len()),
    );
    match study.failed_at {
        None => Ok(()),
        Some(n) => {
            eprintln!("solve at n = {n} did not converge; later meshes skipped");
            Err(Failure::NotConverged)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Solve(flags) => flags.settings().and_then(|s| cmd_solve(&s)),
        Command::Matrix(flags) => flags.settings().and_then(|s| cmd_matrix(&s)),
        Command::Study(flags) => flags.settings().and_then(|s| cmd_study(&s)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(msg) => eprintln!("error: {msg}\n\nRun `focp --help` for usage."),
                Failure::Eval(msg) => eprintln!("error: {msg}"),
                Failure::NotConverged => {}
            }
            ExitCode::from(f.code())
        }
    }
}
