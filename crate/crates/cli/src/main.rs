use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use broyden_lm::io::{load_runspec, write_report, ModelSpec, ReportFormat, RunSpec};
use broyden_lm::model::protocol;
use broyden_lm::{
    fd_jacobian, DatasetModel, ExternalEvaluator, FdConfig, FdScheme, IterationRecord, Matrix,
    ResidualEvaluator, RunReport, Solver, Status,
};

const EXIT_CONFIG: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_EVALUATOR: u8 = 3;

#[derive(Parser)]
#[command(name = "broyden-lm", version, about = "Derivative-free nonlinear least-squares fitting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model described by a run specification.
    Fit {
        #[arg(long)]
        spec: PathBuf,
        /// Write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Print every iteration as it completes.
        #[arg(short, long)]
        verbose: bool,
    },
    /// Fit, then compare the final Broyden matrix with a finite-difference Jacobian.
    CheckJacobian {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, value_enum, default_value_t = Scheme::Central)]
        scheme: Scheme,
    },
    /// Answer evaluator-protocol requests on stdin/stdout for the spec's analytic model.
    ServeModel {
        #[arg(long)]
        spec: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    Central,
    Forward,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Fit {
            spec,
            out,
            format,
            verbose,
        } => cmd_fit(&spec, out.as_deref(), format, verbose),
        Command::CheckJacobian { spec, scheme } => cmd_check_jacobian(&spec, scheme),
        Command::ServeModel { spec } => cmd_serve_model(&spec),
    };
    ExitCode::from(code)
}

fn config_error(e: impl std::fmt::Display) -> u8 {
    eprintln!("error: {e}");
    EXIT_CONFIG
}

fn exit_code(status: Status) -> u8 {
    match status {
        Status::Converged => 0,
        Status::MaxIterations | Status::LineSearchFloor => EXIT_NOT_CONVERGED,
        Status::EvaluatorFailure => EXIT_EVALUATOR,
    }
}

fn evaluator_for(spec: &RunSpec) -> Box<dyn ResidualEvaluator<f64>> {
    match &spec.model {
        ModelSpec::Analytic { .. } => Box::new(spec.dataset_model().expect("validated when loaded")),
        ModelSpec::External(ext) => Box::new(ExternalEvaluator::new(ext.clone())),
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
    format!("[{}]", items.join(", "))
}

fn print_record(r: &IterationRecord<f64>) {
    println!(
        "k={} objective={:e} lambda={:e} alpha={} p_norm={:e} armijo={} evaluations={} beta={}",
        r.k,
        r.objective,
        r.lambda,
        r.alpha,
        r.p_norm,
        r.armijo_satisfied,
        r.evaluations,
        fmt_vec(&r.beta)
    );
}

fn print_summary(report: &RunReport<f64>) {
    println!(
        "status={} iterations={} objective={:e} evaluations={} beta={}",
        report.status,
        report.iterations.len(),
        report.final_objective,
        report.evaluation_count,
        fmt_vec(report.final_beta.values())
    );
    if let Some(f) = &report.failure {
        eprintln!(
            "evaluator failure ({}) in iteration {}: {}",
            f.error.category(),
            f.iteration,
            f.error
        );
    }
}

/// Loads the spec and runs the optimizer. `Err` carries an exit code.
fn run_fit(
    path: &Path,
    verbose: bool,
) -> Result<(RunSpec, Box<dyn ResidualEvaluator<f64>>, RunReport<f64>), u8> {
    let spec = load_runspec(path).map_err(config_error)?;
    let beta0 = spec.initial_parameters().map_err(config_error)?;
    let weights = match &spec.model {
        ModelSpec::Analytic { dataset, .. } => spec.weight_matrix(dataset.len()).map_err(config_error)?,
        ModelSpec::External(_) => None,
    };
    let solver = Solver::new(spec.solver.clone())
        .map_err(config_error)?
        .with_weights(weights);
    let mut evaluator = evaluator_for(&spec);
    let report = if verbose {
        solver.run_observed(&mut *evaluator, &beta0, &mut print_record)
    } else {
        solver.run(&mut *evaluator, &beta0)
    }
    .map_err(config_error)?;
    Ok((spec, evaluator, report))
}

fn cmd_fit(path: &Path, out: Option<&Path>, format: Format, verbose: bool) -> u8 {
    let (_, _, report) = match run_fit(path, verbose) {
        Ok(r) => r,
        Err(code) => return code,
    };
    print_summary(&report);
    if let Some(out) = out {
        let format = match format {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::CsvTrace,
        };
        if let Err(e) = write_report(&report, out, format) {
            return config_error(e);
        }
    }
    exit_code(report.status)
}

/// `‖a − b‖ / ‖b‖`, or `‖a‖` when `b` vanishes.
fn discrepancy(a: &[f64], b: &[f64]) -> (f64, bool) {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if scale > 0.0 {
        (diff / scale, true)
    } else {
        (diff, false)
    }
}

fn print_discrepancy(label: &str, (value, relative): (f64, bool)) {
    let kind = if relative { "relative" } else { "absolute" };
    println!("{label}: {value:e} ({kind})");
}

fn cmd_check_jacobian(path: &Path, scheme: Scheme) -> u8 {
    let (spec, mut evaluator, report) = match run_fit(path, false) {
        Ok(r) => r,
        Err(code) => return code,
    };
    print_summary(&report);
    if report.status == Status::EvaluatorFailure {
        return EXIT_EVALUATOR;
    }
    let b: Matrix<f64> = match &report.broyden {
        Some(b) => b.clone(),
        None => return config_error("run finished without a Jacobian estimate"),
    };
    let fd = FdConfig {
        scheme: match scheme {
            Scheme::Central => FdScheme::Central,
            Scheme::Forward => FdScheme::Forward,
        },
        ..spec.solver.fd.clone()
    };
    let j = match fd_jacobian(&mut *evaluator, &report.final_beta, &fd) {
        Ok(j) => j,
        Err(e) => {
            eprintln!("error: finite-difference Jacobian failed: {e}");
            return EXIT_EVALUATOR;
        }
    };
    for c in 0..j.cols() {
        print_discrepancy(&format!("column {}", c + 1), discrepancy(&b.column(c), &j.column(c)));
    }
    print_discrepancy("frobenius", discrepancy(b.as_slice(), j.as_slice()));
    match &report.last_secant_step {
        Some(s) => print_discrepancy("secant direction", discrepancy(&b.mul_vec(s), &j.mul_vec(s))),
        None => println!("secant direction: none (no secant update in effect)"),
    }
    0
}

fn cmd_serve_model(path: &Path) -> u8 {
    let spec = match load_runspec(path) {
        Ok(s) => s,
        Err(e) => return config_error(e),
    };
    let Some(mut model): Option<DatasetModel<f64>> = spec.dataset_model() else {
        return config_error("serve-model needs an analytic model with a dataset");
    };
    let stdin = io::stdin();
    let mut stdout = BufWriter::new(io::stdout().lock());
    let served = protocol::serve(stdin.lock(), &mut stdout, &mut model);
    let _ = stdout.flush();
    match served {
        Ok(n) => {
            log::info!("served {n} requests");
            0
        }
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => 0,
        Err(e) => config_error(e),
    }
}
