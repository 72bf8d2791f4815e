//! `drdb`: debiased Bayesian treatment-effect estimates and simulation
//! campaigns from the command line.

mod report;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drdb::bench::{self, SimulationConfig};
use drdb::data::{load_csv, CsvOptions};
use drdb::nuisance::{NuisanceMethod, OracleNuisance};
use drdb::{EstimandSpec, RunConfig};
use serde::de::DeserializeOwned;

const THREADS_ENV: &str = "DRDB_THREADS";

#[derive(Parser, Debug)]
#[command(name = "drdb", version, about = "Doubly robust debiased Bayesian treatment-effect inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Posterior for a treatment-effect estimand on a `y,t,x1..xp` CSV.
    Estimate(EstimateArgs),
    /// Monte Carlo campaign over synthetic designs, written as a metrics CSV.
    Simulate(SimulateArgs),
    /// Formats a metrics CSV as a table.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[arg(long)]
    data: PathBuf,
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// ate, att, atc, mu1, mu0 or subgroup:xJ>DELTA (also <=).
    #[arg(long)]
    estimand: Option<String>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// `ridge`, or `oracle:<file>` with the true nuisances as JSON.
    #[arg(long)]
    nuisance: Option<String>,
    /// Include the aggregated posterior draws in the output.
    #[arg(long)]
    keep_draws: bool,
    #[arg(long)]
    threads: Option<usize>,
    /// Output JSON path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Output CSV path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    metrics: PathBuf,
    #[arg(long)]
    markdown: bool,
    /// Decimal places for the metric columns.
    #[arg(long, default_value_t = 4)]
    digits: usize,
}

/// A failed command; the variant decides the exit code.
#[derive(Debug)]
enum Failure {
    Invalid(String),
    Estimation(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 2,
            Failure::Estimation(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Invalid(m) | Failure::Estimation(m) => m,
        }
    }
}

impl From<drdb::Error> for Failure {
    fn from(e: drdb::Error) -> Self {
        if e.is_validation() {
            Failure::Invalid(e.to_string())
        } else {
            Failure::Estimation(e.to_string())
        }
    }
}

type CmdResult = Result<(), Failure>;

fn invalid(msg: impl std::fmt::Display) -> Failure {
    Failure::Invalid(msg.to_string())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

/// Explicit flag, else `DRDB_THREADS`, else the config value.
fn resolve_threads(flag: Option<usize>, config: Option<usize>) -> Result<Option<usize>, Failure> {
    let threads = match flag {
        Some(t) => Some(t),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| invalid(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?,
            ),
            Err(_) => config,
        },
    };
    if threads == Some(0) {
        return Err(invalid("threads must be at least 1"));
    }
    Ok(threads)
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Failure::Estimation(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Opens `path`, or standard output for `None`.
fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => {
            Box::new(BufWriter::new(File::create(p).map_err(|e| Failure::Estimation(format!("{}: {e}", p.display())))?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_failed(e: impl std::fmt::Display) -> Failure {
    Failure::Estimation(format!("write failed: {e}"))
}

/// Switches the nuisance method, keeping the other nuisance settings.
fn apply_nuisance(cfg: &mut RunConfig, spec: &str) -> CmdResult {
    let (method, truth) = match spec.split_once(':') {
        None if spec == "ridge" => (NuisanceMethod::Ridge, None),
        Some(("oracle", path)) if !path.is_empty() => {
            (NuisanceMethod::Oracle, Some(read_json::<OracleNuisance>(Path::new(path))?))
        }
        _ => return Err(invalid(format!("--nuisance must be `ridge` or `oracle:<file>`, got {spec:?}"))),
    };
    cfg.nuisance.method = method;
    cfg.nuisance.truth = truth;
    Ok(())
}

fn cmd_estimate(args: EstimateArgs) -> CmdResult {
    let mut cfg: RunConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => RunConfig::default(),
    };
    if let Some(e) = &args.estimand {
        cfg.estimand = e.parse::<EstimandSpec>()?;
    }
    if let Some(k) = args.folds {
        cfg.k = k;
    }
    if let Some(m) = args.draws {
        cfg.m_draws = m;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if let Some(n) = &args.nuisance {
        apply_nuisance(&mut cfg, n)?;
    }
    cfg.keep_draws |= args.keep_draws;

    let data = load_csv(&args.data, &CsvOptions::default())?;
    cfg.validate(data.p())?;
    let threads = resolve_threads(args.threads, None)?;
    let summary = with_threads(threads, || drdb::drdb::run(&data, &cfg))??;

    let mut out = output(args.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &summary).map_err(write_failed)?;
    writeln!(out).and_then(|_| out.flush()).map_err(write_failed)
}

fn cmd_simulate(args: SimulateArgs) -> CmdResult {
    let mut cfg: SimulationConfig = read_json(&args.config)?;
    if let Some(r) = args.reps {
        cfg.reps = r;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.threads = resolve_threads(args.threads, cfg.threads)?;
    cfg.validate()?;

    let rows = bench::run_simulation(&cfg)?;
    for row in rows.iter().filter(|r| r.flagged()) {
        eprintln!(
            "warning: {} failed on {} of {} replications (n={}, p={}, s={})",
            row.method, row.failures, row.reps, row.n, row.p, row.s
        );
    }
    let mut out = output(args.out.as_deref())?;
    bench::write_metrics(&mut out, &rows)?;
    out.flush().map_err(write_failed)
}

fn cmd_report(args: ReportArgs) -> CmdResult {
    let file = File::open(&args.metrics).map_err(|e| invalid(format!("{}: {e}", args.metrics.display())))?;
    let rows = bench::read_metrics(file)?;
    let style = if args.markdown { report::Style::Markdown } else { report::Style::Plain };
    let mut out = io::stdout().lock();
    out.write_all(report::render(&rows, style, args.digits).as_bytes()).map_err(write_failed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.message());
            ExitCode::from(f.code())
        }
    }
}
