//! `slqheat`: runs refinement studies, gradient-descent studies and backend
//! cross-checks from a JSON config and writes a CSV report plus a JSON
//! sidecar.

mod report;

use clap::{Args, Parser, Subcommand};
use slqheat_core::experiment::{run_experiment, ExperimentConfig, ExperimentId};
use slqheat_core::SlqError;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_ACCEPTANCE: u8 = 3;

#[derive(Parser)]
#[command(name = "slqheat", version = env!("SLQHEAT_GIT_DESCRIBE"), about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Refinement ladder with fitted convergence orders.
    Rates(RunArgs),
    /// Gradient descent against the Riccati optimum.
    Gd(RunArgs),
    /// Exact, tree and regression backward backends against each other.
    Crosscheck(RunArgs),
    /// Print the resolved config.
    Describe(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output path; the sidecar goes next to it with a `.json` extension.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<SlqError> for Failure {
    fn from(e: SlqError) -> Self {
        match e {
            SlqError::Config(m) => Failure::Config(m),
            other => Failure::Run(other.to_string()),
        }
    }
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = Some(seed);
    }
    Ok(cfg)
}

fn check_subcommand(command: &Command, id: ExperimentId) -> Result<(), Failure> {
    use ExperimentId::*;
    let ok = match command {
        Command::Rates(_) => !matches!(id, GdContraction | OracleCrosscheck),
        Command::Gd(_) => id == GdContraction,
        Command::Crosscheck(_) => id == OracleCrosscheck,
        Command::Describe(_) => true,
    };
    if ok {
        Ok(())
    } else {
        let id = serde_json::to_string(&id).unwrap();
        Err(Failure::Config(format!("experiment {id} cannot be run by this subcommand")))
    }
}

fn default_out(cfg: &ExperimentConfig) -> PathBuf {
    match &cfg.output {
        Some(p) => PathBuf::from(p),
        None => PathBuf::from(format!("{}.csv", serde_json::to_string(&cfg.experiment).unwrap().trim_matches('"'))),
    }
}

fn run(command: Command) -> Result<bool, Failure> {
    let args = match &command {
        Command::Rates(a) | Command::Gd(a) | Command::Crosscheck(a) | Command::Describe(a) => a,
    };
    let cfg = load_config(args)?;
    check_subcommand(&command, cfg.experiment)?;
    if let Command::Describe(_) = command {
        println!("{}", serde_json::to_string_pretty(&cfg).unwrap());
        return Ok(true);
    }
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::Run(e.to_string()))?;
    }
    let out = args.out.clone().unwrap_or_else(|| default_out(&cfg));
    let start = Instant::now();
    let outcome = run_experiment(&cfg)?;
    let wall_clock = start.elapsed().as_secs_f64();
    let passed = outcome.passed();
    let rows = report::rows(&cfg, &outcome);
    write_atomic(&out, &report::csv_bytes(&rows).map_err(|e| Failure::Run(e.to_string()))?)?;
    let sidecar = report::Sidecar {
        version: env!("SLQHEAT_GIT_DESCRIBE"),
        config: &cfg,
        wall_clock_seconds: wall_clock,
        threads: rayon::current_num_threads(),
        passed,
        outcome: &outcome,
    };
    let json = serde_json::to_vec_pretty(&sidecar).map_err(|e| Failure::Run(e.to_string()))?;
    write_atomic(&out.with_extension("json"), &json)?;
    for line in report::summary(&outcome) {
        eprintln!("{line}");
    }
    Ok(passed)
}

/// Writes to a temporary file in the target directory and renames it over
/// `path`.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let fail = |e: std::io::Error| Failure::Run(format!("cannot write {}: {e}", path.display()));
    std::fs::create_dir_all(dir).map_err(fail)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("acceptance check failed");
            ExitCode::from(EXIT_ACCEPTANCE)
        }
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
