use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use semiclassical_ir::config::{RunConfig, SweepConfig};
use semiclassical_ir::experiment;
use semiclassical_ir::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "scir", version, about = "Linear IR response by quantum and semiclassical methods")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one configuration and write CSV plus JSON record.
    Run(RunArgs),
    /// Run every method and sample count of a sweep configuration.
    Sweep(RunArgs),
    /// Run the fast invariant checks.
    Selftest,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output CSV (run) or directory (sweep); overrides the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; does not change results.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed_override: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(&args),
        Command::Sweep(args) => sweep(&args),
        Command::Selftest => selftest(),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        e if e.is_config() => EXIT_CONFIG,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Format(_) => EXIT_FAILURE,
        _ => EXIT_NUMERICAL,
    }
}

fn read_config(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn run(args: &RunArgs) -> Result<u8, Error> {
    let mut cfg = RunConfig::from_toml(&read_config(&args.config)?)?;
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(s) = args.seed_override {
        cfg.seed = s;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| Error::Config("no output path: set `output` or pass --out".into()))?;
    cfg.output = Some(out.clone());
    let record = experiment::run(&cfg, &out)?;
    if let Some(d) = &record.diagnostics.estimator {
        if d.escaped_warning {
            eprintln!(
                "warning: {} of {} samples rejected",
                record.metadata.rejected, record.metadata.n_samples
            );
        }
    }
    println!(
        "{} {} points -> {} ({:.1} s)",
        record.method,
        record.n_points,
        out.display(),
        record.diagnostics.timing.wall_clock_seconds
    );
    Ok(0)
}

fn sweep(args: &RunArgs) -> Result<u8, Error> {
    let mut cfg = SweepConfig::from_toml(&read_config(&args.config)?)?;
    if let Some(w) = args.workers {
        cfg.base.insert("workers".into(), (w as i64).into());
    }
    if let Some(s) = args.seed_override {
        cfg.base.insert("seed".into(), (s as i64).into());
    }
    cfg.validate()?;
    let dir = args
        .out
        .clone()
        .or_else(|| cfg.sweep.output.clone())
        .ok_or_else(|| Error::Config("no output directory: set sweep.output or pass --out".into()))?;
    let cells = experiment::sweep(&cfg, &dir)?;
    let mut failed = false;
    for c in &cells {
        println!("{} {}: {}", c.method, c.n_samples, c.status);
        failed |= c.status != "ok";
    }
    Ok(if failed { EXIT_NUMERICAL } else { 0 })
}

fn selftest() -> Result<u8, Error> {
    let mut failed = false;
    for r in experiment::selftest() {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        failed |= !r.passed;
    }
    Ok(if failed { EXIT_NUMERICAL } else { 0 })
}
