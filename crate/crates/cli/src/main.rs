//! `twinsched`: forecast, mine, simulate and report from the command line.
//!
//! Exit codes: 0 success, 2 config error, 3 input-data error, 4 simulation
//! invariant violation.

mod config;
mod error;
mod forecast;
mod mine;
mod report;
mod simulate;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_override, Key, RunConfig};
use error::{CliError, Result};

#[derive(Parser)]
#[command(name = "twinsched", version, about = "Fault-tolerant digital-twin scheduling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` file; flags and --set override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any documented key, as KEY=VALUE. Repeatable.
    #[arg(long = "set", value_parser = parse_override)]
    set: Vec<(String, String)>,
    /// Print the documented keys and defaults, then exit.
    #[arg(long)]
    print_keys: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Federated forecaster training: per-round metrics and a checkpoint.
    Forecast {
        #[command(flatten)]
        common: Common,
        /// `simifed` or `fed`.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        trace: Option<PathBuf>,
        /// `synthetic` or `pair-outlier`.
        #[arg(long)]
        generator: Option<String>,
    },
    /// Fault-pattern mining over a minimum-support sweep.
    Mine {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tdtdb: Option<PathBuf>,
        #[arg(long = "minsup-sweep")]
        minsup_sweep: Option<String>,
    },
    /// Scheduling simulation over a size × horizon × mode grid.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        modes: Option<String>,
        #[arg(long)]
        sizes: Option<String>,
        #[arg(long)]
        horizons: Option<String>,
        #[arg(long = "minsup-sweep")]
        minsup_sweep: Option<String>,
    },
    /// Markdown summary of a finished simulate run.
    Report {
        /// Output directory of a simulate run.
        run_dir: PathBuf,
    },
}

fn push(overrides: &mut Vec<(String, String)>, key: &str, value: Option<String>) {
    if let Some(v) = value {
        overrides.push((key.to_string(), v));
    }
}

/// Resolves the config, prepares the output directory and archives the
/// resolved keys there before any work starts.
fn prepare(keys: &[Key], common: Common, extra: Vec<(String, String)>) -> Result<Option<(RunConfig, PathBuf)>> {
    if common.print_keys {
        print!("{}", config::describe(keys));
        return Ok(None);
    }
    // File, then --set, then dedicated flags.
    let mut ordered = common.set;
    push(&mut ordered, "seed", common.seed.map(|s| s.to_string()));
    push(&mut ordered, "out", common.out.map(|p| p.display().to_string()));
    ordered.extend(extra);
    let cfg = RunConfig::resolve(keys, common.config.as_deref(), &ordered)?;
    let out = PathBuf::from(cfg.raw("out"));
    std::fs::create_dir_all(&out).map_err(CliError::io(&out))?;
    cfg.write(&out)?;
    Ok(Some((cfg, out)))
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Forecast {
            common,
            mode,
            trace,
            generator,
        } => {
            let mut extra = Vec::new();
            push(&mut extra, "mode", mode);
            push(&mut extra, "trace", trace.map(|p| p.display().to_string()));
            push(&mut extra, "generator", generator);
            run_with(forecast::KEYS, common, extra, forecast::run)
        }
        Command::Mine {
            common,
            tdtdb,
            minsup_sweep,
        } => {
            let mut extra = Vec::new();
            push(&mut extra, "tdtdb", tdtdb.map(|p| p.display().to_string()));
            push(&mut extra, "minsup_sweep", minsup_sweep);
            run_with(mine::KEYS, common, extra, mine::run)
        }
        Command::Simulate {
            common,
            modes,
            sizes,
            horizons,
            minsup_sweep,
        } => {
            let mut extra = Vec::new();
            push(&mut extra, "modes", modes);
            push(&mut extra, "sizes", sizes);
            push(&mut extra, "horizons", horizons);
            push(&mut extra, "minsup_sweep", minsup_sweep);
            run_with(simulate::KEYS, common, extra, simulate::run)
        }
        Command::Report { run_dir } => report::run(&run_dir),
    }
}

fn run_with(
    keys: &[Key],
    common: Common,
    extra: Vec<(String, String)>,
    body: fn(&RunConfig, &Path) -> Result<()>,
) -> Result<()> {
    match prepare(keys, common, extra)? {
        Some((cfg, out)) => body(&cfg, &out),
        None => Ok(()),
    }
}

/// Writes rows (header first) as CSV.
pub(crate) fn write_csv(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(CliError::io(path))
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("twinsched: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
