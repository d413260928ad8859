use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use regime_alloc_cli::{commands, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "regime-alloc", version, about = "Regime-switching asset allocation")]
struct Cli {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured output directory.
    #[arg(short, long, global = true)]
    output_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic planted-regime dataset.
    Simulate,
    /// Select jump penalties and smoothing halflives.
    Tune,
    /// Backtest all configured strategies.
    Backtest,
    /// Recompute metrics from the daily files of a finished backtest.
    Report,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let mut c = RunConfig::default();
            c.resolve_paths(&std::env::current_dir()?);
            c
        }
    };
    if let Some(dir) = cli.output_dir {
        cfg.output_dir = std::path::absolute(dir)?;
    }
    match cli.command {
        Command::Simulate => print!("{}", commands::simulate(&cfg)?.summary()),
        Command::Tune => {
            let out = commands::tune(&cfg)?;
            print!("{}", out.summary());
            println!("wrote {}", cfg.output_dir.join(commands::LAMBDA_HISTORY_FILE).display());
        }
        Command::Backtest => {
            let out = commands::backtest(&cfg)?;
            let report = commands::ReportOutput { metrics: out.metrics() };
            print!("{}", report.table());
            println!("wrote {}", cfg.output_dir.join(commands::METRICS_FILE).display());
        }
        Command::Report => print!("{}", commands::report(&cfg)?.table()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
