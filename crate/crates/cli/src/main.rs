use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use netcal_cli::commands::{self, Overrides};
use netcal_cli::CliError;

#[derive(Debug, Parser)]
#[command(name = "netcal", version, about = "Calibrate low-cost sensor networks against reference instruments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// observations.csv to use instead of the configured scenario.
    #[arg(long, global = true, value_name = "PATH")]
    data: Option<PathBuf>,

    /// chains.csv from an earlier `calibrate` run.
    #[arg(long, global = true, value_name = "PATH")]
    chains: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Overrides the configured number of HMC chains.
    #[arg(long = "chains-n", global = true, value_name = "N")]
    chains_n: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with ground truth.
    Simulate,
    /// Sample sensor weights and summarize them.
    Calibrate,
    /// Predict the field at the configured query points.
    Predict,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ov = Overrides {
        data: cli.data,
        chains: cli.chains,
        out: cli.out,
        seed: cli.seed,
        chains_n: cli.chains_n,
    };
    let cfg = commands::resolve_config(cli.config.as_deref(), &ov)?;
    match cli.command {
        Command::Simulate => commands::cmd_simulate(&cfg)?,
        Command::Calibrate => commands::cmd_calibrate(&cfg)?,
        Command::Predict => {
            let chains = ov
                .chains
                .ok_or_else(|| CliError::Config("predict needs --chains PATH".into()))?;
            commands::cmd_predict(&cfg, &chains)?
        }
    };
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NETCAL_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("netcal: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
