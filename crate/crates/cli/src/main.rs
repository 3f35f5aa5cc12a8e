use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kdvb_cli::{CliError, Experiment, LoadedConfig};

#[derive(Parser)]
#[command(name = "kdvb", version, about = "Stochastic KdV-Burgers experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON configuration.
    Run {
        config: PathBuf,
        /// Overrides `output_dir` from the configuration.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Check a configuration and print the constants it implies.
    Validate { config: PathBuf },
    /// List the available experiments.
    ListExperiments,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kdvb: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { config, output_dir } => {
            kdvb_cli::init_threads()?;
            let loaded = LoadedConfig::from_path(&config)?;
            let summary = kdvb_cli::run(&loaded, output_dir.as_deref())?;
            println!(
                "{} finished in {:.2} s, {} files in {}",
                loaded.config.experiment,
                summary.wall_time_s,
                summary.files.len() + 1,
                summary.output_dir.display()
            );
            Ok(())
        }
        Command::Validate { config } => {
            let loaded = LoadedConfig::from_path(&config)?;
            let report = kdvb_cli::validate(&loaded)?;
            for line in &report.lines {
                println!("{line}");
            }
            if report.ok() {
                println!("ok");
                Ok(())
            } else {
                for v in &report.violations {
                    eprintln!("violation: {v}");
                }
                Err(CliError::Schema(format!(
                    "{} hypothesis violation(s)",
                    report.violations.len()
                )))
            }
        }
        Command::ListExperiments => {
            for e in Experiment::ALL {
                println!("{:<22} {}", e.name(), e.summary());
            }
            Ok(())
        }
    }
}
