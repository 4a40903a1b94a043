use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kinlyap::cli::{self, RunConfig, Simulation};

#[derive(Parser)]
#[command(name = "kinlyap", version, about = "Certified boundary stabilization runs for discrete-velocity kinetic models")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the stability certificate for a config as JSON.
    Certify {
        #[arg(short, long)]
        config: PathBuf,
        /// Also write the JSON here.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run a simulation and write the outputs named in the config.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Accept a time step above the certified bound.
        #[arg(long)]
        force: bool,
    },
    /// Run a reproduction preset: sim1, sim2 or sim3.
    Reproduce {
        preset: Simulation,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run the invariant suite.
    Validate,
}

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn run(args: Args) -> kinlyap::Result<bool> {
    match args.command {
        Command::Certify { config, output } => {
            let report = cli::cmd_certify(&RunConfig::load(&config)?)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if let Some(path) = output {
                cli::run::write_json(&report, &path)?;
            }
            Ok(true)
        }
        Command::Run { config, force } => {
            let cfg = RunConfig::load(&config)?;
            let outcome = cli::cmd_run(&cfg, &base_dir(&config), force)?;
            println!("{}", serde_json::to_string_pretty(&outcome.summary)?);
            Ok(true)
        }
        Command::Reproduce { preset, output } => {
            for e in cli::cmd_reproduce(preset, &output)? {
                let s = &e.summary;
                println!(
                    "{:<28} final l2 {:.6e}  rate {}  diverged {}",
                    e.name,
                    s.final_l2,
                    s.decay_rate.map_or("-".to_string(), |r| format!("{r:.6}")),
                    s.diverged
                );
            }
            Ok(true)
        }
        Command::Validate => Ok(cli::cmd_validate()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Args::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
