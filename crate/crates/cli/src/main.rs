use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dnls::run::{run, Command};
use dnls::{parse_config, CliError, SimConfig, EXIT_CHECKS_FAILED, EXIT_OK};

/// Damped, driven cubic NLS on the circle: simulation and verification runs.
///
/// Exit status: 0 success, 1 checks failed, 2 configuration error,
/// 3 blow-up guard tripped, 4 I/O or checkpoint error.
/// Log verbosity follows `DNLS_LOG` (e.g. `DNLS_LOG=info`).
#[derive(Parser)]
#[command(name = "dnls", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: `output.dir` from the config, else `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Integrate one trajectory and export its diagnostics.
    Simulate {
        /// Continue from a checkpoint written by an earlier run of the same configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run a scripted scenario: absorbing_ball, weak_limit, decomposition, smoothing.
    Experiment { name: String },
    /// Space-time norm studies: damping, l4, resonance.
    Bourgain { name: String },
    /// Run the invariant suite.
    Check,
}

fn load(cli: &Cli) -> Result<SimConfig, CliError> {
    let cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            parse_config(&text)?
        }
        None => SimConfig::empty(),
    };
    Ok(match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DNLS_LOG", "warn")).init();
    let cli = Cli::parse();
    let command = match &cli.command {
        Sub::Simulate { resume } => Command::Simulate { resume: resume.clone() },
        Sub::Experiment { name } => Command::Experiment(name.clone()),
        Sub::Bourgain { name } => Command::Bourgain(name.clone()),
        Sub::Check => Command::Check,
    };
    let result = load(&cli).and_then(|cfg| {
        let out = cli
            .out
            .clone()
            .or_else(|| cfg.output.dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        run(&cfg, &command, &out)
    });
    match result {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            let code = if outcome.passed { EXIT_OK } else { EXIT_CHECKS_FAILED };
            if !outcome.passed {
                eprintln!("{}", outcome.summary);
            }
            ExitCode::from(code as u8)
        }
        Err(e) => {
            log::error!("{e}");
            eprintln!("{}", e.summary());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
