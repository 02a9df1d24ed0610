use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use feasops::experiment::{exit_code, run, Command, ExperimentConfig, RunError};

/// Run a feasops experiment from a JSON config.
///
/// Exit codes: 0 pass, 1 invalid config, 2 runtime failure, 3 bound violated.
#[derive(Parser, Debug)]
#[command(name = "feasops", version)]
struct Cli {
    /// trajectory, lipschitz-table, ergodic-dr, ergodic-family, ergodic-vn,
    /// sign-invariance or extension-check.
    command: Command,
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let mut cfg = match ExperimentConfig::from_path(&cli.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("cannot read config {}: {e}", cli.config.display());
            return ExitCode::from(1);
        }
    };
    if let Some(out) = cli.out {
        cfg.out_dir = Some(out);
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let result = run(cli.command, &cfg);
    match &result {
        Ok(outcome) => {
            println!("{}: {}", cli.command, outcome.summary);
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
        }
        Err(e @ RunError::Validation(_)) => eprintln!("{e}"),
        Err(e @ RunError::Runtime { files, .. }) => {
            eprintln!("{e}");
            for f in files {
                eprintln!("partial output {}", f.display());
            }
        }
    }
    ExitCode::from(exit_code(&result) as u8)
}
