use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedlite::harness::{run_single, run_sweep, ConfigFile, ExperimentSpec};

/// Split federated learning simulator with quantized activations.
///
/// Every config key can also be set as FEDLITE_<KEY> in the environment;
/// command-line flags take precedence over both.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train once and write trace, ledger, eval and diagnostics files.
    Run(Common),
    /// Train every (q, R, L, lambda) grid point and write sweep.csv.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// Key-value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Concurrent sweep points.
    #[arg(long)]
    workers: Option<usize>,
}

fn resolve(c: &Common) -> fedlite::Result<ExperimentSpec> {
    let mut file = ConfigFile::load(c.config.as_deref())?;
    if let Some(s) = c.seed {
        file.seed = s;
    }
    if let Some(d) = &c.out_dir {
        file.out_dir = d.clone();
    }
    if let Some(w) = c.workers {
        file.workers = w;
    }
    ExperimentSpec::from_config(&file)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(c) => resolve(c).and_then(|spec| {
            let s = run_single(&spec, &spec.out_dir)?;
            println!(
                "accuracy {:.4}  loss {:.4}  max kappa {:.4}  uplink bits {}",
                s.final_accuracy, s.final_loss, s.max_kappa, s.total_uplink_bits
            );
            Ok(true)
        }),
        Command::Sweep(c) => resolve(c).and_then(|spec| {
            let r = run_sweep(&spec, &spec.out_dir)?;
            println!(
                "{} points done, {} failed; see {}",
                r.rows.len(),
                r.failures.len(),
                spec.out_dir.join("sweep.csv").display()
            );
            Ok(r.failures.is_empty())
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
