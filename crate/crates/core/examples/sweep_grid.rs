//! Runs a small (q, L, lambda) sweep on two worker threads and prints the
//! resulting CSV.

use fedlite::harness::{run_sweep, ConfigFile, ExperimentSpec};

const CONFIG: &str = r#"
classes = 3
samples_per_class = 60
clients = 6
cut_dim = 8
rounds = 40
diagnostics = false
workers = 2
sweep_subvectors = [2, 4, 3]
sweep_groups = [1]
sweep_centroids = [2, 4]
sweep_lambda = [0.0, 0.5]
"#;

fn main() -> fedlite::Result<()> {
    let spec = ExperimentSpec::from_config(&ConfigFile::parse(
        CONFIG,
        std::iter::empty::<(String, String)>(),
    )?)?;
    let out = std::env::temp_dir().join("fedlite_sweep_grid");
    let result = run_sweep(&spec, &out)?;
    result.write_csv(std::io::stdout().lock())?;
    eprintln!(
        "{} points, {} failures, files in {}",
        result.rows.len(),
        result.failures.len(),
        out.display()
    );
    Ok(())
}
