//! Effect of the correction strength on a non-IID task with an aggressive
//! quantizer, averaged over a few seeds.

use fedlite::harness::{run_single, ConfigFile, ExperimentSpec};

const BASE: &str = r#"
classes = 8
input_dim = 16
samples_per_class = 100
clients = 10
partition = "shard:2"
cut_dim = 16
subvectors = 4
groups = 1
centroids = 2
rounds = 300
eval_every = 1000
diagnostics = false
"#;

fn main() -> fedlite::Result<()> {
    let dir = std::env::temp_dir().join("fedlite_gradient_correction");
    let settings = [
        ("no quantizer", "quantize = false"),
        ("lambda 0", "lambda = 0.0"),
        ("lambda 0.3", "lambda = 0.3"),
        ("lambda 1", "lambda = 1.0"),
    ];
    for (name, extra) in settings {
        let quantize = if extra.starts_with("quantize") {
            ""
        } else {
            "quantize = true"
        };
        let mut total = 0.0;
        for seed in 0..3u64 {
            let text = format!(
                "{BASE}\n{quantize}\n{extra}\nseed = {seed}\ndata_seed = {}",
                100 + seed
            );
            let spec = ExperimentSpec::from_config(&ConfigFile::parse(
                &text,
                std::iter::empty::<(String, String)>(),
            )?)?;
            total += run_single(&spec, &dir)?.final_accuracy;
        }
        println!("{name:<13} mean accuracy {:.3}", total / 3.0);
    }
    Ok(())
}
