//! Estimates the bound's constants for a small model, trains it with a
//! quantizer and evaluates the bound over a range of correction strengths.

use fedlite::analysis::{
    estimate_constants, kappa_trajectory, theorem1_bound, AnalysisConstants, EstimateOptions,
};
use fedlite::federation::{generate_synthetic, partition, PartitionMode, SyntheticSpec};
use fedlite::nn::{Activation, SplitModel};
use fedlite::quantizer::QuantizerConfig;
use fedlite::trainer::{train, TrainingConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fedlite::Result<()> {
    let data = generate_synthetic(&SyntheticSpec {
        num_classes: 3,
        input_dim: 8,
        samples_per_class: 60,
        spread: 3.0,
        noise: 1.0,
        seed: 3,
    })?;
    let fed = partition(&data, 6, PartitionMode::Iid, 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = SplitModel::mlp(
        &[8, 16, 8],
        &[8, 16, 3],
        Activation::Tanh,
        Activation::Tanh,
        &mut rng,
    )?;

    let cfg = TrainingConfig {
        batch_size: 10,
        clients_per_round: 3,
        rounds: 50,
        quantizer: Some(QuantizerConfig::new(4, 1, 2)),
        ..Default::default()
    };
    let out = train(&model, &fed, &cfg)?;
    let kappa = kappa_trajectory(&out.traces)?.max;

    let opts = EstimateOptions {
        batch_size: cfg.batch_size,
        clients_per_round: cfg.clients_per_round,
        rounds: cfg.rounds,
        kappa,
        ..Default::default()
    };
    let est = estimate_constants(&model, &data.samples, &opts)?;
    let c = est.constants;
    println!(
        "kappa {kappa:.4}  sigma^2 {:.4}  L {:.4}",
        c.sigma2, c.l_smooth
    );
    println!(
        "Lambda1 {:.4}  Lambda2 {:.4}  Lambda3 {:.4}",
        c.lambda1, c.lambda2, c.lambda3
    );
    for lambda in [0.0, 0.5 * c.lambda2, c.lambda2, 2.0 * c.lambda2] {
        println!(
            "lambda {lambda:.4}: bound {:.4}",
            theorem1_bound(&AnalysisConstants { lambda, ..c })
        );
    }
    Ok(())
}
