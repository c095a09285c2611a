//! Trains the same split model with raw and quantized activations and
//! compares accuracy and uplink traffic.

use fedlite::federation::{generate_synthetic, partition, PartitionMode, SyntheticSpec};
use fedlite::nn::{stack_samples, Activation, SplitModel};
use fedlite::quantizer::QuantizerConfig;
use fedlite::trainer::{accuracy, train, TrainingConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fedlite::Result<()> {
    let data = generate_synthetic(&SyntheticSpec {
        num_classes: 4,
        input_dim: 16,
        samples_per_class: 150,
        spread: 3.0,
        noise: 1.0,
        seed: 7,
    })?;
    let (train_set, holdout) = data.split_holdout(0.2, 7)?;
    let fed = partition(&train_set, 10, PartitionMode::Iid, 7)?;
    let (x, y) = stack_samples(holdout.samples.iter())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = SplitModel::mlp(
        &[16, 32, 16],
        &[16, 32, 4],
        Activation::Tanh,
        Activation::Relu,
        &mut rng,
    )?;

    let base = TrainingConfig {
        eta_client: 0.1,
        eta_server: 0.1,
        rounds: 150,
        ..Default::default()
    };
    let runs = [
        ("splitfed", base.clone()),
        (
            "fedlite q=4 L=4",
            TrainingConfig {
                quantizer: Some(QuantizerConfig::new(4, 1, 4)),
                ..base.clone()
            },
        ),
        (
            "fedlite q=16 L=2",
            TrainingConfig {
                quantizer: Some(QuantizerConfig::new(16, 1, 2)),
                ..base
            },
        ),
    ];
    for (name, cfg) in runs {
        let out = train(&model, &fed, &cfg)?;
        let t = out.ledger.totals();
        println!(
            "{name:<18} accuracy {:.3}  activation uplink {:>9} bits  total uplink {:>9} bits",
            accuracy(&out.model, &x, &y)?,
            t.uplink_act_bits,
            t.uplink_bits()
        );
    }
    Ok(())
}
