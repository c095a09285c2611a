//! Error versus compression for k-means, vanilla PQ and grouped PQ on the cut
//! activations of a random network. Writes the table to stdout as CSV.

use fedlite::federation::{generate_synthetic, SyntheticSpec};
use fedlite::harness::{tradeoff_table, write_tradeoff_csv};
use fedlite::nn::{stack_samples, Activation, SplitModel};
use fedlite::quantizer::QuantizerConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fedlite::Result<()> {
    let data = generate_synthetic(&SyntheticSpec {
        num_classes: 4,
        input_dim: 16,
        samples_per_class: 8,
        spread: 3.0,
        noise: 1.0,
        seed: 1,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = SplitModel::mlp(
        &[16, 32, 64],
        &[64, 4],
        Activation::Tanh,
        Activation::Relu,
        &mut rng,
    )?;
    let (x, _) = stack_samples(data.samples.iter())?;
    let z = model.client.predict(&x)?;

    let mut grid: Vec<QuantizerConfig> = [2, 4, 8, 16]
        .iter()
        .map(|&l| QuantizerConfig::new(1, 1, l))
        .collect();
    for q in [8, 16, 64] {
        for l in [2, 4, 8] {
            grid.push(QuantizerConfig::new(q, q, l));
            grid.push(QuantizerConfig::new(q, 1, l));
        }
    }
    let rows = tradeoff_table(&grid, &z, 64, 0)?;
    write_tradeoff_csv(&rows, std::io::stdout().lock())
}
