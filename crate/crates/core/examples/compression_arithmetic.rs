//! Message sizes and per-round costs for a FEMNIST-sized cut layer.

use fedlite::protocol::{compare_costs, CostInputs, CostMode};
use fedlite::quantizer::{compression_ratio, message_bits, raw_activation_bits, QuantizerConfig};

fn main() -> fedlite::Result<()> {
    let (d, b, phi) = (9216, 20, 64);
    println!("raw activations: {} bits", raw_activation_bits(phi, d, b));
    println!(
        "{:>6} {:>4} {:>4} {:>12} {:>10}",
        "q", "R", "L", "ideal bits", "ratio"
    );
    for (q, r, l) in [
        (1152, 1, 2),
        (1152, 1, 4),
        (1152, 8, 2),
        (1152, 1152, 2),
        (1, 1, 16),
    ] {
        let cfg = QuantizerConfig {
            phi,
            ..QuantizerConfig::new(q, r, l)
        };
        let bits = message_bits(&cfg, d, b);
        println!(
            "{q:>6} {r:>4} {l:>4} {:>12} {:>10.1}",
            bits.ideal,
            compression_ratio(phi, d, b, bits.ideal)
        );
    }

    let inputs = CostInputs {
        model_params: 6_603_710,
        client_params: 18_816,
        batch: b as u64,
        cut_dim: d as u64,
        local_steps: 5,
    };
    for mode in [
        CostMode::FedAvg,
        CostMode::SplitFedReducedBatch,
        CostMode::SplitFed,
    ] {
        let c = compare_costs(mode, &inputs)?;
        println!(
            "{mode:?}: {} floats per client per round",
            c.communication_floats
        );
    }
    Ok(())
}
