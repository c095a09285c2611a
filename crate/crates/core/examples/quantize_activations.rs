//! Quantizes one activation batch, checks the reconstruction and the wire
//! encoding.

use fedlite::quantizer::{decode, encode, message_bits, quantization_error, wire, QuantizerConfig};
use fedlite::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> fedlite::Result<()> {
    let (d, b) = (32, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let z = Matrix::from_col_major(
        d,
        b,
        (0..d * b).map(|_| rng.sample(StandardNormal)).collect(),
    )?;

    let cfg = QuantizerConfig::new(8, 2, 4);
    let msg = encode(&z, &cfg, 42)?;
    let zt = decode(&msg)?;
    let err = quantization_error(&z, &zt)?;
    println!(
        "q = 8, R = 2, L = 4: mean error {:.4}, kappa {:.4}",
        err.mean(),
        err.max
    );

    let (bytes, layout) = wire::serialize(&msg)?;
    assert_eq!(wire::deserialize(&bytes)?, msg);
    let bits = message_bits(&cfg, d, b);
    println!(
        "wire: {} bytes, payload {} bits (formula {}), ideal {:.1} bits",
        bytes.len(),
        layout.payload_bits(),
        bits.payload,
        bits.ideal
    );
    Ok(())
}
