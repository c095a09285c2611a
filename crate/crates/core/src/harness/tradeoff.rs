//! Quantization error against compression ratio for a grid of quantizers.

use std::io::Write;

use crate::error::Result;
use crate::quantizer::{
    compression_ratio, decode, encode, message_bits, quantization_error, QuantizerConfig,
};
use crate::tensor::Matrix;

/// Which curve a configuration belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum QuantizerFamily {
    /// `q = 1`: plain k-means on whole activations.
    KMeans,
    /// `R = q > 1`: one codebook per subvector position.
    VanillaPq,
    /// `R < q`: positions share codebooks.
    GroupedPq,
}

impl QuantizerFamily {
    pub fn of(cfg: &QuantizerConfig) -> Self {
        if cfg.subvectors == 1 {
            Self::KMeans
        } else if cfg.groups == cfg.subvectors {
            Self::VanillaPq
        } else {
            Self::GroupedPq
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::KMeans => "kmeans",
            Self::VanillaPq => "vanilla-pq",
            Self::GroupedPq => "grouped-pq",
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TradeoffRow {
    pub config: QuantizerConfig,
    pub family: QuantizerFamily,
    /// Mean of `||z_j - z~_j||` over the batch.
    pub mean_error: f64,
    pub max_error: f64,
    pub ideal_bits: f64,
    pub ideal_ratio: f64,
    pub wire_ratio: f64,
}

/// Quantizes `activations` with every configuration. All configurations are
/// validated before any encoding starts.
pub fn tradeoff_table(
    grid: &[QuantizerConfig],
    activations: &Matrix,
    phi: u32,
    seed: u64,
) -> Result<Vec<TradeoffRow>> {
    let (d, b) = activations.shape();
    for cfg in grid {
        cfg.validate_for(d)?;
    }
    grid.iter()
        .map(|cfg| {
            let cfg = QuantizerConfig { phi, ..*cfg };
            let msg = encode(activations, &cfg, seed)?;
            let err = quantization_error(activations, &decode(&msg)?)?;
            let bits = message_bits(&cfg, d, b);
            Ok(TradeoffRow {
                config: cfg,
                family: QuantizerFamily::of(&cfg),
                mean_error: err.mean(),
                max_error: err.max,
                ideal_bits: bits.ideal,
                ideal_ratio: compression_ratio(phi, d, b, bits.ideal),
                wire_ratio: compression_ratio(phi, d, b, bits.wire as f64),
            })
        })
        .collect()
}

pub fn write_tradeoff_csv<W: Write>(rows: &[TradeoffRow], mut out: W) -> Result<()> {
    writeln!(
        out,
        "family,q,R,L,mean_error,max_error,ideal_bits,ideal_ratio,wire_ratio"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:?},{:?},{:?},{:?},{:?}",
            r.family.name(),
            r.config.subvectors,
            r.config.groups,
            r.config.centroids,
            r.mean_error,
            r.max_error,
            r.ideal_bits,
            r.ideal_ratio,
            r.wire_ratio
        )?;
    }
    Ok(())
}
