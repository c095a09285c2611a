//! Batch product quantizer for cut-layer activations.
//!
//! A `d x B` activation batch is cut into `q` subvectors of length `d / q` per
//! column. Subvector positions are split into `R` contiguous blocks of `q / R`
//! positions; all subvectors in a block share one codebook of `L` centroids
//! learned by k-means on that block. The client ships the codebooks and, for
//! every subvector, the index of its nearest centroid.
//!
//! * `q = 1` is plain k-means on whole activations.
//! * `R = q` is vanilla product quantization (one codebook per position).
//! * `R < q` shares codebooks across positions, shrinking the codebook from
//!   `phi * d * L` to `phi * d * R * L / q` bits.

mod bits;
pub mod kmeans;
pub mod wire;

pub use bits::{ceil_log2, compression_ratio, message_bits, raw_activation_bits, MessageBits};
pub use kmeans::{kmeans, KMeansResult};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{ensure, Error, Result};
use crate::tensor::{norm, Matrix};

/// Bits per transmitted float used for compression-ratio accounting.
pub const DEFAULT_PHI: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct QuantizerConfig {
    /// `q`: subvectors per activation.
    pub subvectors: usize,
    /// `R`: groups of subvector positions sharing a codebook.
    pub groups: usize,
    /// `L`: centroids per group.
    pub centroids: usize,
    /// `phi`: bits per float in the accounting.
    pub phi: u32,
}

impl QuantizerConfig {
    pub fn new(subvectors: usize, groups: usize, centroids: usize) -> Self {
        Self {
            subvectors,
            groups,
            centroids,
            phi: DEFAULT_PHI,
        }
    }

    /// Checks the config on its own (`R | q`, `L >= 1`).
    pub fn validate(&self) -> Result<()> {
        ensure!(self.subvectors >= 1, Config, "q must be at least 1");
        ensure!(
            self.groups >= 1 && self.groups <= self.subvectors,
            Config,
            "R = {} must lie in [1, q = {}]",
            self.groups,
            self.subvectors
        );
        ensure!(
            self.subvectors.is_multiple_of(self.groups),
            Config,
            "R = {} does not divide q = {}",
            self.groups,
            self.subvectors
        );
        ensure!(self.centroids >= 1, Config, "L must be at least 1");
        ensure!(
            self.centroids <= u32::MAX as usize,
            Config,
            "L = {} does not fit the wire format",
            self.centroids
        );
        ensure!(self.phi >= 1, Config, "phi must be positive");
        Ok(())
    }

    /// Checks the config against an activation dimension (`q | d`).
    pub fn validate_for(&self, dim: usize) -> Result<()> {
        self.validate()?;
        ensure!(
            dim >= 1 && dim.is_multiple_of(self.subvectors),
            Config,
            "q = {} does not divide d = {dim}",
            self.subvectors
        );
        Ok(())
    }

    /// Length of one subvector, `d / q`.
    pub fn subvector_dim(&self, dim: usize) -> usize {
        dim / self.subvectors
    }

    /// Subvector positions per group, `q / R`.
    pub fn positions_per_group(&self) -> usize {
        self.subvectors / self.groups
    }

    /// Group holding subvector position `s`.
    pub fn group_of(&self, s: usize) -> usize {
        s / self.positions_per_group()
    }
}

/// Group of subvector position `s` given `q` and `R`.
pub fn group_of(s: usize, subvectors: usize, groups: usize) -> usize {
    s / (subvectors / groups)
}

/// `R` centroid sets, each a `(d/q) x L` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub groups: Vec<Matrix>,
}

impl Codebook {
    pub fn centroid(&self, group: usize, index: usize) -> &[f64] {
        self.groups[group].column(index)
    }
}

/// Codeword `l*` for each `(example j, subvector s)`, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodewordMatrix {
    batch: usize,
    subvectors: usize,
    data: Vec<u32>,
}

impl CodewordMatrix {
    pub fn new(batch: usize, subvectors: usize, data: Vec<u32>) -> Result<Self> {
        ensure!(
            data.len() == batch * subvectors,
            Shape,
            "{} codewords for a {batch}x{subvectors} matrix",
            data.len()
        );
        Ok(Self {
            batch,
            subvectors,
            data,
        })
    }

    #[inline]
    pub fn get(&self, j: usize, s: usize) -> u32 {
        self.data[j * self.subvectors + s]
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn subvectors(&self) -> usize {
        self.subvectors
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.data
    }
}

/// Everything a client uploads in place of the raw activation batch.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMessage {
    pub config: QuantizerConfig,
    pub dim: usize,
    pub batch: usize,
    pub codebook: Codebook,
    pub codewords: CodewordMatrix,
    pub labels: Option<Vec<u32>>,
}

impl QuantizedMessage {
    pub fn with_labels(mut self, labels: &[usize]) -> Result<Self> {
        ensure!(
            labels.len() == self.batch,
            Shape,
            "{} labels for a batch of {}",
            labels.len(),
            self.batch
        );
        ensure!(
            labels.iter().all(|&l| l <= u32::MAX as usize),
            Domain,
            "label exceeds the 32-bit wire range"
        );
        self.labels = Some(labels.iter().map(|&l| l as u32).collect());
        Ok(self)
    }

    pub fn bits(&self) -> MessageBits {
        message_bits(&self.config, self.dim, self.batch)
    }
}

/// Quantizes the columns of `activations`.
///
/// Every group runs k-means from its own random stream derived from `seed`,
/// so the result is deterministic in `(activations, config, seed)`.
pub fn encode(
    activations: &Matrix,
    config: &QuantizerConfig,
    seed: u64,
) -> Result<QuantizedMessage> {
    let (dim, batch) = activations.shape();
    config.validate_for(dim)?;
    ensure!(batch >= 1, Shape, "cannot quantize an empty batch");
    let sub_dim = config.subvector_dim(dim);
    let per_group = config.positions_per_group();

    let clustered: Vec<KMeansResult> = (0..config.groups)
        .into_par_iter()
        .map(|r| {
            let mut data = Vec::with_capacity(sub_dim * per_group * batch);
            for j in 0..batch {
                let col = activations.column(j);
                for s in r * per_group..(r + 1) * per_group {
                    data.extend_from_slice(&col[s * sub_dim..(s + 1) * sub_dim]);
                }
            }
            let points = Matrix::from_col_major(sub_dim, per_group * batch, data)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            kmeans(
                &points,
                config.centroids,
                kmeans::DEFAULT_MAX_ITERS,
                &mut rng,
            )
        })
        .collect::<Result<_>>()?;

    // Points were laid out j-major within each group, so point index
    // j * per_group + (s - r * per_group) maps back to (j, s).
    let mut codes = vec![0u32; batch * config.subvectors];
    for (r, res) in clustered.iter().enumerate() {
        for j in 0..batch {
            for offset in 0..per_group {
                let s = r * per_group + offset;
                codes[j * config.subvectors + s] = res.assignments[j * per_group + offset];
            }
        }
    }

    Ok(QuantizedMessage {
        config: *config,
        dim,
        batch,
        codebook: Codebook {
            groups: clustered.into_iter().map(|r| r.centroids).collect(),
        },
        codewords: CodewordMatrix::new(batch, config.subvectors, codes)?,
        labels: None,
    })
}

/// Reassembles `Z~` by concatenating the selected centroids.
pub fn decode(msg: &QuantizedMessage) -> Result<Matrix> {
    let cfg = &msg.config;
    cfg.validate_for(msg.dim)
        .map_err(|e| Error::Corrupt(e.to_string()))?;
    let sub_dim = cfg.subvector_dim(msg.dim);
    ensure!(
        msg.codebook.groups.len() == cfg.groups
            && msg
                .codebook
                .groups
                .iter()
                .all(|g| g.shape() == (sub_dim, cfg.centroids)),
        Corrupt,
        "codebook shape does not match the configuration"
    );
    ensure!(
        msg.codewords.batch() == msg.batch && msg.codewords.subvectors() == cfg.subvectors,
        Corrupt,
        "codeword matrix shape does not match the configuration"
    );
    let mut out = Matrix::zeros(msg.dim, msg.batch);
    for j in 0..msg.batch {
        let col = out.column_mut(j);
        for s in 0..cfg.subvectors {
            let code = msg.codewords.get(j, s) as usize;
            ensure!(
                code < cfg.centroids,
                Corrupt,
                "codeword {code} at ({j}, {s}) exceeds L = {}",
                cfg.centroids
            );
            col[s * sub_dim..(s + 1) * sub_dim]
                .copy_from_slice(msg.codebook.centroid(cfg.group_of(s), code));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationError {
    /// `||z_j - z~_j||_2` per example.
    pub per_example: Vec<f64>,
    /// Largest per-example error in the batch.
    pub max: f64,
}

impl QuantizationError {
    pub fn mean(&self) -> f64 {
        if self.per_example.is_empty() {
            0.0
        } else {
            self.per_example.iter().sum::<f64>() / self.per_example.len() as f64
        }
    }
}

pub fn quantization_error(original: &Matrix, reconstructed: &Matrix) -> Result<QuantizationError> {
    ensure!(
        original.shape() == reconstructed.shape(),
        Shape,
        "shapes {:?} and {:?} differ",
        original.shape(),
        reconstructed.shape()
    );
    let per_example: Vec<f64> = original
        .columns()
        .zip(reconstructed.columns())
        .map(|(a, b)| {
            let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            norm(&diff)
        })
        .collect();
    let max = per_example.iter().copied().fold(0.0, f64::max);
    Ok(QuantizationError { per_example, max })
}
