use super::QuantizerConfig;

/// Size of the fixed wire header: magic, five `u32` fields, one flag byte.
pub const HEADER_BITS: u64 = (4 + 5 * 4 + 1) * 8;
/// Width of a serialized centroid coordinate.
pub const WIRE_FLOAT_BITS: u64 = 64;

/// `ceil(log2(L))` with `ceil(log2(1)) = 0`.
pub fn ceil_log2(l: usize) -> u32 {
    if l <= 1 {
        0
    } else {
        usize::BITS - (l - 1).leading_zeros()
    }
}

/// Size accounting for one quantized message.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MessageBits {
    /// `phi * (d/q) * R * L`.
    pub codebook: u64,
    /// `B * q * log2(L)`, possibly fractional.
    pub codewords_ideal: f64,
    /// `B * q * ceil(log2(L))`.
    pub codewords_wire: u64,
    /// Codebook plus ideal codewords: `phi*d*R*L/q + B*q*log2(L)`.
    pub ideal: f64,
    /// Codebook (binary64) plus packed codewords, without header or padding.
    pub payload: u64,
    /// Zero bits padding the codewords to a byte boundary.
    pub padding: u64,
    /// Full serialized size without labels: header + payload + padding.
    pub wire: u64,
}

/// Message size for quantizing a `d x B` batch with `cfg`.
///
/// `cfg.phi` sets the float width of the ideal figure; the wire always
/// stores binary64 centroids.
pub fn message_bits(cfg: &QuantizerConfig, dim: usize, batch: usize) -> MessageBits {
    let sub_dim = (dim / cfg.subvectors) as u64;
    let floats = sub_dim * cfg.groups as u64 * cfg.centroids as u64;
    let codes = (batch * cfg.subvectors) as u64;
    let codebook = cfg.phi as u64 * floats;
    let codewords_ideal = codes as f64 * (cfg.centroids as f64).log2();
    let codewords_wire = codes * ceil_log2(cfg.centroids) as u64;
    let payload = WIRE_FLOAT_BITS * floats + codewords_wire;
    let padding = (8 - codewords_wire % 8) % 8;
    MessageBits {
        codebook,
        codewords_ideal,
        codewords_wire,
        ideal: codebook as f64 + codewords_ideal,
        payload,
        padding,
        wire: HEADER_BITS + payload + padding,
    }
}

/// Size of the uncompressed batch, `phi * d * B`.
pub fn raw_activation_bits(phi: u32, dim: usize, batch: usize) -> u64 {
    phi as u64 * dim as u64 * batch as u64
}

/// `phi*d*B / message`, the ratio reported for activations only.
pub fn compression_ratio(phi: u32, dim: usize, batch: usize, message_bits: f64) -> f64 {
    raw_activation_bits(phi, dim, batch) as f64 / message_bits
}
