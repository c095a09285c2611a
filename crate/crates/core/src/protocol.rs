//! Messages exchanged in one split-training round and their bit accounting.
//!
//! Per selected client and round:
//!
//! * uplink activations: the raw `d x B` batch or a [`QuantizedMessage`]
//! * downlink gradients: `dh/dz~` per example, never compressed
//! * uplink sync: the client-side parameter gradient
//! * downlink broadcast: the updated client-side parameters
//!
//! Everything is counted in bits. Labels and the quantized-message header are
//! not counted, matching the activation-only compression ratio.

use std::io::Write;
use std::path::Path;

use crate::error::{ensure, Error, Result};
use crate::quantizer::{raw_activation_bits, wire, QuantizedMessage};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub enum ActivationPayload {
    Raw(Matrix),
    Quantized(QuantizedMessage),
}

#[derive(Debug, Clone, PartialEq)]
pub struct UplinkActivationMsg {
    pub payload: ActivationPayload,
    pub labels: Vec<usize>,
}

impl UplinkActivationMsg {
    pub fn dim(&self) -> usize {
        match &self.payload {
            ActivationPayload::Raw(z) => z.rows(),
            ActivationPayload::Quantized(m) => m.dim,
        }
    }

    pub fn batch(&self) -> usize {
        match &self.payload {
            ActivationPayload::Raw(z) => z.cols(),
            ActivationPayload::Quantized(m) => m.batch,
        }
    }

    /// Formula size: `phi*d*B` raw, or the quantized wire payload.
    pub fn formula_bits(&self, phi: u32) -> u64 {
        match &self.payload {
            ActivationPayload::Raw(z) => raw_activation_bits(phi, z.rows(), z.cols()),
            ActivationPayload::Quantized(m) => m.bits().payload,
        }
    }

    /// Size measured from the encoded form. Quantized messages are run
    /// through the serializer; raw batches count `phi` bits per entry.
    pub fn measured_bits(&self, phi: u32) -> Result<u64> {
        match &self.payload {
            ActivationPayload::Raw(z) => Ok(z.as_slice().len() as u64 * phi as u64),
            ActivationPayload::Quantized(m) => Ok(wire::serialize(m)?.1.payload_bits()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DownlinkGradientMsg {
    /// `d x B`, column `j` is `dh(ws; z~_j)/dz~_j`.
    pub grad: Matrix,
}

impl DownlinkGradientMsg {
    pub fn bits(&self, phi: u32) -> u64 {
        raw_activation_bits(phi, self.grad.rows(), self.grad.cols())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientSyncMsg {
    pub client_param_grad: Vec<f64>,
}

impl ClientSyncMsg {
    pub fn bits(&self, phi: u32) -> u64 {
        phi as u64 * self.client_param_grad.len() as u64
    }
}

/// One client's traffic in a round.
#[derive(Debug, Clone, Copy)]
pub struct ClientExchange<'a> {
    pub client: usize,
    pub uplink: &'a UplinkActivationMsg,
    pub downlink: &'a DownlinkGradientMsg,
    pub sync: &'a ClientSyncMsg,
    /// Number of client-side parameters broadcast back after synchronisation.
    pub broadcast_params: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct LedgerRecord {
    pub round: usize,
    pub client: usize,
    pub uplink_act_bits: u64,
    pub uplink_sync_bits: u64,
    pub downlink_bits: u64,
}

impl LedgerRecord {
    pub fn uplink_bits(&self) -> u64 {
        self.uplink_act_bits + self.uplink_sync_bits
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct LedgerTotals {
    pub uplink_act_bits: u64,
    pub uplink_sync_bits: u64,
    pub downlink_bits: u64,
}

impl LedgerTotals {
    pub fn uplink_bits(&self) -> u64 {
        self.uplink_act_bits + self.uplink_sync_bits
    }
}

/// Append-only log of per-round, per-client traffic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommLedger {
    records: Vec<LedgerRecord>,
    totals: LedgerTotals,
}

impl CommLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, delta: &[LedgerRecord]) {
        for r in delta {
            self.totals.uplink_act_bits += r.uplink_act_bits;
            self.totals.uplink_sync_bits += r.uplink_sync_bits;
            self.totals.downlink_bits += r.downlink_bits;
            self.records.push(*r);
        }
    }

    pub fn records(&self) -> &[LedgerRecord] {
        &self.records
    }

    pub fn totals(&self) -> LedgerTotals {
        self.totals
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "round,client,uplink_act_bits,uplink_sync_bits,downlink_bits"
        )?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.round, r.client, r.uplink_act_bits, r.uplink_sync_bits, r.downlink_bits
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Bit counts for one round. Fails if the serializer and the size formula
/// disagree for any uplink message.
pub fn account_round(
    round: usize,
    exchanges: &[ClientExchange<'_>],
    phi: u32,
) -> Result<Vec<LedgerRecord>> {
    exchanges
        .iter()
        .map(|ex| {
            let measured = ex.uplink.measured_bits(phi)?;
            let formula = ex.uplink.formula_bits(phi);
            if measured != formula {
                return Err(Error::Consistency(format!(
                    "client {}: serializer measured {measured} uplink bits, formula gives {formula}",
                    ex.client
                )));
            }
            ensure!(
                ex.downlink.grad.shape() == (ex.uplink.dim(), ex.uplink.batch()),
                Shape,
                "downlink gradient shape {:?} does not match uplink batch",
                ex.downlink.grad.shape()
            );
            Ok(LedgerRecord {
                round,
                client: ex.client,
                uplink_act_bits: measured,
                uplink_sync_bits: ex.sync.bits(phi),
                downlink_bits: ex.downlink.bits(phi) + phi as u64 * ex.broadcast_params as u64,
            })
        })
        .collect()
}

/// Algorithms compared in the per-round cost table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostMode {
    /// FedAvg with `H` local steps of batch `B/H`.
    FedAvg,
    /// SplitFed with per-client batch `B/H`.
    SplitFedReducedBatch,
    /// SplitFed with per-client batch `B`.
    SplitFed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostSummary {
    pub mode: CostMode,
    pub batch_size: &'static str,
    pub total_compute: &'static str,
    pub client_compute: &'static str,
    /// Uplink floats per client per round.
    pub communication_floats: f64,
}

impl CostSummary {
    pub fn communication_bits(&self, phi: u32) -> f64 {
        self.communication_floats * phi as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostInputs {
    /// `|w|`
    pub model_params: u64,
    /// `|wc|`
    pub client_params: u64,
    pub batch: u64,
    pub cut_dim: u64,
    /// Local steps `H`.
    pub local_steps: u64,
}

pub fn compare_costs(mode: CostMode, inputs: &CostInputs) -> Result<CostSummary> {
    ensure!(
        inputs.local_steps >= 1,
        Config,
        "the number of local steps must be at least 1"
    );
    let bd = (inputs.batch * inputs.cut_dim) as f64;
    let wc = inputs.client_params as f64;
    Ok(match mode {
        CostMode::FedAvg => CostSummary {
            mode,
            batch_size: "B/H",
            total_compute: "O(B|w|)",
            client_compute: "O(B|w|)",
            communication_floats: inputs.model_params as f64,
        },
        CostMode::SplitFedReducedBatch => CostSummary {
            mode,
            batch_size: "B/H",
            total_compute: "O(B|w|/H)",
            client_compute: "O(B|wc|/H)",
            communication_floats: bd / inputs.local_steps as f64 + wc,
        },
        CostMode::SplitFed => CostSummary {
            mode,
            batch_size: "B",
            total_compute: "O(B|w|)",
            client_compute: "O(B|wc|)",
            communication_floats: bd + wc,
        },
    })
}
