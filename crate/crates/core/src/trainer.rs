//! SplitFed and FedLite training rounds.
//!
//! A round, for every selected client `i` with weight `p_i`:
//!
//! 1. the client computes `Z = u(wc; X)` and uploads it, raw (SplitFed) or
//!    quantized (FedLite);
//! 2. the server reconstructs `Z~`, computes `dh/dws` and the per-example
//!    `dh/dz~`, and returns the latter;
//! 3. the client backpropagates `dh/dz~ + lambda (Z - Z~)` through `u`;
//! 4. both halves take one SGD step on the `p`-weighted average of the
//!    per-client gradients.
//!
//! With quantization off this is exactly mini-batch SGD on the unsplit
//! network with batch `B * |S|` (for equal client weights).

use std::io::Write;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};
use crate::federation::Federation;
use crate::nn::{
    softmax_cross_entropy, stack_samples, DenseNetwork, ForwardCache, ParameterGradient, SplitModel,
};
use crate::protocol::{
    account_round, ActivationPayload, ClientExchange, ClientSyncMsg, CommLedger,
    DownlinkGradientMsg, LedgerRecord, UplinkActivationMsg,
};
use crate::quantizer::{self, QuantizerConfig, DEFAULT_PHI};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TrainingConfig {
    /// Client-side learning rate `eta_c`.
    pub eta_client: f64,
    /// Server-side learning rate `eta_s`.
    pub eta_server: f64,
    /// Gradient-correction coefficient `lambda`.
    pub lambda: f64,
    /// Mini-batch size `B` per client.
    pub batch_size: usize,
    /// Clients per round `S`.
    pub clients_per_round: usize,
    /// Total rounds `T`.
    pub rounds: usize,
    /// Quantizer for the uplink; `None` trains plain SplitFed.
    pub quantizer: Option<QuantizerConfig>,
    pub seed: u64,
    pub phi: u32,
    /// Samples in the fixed probe batch used for the gradient-norm estimate.
    pub probe_size: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            eta_client: 0.05,
            eta_server: 0.05,
            lambda: 0.0,
            batch_size: 20,
            clients_per_round: 4,
            rounds: 100,
            quantizer: None,
            seed: 0,
            phi: DEFAULT_PHI,
            probe_size: 64,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.eta_client >= 0.0 && self.eta_client.is_finite(),
            Config,
            "eta_client must be a non-negative finite number, got {}",
            self.eta_client
        );
        ensure!(
            self.eta_server >= 0.0 && self.eta_server.is_finite(),
            Config,
            "eta_server must be a non-negative finite number, got {}",
            self.eta_server
        );
        ensure!(
            self.lambda >= 0.0 && self.lambda.is_finite(),
            Config,
            "lambda must be non-negative, got {}",
            self.lambda
        );
        ensure!(
            self.batch_size >= 1,
            Config,
            "batch_size must be at least 1"
        );
        ensure!(
            self.clients_per_round >= 1,
            Config,
            "clients_per_round must be at least 1"
        );
        ensure!(self.phi >= 1, Config, "phi must be positive");
        if let Some(q) = &self.quantizer {
            q.validate()?;
        }
        Ok(())
    }
}

/// One selected client's mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientBatch {
    pub client: usize,
    /// `p_i` of the client in the full federation.
    pub weight: f64,
    /// `input_dim x B`
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

/// Result of one server pass over a client's upload.
#[derive(Debug, Clone)]
pub struct ServerStep {
    /// Gradient of the client's mean loss with respect to `ws`.
    pub param_grad: ParameterGradient,
    pub downlink: DownlinkGradientMsg,
    /// Mean loss on the reconstructed activations.
    pub loss: f64,
    /// Reconstructed activations the server trained on.
    pub reconstructed: Matrix,
}

/// Server half of a round. The server only ever sees the uplink message, so
/// for quantized uploads every gradient is taken at `Z~`.
pub fn server_step(server: &DenseNetwork, uplink: &UplinkActivationMsg) -> Result<ServerStep> {
    let z_tilde = match &uplink.payload {
        ActivationPayload::Raw(z) => z.clone(),
        ActivationPayload::Quantized(msg) => quantizer::decode(msg)?,
    };
    let batch = z_tilde.cols();
    ensure!(
        uplink.labels.len() == batch,
        Shape,
        "{} labels for a batch of {batch}",
        uplink.labels.len()
    );
    let (logits, cache) = server.forward(&z_tilde)?;
    let (losses, head) = softmax_cross_entropy(&logits, &uplink.labels)?;
    // unscaled head gradient -> per-example dh_j/dz~_j
    let (mut param_grad, per_example) = server.backward(&cache, &head)?;
    param_grad.scale(1.0 / batch as f64);
    Ok(ServerStep {
        param_grad,
        downlink: DownlinkGradientMsg { grad: per_example },
        loss: losses.iter().sum::<f64>() / batch as f64,
        reconstructed: z_tilde,
    })
}

/// `server_grad + lambda * (Z - Z~)`, elementwise.
pub fn corrected_upstream(
    server_grad: &Matrix,
    activations: &Matrix,
    reconstructed: &Matrix,
    lambda: f64,
) -> Result<Matrix> {
    ensure!(
        server_grad.shape() == activations.shape() && activations.shape() == reconstructed.shape(),
        Shape,
        "shapes {:?}, {:?}, {:?} are not congruent",
        server_grad.shape(),
        activations.shape(),
        reconstructed.shape()
    );
    let mut out = server_grad.clone();
    if lambda != 0.0 {
        for ((o, &z), &zt) in out
            .as_mut_slice()
            .iter_mut()
            .zip(activations.as_slice())
            .zip(reconstructed.as_slice())
        {
            *o += lambda * (z - zt);
        }
    }
    Ok(out)
}

/// Client backward pass: gradient of the client's mean loss with respect to
/// `wc`, using the corrected upstream. `reconstructed` is `Z~` as the server
/// rebuilt it (the client can compute it from its own message).
pub fn client_backward(
    client: &DenseNetwork,
    cache: &ForwardCache,
    activations: &Matrix,
    reconstructed: &Matrix,
    downlink: &DownlinkGradientMsg,
    lambda: f64,
) -> Result<ParameterGradient> {
    let mut upstream = corrected_upstream(&downlink.grad, activations, reconstructed, lambda)?;
    upstream.scale(1.0 / activations.cols() as f64);
    Ok(client.backward(cache, &upstream)?.0)
}

/// `sum_i p_i v_i / sum_i p_i`.
pub fn aggregate_weighted(items: &[(f64, &[f64])]) -> Result<Vec<f64>> {
    ensure!(!items.is_empty(), Contract, "nothing to aggregate");
    let len = items[0].1.len();
    ensure!(
        items.iter().all(|(_, v)| v.len() == len),
        Shape,
        "aggregated vectors differ in length"
    );
    ensure!(
        items.iter().all(|(p, _)| *p >= 0.0 && p.is_finite()),
        Contract,
        "weights must be non-negative and finite"
    );
    let total: f64 = items.iter().map(|(p, _)| p).sum();
    ensure!(total > 0.0, Contract, "weights sum to zero");
    let mut out = vec![0.0; len];
    for (p, v) in items {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += p * x;
        }
    }
    out.iter_mut().for_each(|o| *o /= total);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub model: SplitModel,
    /// `p`-weighted mean of the server-side losses.
    pub loss: f64,
    /// Per-client max quantization error, in batch order.
    pub kappa: Vec<f64>,
    /// Per-client client-side gradients as uploaded for synchronisation.
    pub client_gradients: Vec<Vec<f64>>,
    pub ledger_delta: Vec<LedgerRecord>,
}

/// Seed for a client's quantizer in a given round.
pub fn quantizer_seed(base: u64, round: usize, client: usize) -> u64 {
    // splitmix64 over the packed triple
    let mut x = base
        ^ (round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (client as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn run_round(
    model: &SplitModel,
    batches: &[ClientBatch],
    cfg: &TrainingConfig,
    quantize: Option<(&QuantizerConfig, usize)>,
) -> Result<RoundOutcome> {
    ensure!(
        !batches.is_empty(),
        Contract,
        "no clients selected for the round"
    );
    let d = model.cut_dim();
    if let Some((q, _)) = quantize {
        q.validate_for(d)?;
    }

    struct PerClient {
        uplink: UplinkActivationMsg,
        step: ServerStep,
        sync: ClientSyncMsg,
        kappa: f64,
    }

    let mut per_client = Vec::with_capacity(batches.len());
    for b in batches {
        let (z, cache) = model.client.forward(&b.inputs)?;
        let payload = match quantize {
            None => ActivationPayload::Raw(z.clone()),
            Some((qcfg, round)) => {
                let seed = quantizer_seed(cfg.seed, round, b.client);
                ActivationPayload::Quantized(
                    quantizer::encode(&z, qcfg, seed)?.with_labels(&b.labels)?,
                )
            }
        };
        let uplink = UplinkActivationMsg {
            payload,
            labels: b.labels.clone(),
        };
        let step = server_step(&model.server, &uplink)?;
        let kappa = match quantize {
            None => 0.0,
            Some(_) => quantizer::quantization_error(&z, &step.reconstructed)?.max,
        };
        let grad = client_backward(
            &model.client,
            &cache,
            &z,
            &step.reconstructed,
            &step.downlink,
            cfg.lambda,
        )?;
        per_client.push(PerClient {
            uplink,
            step,
            sync: ClientSyncMsg {
                client_param_grad: grad.flat(),
            },
            kappa,
        });
    }

    let server_flat: Vec<Vec<f64>> = per_client
        .iter()
        .map(|c| c.step.param_grad.flat())
        .collect();
    let server_items: Vec<(f64, &[f64])> = batches
        .iter()
        .zip(&server_flat)
        .map(|(b, g)| (b.weight, g.as_slice()))
        .collect();
    let client_items: Vec<(f64, &[f64])> = batches
        .iter()
        .zip(&per_client)
        .map(|(b, c)| (b.weight, c.sync.client_param_grad.as_slice()))
        .collect();
    let server_grad =
        ParameterGradient::from_flat(&model.server, &aggregate_weighted(&server_items)?)?;
    let client_grad =
        ParameterGradient::from_flat(&model.client, &aggregate_weighted(&client_items)?)?;

    let mut next = model.clone();
    next.server.apply_gradient(&server_grad, cfg.eta_server)?;
    next.client.apply_gradient(&client_grad, cfg.eta_client)?;

    let exchanges: Vec<ClientExchange<'_>> = batches
        .iter()
        .zip(&per_client)
        .map(|(b, c)| ClientExchange {
            client: b.client,
            uplink: &c.uplink,
            downlink: &c.step.downlink,
            sync: &c.sync,
            broadcast_params: model.client.parameter_count(),
        })
        .collect();
    let ledger_delta = account_round(quantize.map_or(0, |(_, r)| r), &exchanges, cfg.phi)?;

    let total_weight: f64 = batches.iter().map(|b| b.weight).sum();
    let loss = batches
        .iter()
        .zip(&per_client)
        .map(|(b, c)| b.weight * c.step.loss)
        .sum::<f64>()
        / total_weight;

    Ok(RoundOutcome {
        model: next,
        loss,
        kappa: per_client.iter().map(|c| c.kappa).collect(),
        client_gradients: per_client
            .into_iter()
            .map(|c| c.sync.client_param_grad)
            .collect(),
        ledger_delta,
    })
}

/// One SplitFed round with raw activations.
pub fn round_splitfed(
    model: &SplitModel,
    batches: &[ClientBatch],
    cfg: &TrainingConfig,
) -> Result<RoundOutcome> {
    run_round(model, batches, cfg, None)
}

/// One FedLite round: quantized uplink plus gradient correction. `round`
/// feeds the quantizer seeds so that codebooks are rebuilt every round.
pub fn round_fedlite(
    model: &SplitModel,
    batches: &[ClientBatch],
    cfg: &TrainingConfig,
    round: usize,
) -> Result<RoundOutcome> {
    let qcfg = cfg
        .quantizer
        .as_ref()
        .ok_or_else(|| Error::Config("round_fedlite needs a quantizer config".into()))?;
    run_round(model, batches, cfg, Some((qcfg, round)))
}

/// Draws the clients and mini-batches for each round.
///
/// Clients are drawn uniformly without replacement and visited in ascending
/// id order. Each client draws `B` samples without replacement, or with
/// replacement when it holds fewer than `B`.
#[derive(Debug, Clone)]
pub struct RoundSampler {
    rng: ChaCha8Rng,
}

impl RoundSampler {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Self { rng }
    }

    pub fn sample(
        &mut self,
        federation: &Federation,
        clients_per_round: usize,
        batch_size: usize,
    ) -> Result<Vec<ClientBatch>> {
        ensure!(
            clients_per_round >= 1 && clients_per_round <= federation.len(),
            Config,
            "cannot select {clients_per_round} of {} clients",
            federation.len()
        );
        let mut chosen =
            index::sample(&mut self.rng, federation.len(), clients_per_round).into_vec();
        chosen.sort_unstable();
        chosen
            .into_iter()
            .map(|c| {
                let data = &federation.clients[c];
                let picks: Vec<usize> = if data.len() >= batch_size {
                    index::sample(&mut self.rng, data.len(), batch_size).into_vec()
                } else {
                    (0..batch_size)
                        .map(|_| self.rng.random_range(0..data.len()))
                        .collect()
                };
                let (inputs, labels) = stack_samples(picks.iter().map(|&i| &data.samples[i]))?;
                Ok(ClientBatch {
                    client: c,
                    weight: federation.weights[c],
                    inputs,
                    labels,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RoundTrace {
    pub round: usize,
    pub loss: f64,
    pub kappa: Vec<f64>,
    pub kappa_max: f64,
    /// Squared full-gradient norm `||grad F(w_t)||^2` on the probe batch,
    /// measured before the round's update.
    pub grad_norm_est: f64,
    pub ledger: Vec<LedgerRecord>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: SplitModel,
    pub traces: Vec<RoundTrace>,
    pub ledger: CommLedger,
}

pub fn train(
    model: &SplitModel,
    federation: &Federation,
    cfg: &TrainingConfig,
) -> Result<TrainOutput> {
    train_with(model, federation, cfg, |_, _| Ok(()))
}

/// Like [`train`], calling `observer(round, model)` after every round.
pub fn train_with<F>(
    model: &SplitModel,
    federation: &Federation,
    cfg: &TrainingConfig,
    mut observer: F,
) -> Result<TrainOutput>
where
    F: FnMut(usize, &SplitModel) -> Result<()>,
{
    cfg.validate()?;
    ensure!(
        !federation.is_empty(),
        Contract,
        "federation has no clients"
    );
    ensure!(
        federation.input_dim == model.client.input_dim(),
        Shape,
        "data has {} features, client network expects {}",
        federation.input_dim,
        model.client.input_dim()
    );
    if let Some(q) = &cfg.quantizer {
        q.validate_for(model.cut_dim())?;
    }
    ensure!(
        cfg.clients_per_round <= federation.len(),
        Config,
        "clients_per_round = {} exceeds the {} clients",
        cfg.clients_per_round,
        federation.len()
    );

    let probe = probe_batch(federation, cfg.probe_size, cfg.seed)?;
    let mut sampler = RoundSampler::new(cfg.seed);
    let mut current = model.clone();
    let mut traces = Vec::with_capacity(cfg.rounds);
    let mut ledger = CommLedger::new();

    for t in 0..cfg.rounds {
        let grad_norm_est = match &probe {
            Some((x, y)) => current.merged().loss_and_grad(x, y)?.1.squared_norm(),
            None => f64::NAN,
        };
        let batches = sampler.sample(federation, cfg.clients_per_round, cfg.batch_size)?;
        let mut outcome = if cfg.quantizer.is_some() {
            round_fedlite(&current, &batches, cfg, t)?
        } else {
            round_splitfed(&current, &batches, cfg)?
        };
        for rec in &mut outcome.ledger_delta {
            rec.round = t;
        }
        ledger.append(&outcome.ledger_delta);
        traces.push(RoundTrace {
            round: t,
            loss: outcome.loss,
            kappa_max: outcome.kappa.iter().copied().fold(0.0, f64::max),
            kappa: outcome.kappa,
            grad_norm_est,
            ledger: outcome.ledger_delta,
        });
        current = outcome.model;
        observer(t, &current)?;
    }
    Ok(TrainOutput {
        model: current,
        traces,
        ledger,
    })
}

fn probe_batch(
    federation: &Federation,
    size: usize,
    seed: u64,
) -> Result<Option<(Matrix, Vec<usize>)>> {
    if size == 0 {
        return Ok(None);
    }
    let pooled: Vec<_> = federation.pooled().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut picks = index::sample(&mut rng, pooled.len(), size.min(pooled.len())).into_vec();
    picks.sort_unstable();
    Ok(Some(stack_samples(picks.iter().map(|&i| pooled[i]))?))
}

/// Writes `round,loss,kappa_max,grad_norm_est`.
pub fn write_trace_csv<W: Write>(traces: &[RoundTrace], mut out: W) -> Result<()> {
    writeln!(out, "round,loss,kappa_max,grad_norm_est")?;
    for t in traces {
        writeln!(
            out,
            "{},{:?},{:?},{:?}",
            t.round, t.loss, t.kappa_max, t.grad_norm_est
        )?;
    }
    Ok(())
}

/// Top-1 accuracy of the unsplit model.
pub fn accuracy(model: &SplitModel, inputs: &Matrix, labels: &[usize]) -> Result<f64> {
    let z = model.client.predict(inputs)?;
    let logits = model.server.predict(&z)?;
    let pred = crate::nn::argmax_columns(&logits);
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}
