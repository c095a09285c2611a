//! Experiment plumbing: resolved specs, single runs and parameter sweeps.
//!
//! A single run writes into its output directory:
//!
//! * `trace.csv`: `round,loss,kappa_max,grad_norm_est`
//! * `ledger.csv`: per-round, per-client bit counts
//! * `eval.csv`: `round,accuracy,loss` on the held-out split
//! * `diagnostics.json`: estimated bound constants and the bound (optional)
//! * `summary.json`: final metrics
//!
//! A sweep runs one such directory per `(q, R, L, lambda)` point under
//! `points/` and consolidates them into `sweep.csv`.

pub mod config;
pub mod tradeoff;

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use config::{ConfigFile, ENV_PREFIX};
pub use tradeoff::{tradeoff_table, write_tradeoff_csv, QuantizerFamily, TradeoffRow};

use crate::analysis::{estimate_constants, kappa_trajectory, Diagnostics, EstimateOptions};
use crate::error::{ensure, Error, Result};
use crate::federation::{
    generate_synthetic, load_csv, partition, CsvSchema, Dataset, Federation, PartitionMode,
    SyntheticSpec,
};
use crate::nn::{stack_samples, Activation, SplitModel};
use crate::quantizer::{compression_ratio, message_bits, QuantizerConfig};
use crate::trainer::{accuracy, train_with, write_trace_csv, TrainingConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum TaskSpec {
    Synthetic(SyntheticSpec),
    Csv { path: PathBuf, schema: CsvSchema },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// Hidden widths of the client half, before the cut layer.
    pub client_hidden: Vec<usize>,
    /// `d`
    pub cut_dim: usize,
    /// Hidden widths of the server half, before the head.
    pub server_hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub cut_activation: Activation,
}

impl ModelSpec {
    pub fn build(&self, input_dim: usize, num_classes: usize, seed: u64) -> Result<SplitModel> {
        let mut client = vec![input_dim];
        client.extend(&self.client_hidden);
        client.push(self.cut_dim);
        let mut server = vec![self.cut_dim];
        server.extend(&self.server_hidden);
        server.push(num_classes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(3);
        SplitModel::mlp(
            &client,
            &server,
            self.hidden_activation,
            self.cut_activation,
            &mut rng,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepGrid {
    pub subvectors: Vec<usize>,
    pub groups: Vec<usize>,
    pub centroids: Vec<usize>,
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsSpec {
    pub estimate_seeds: usize,
    pub curvature_examples: usize,
}

/// A fully resolved and validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub task: TaskSpec,
    pub data_seed: u64,
    pub num_clients: usize,
    pub partition: PartitionMode,
    pub holdout_fraction: f64,
    pub model: ModelSpec,
    pub training: TrainingConfig,
    pub sweep: SweepGrid,
    /// Rounds between held-out evaluations.
    pub eval_every: usize,
    pub diagnostics: Option<DiagnosticsSpec>,
    pub out_dir: PathBuf,
    pub workers: usize,
}

fn field<T, E: std::fmt::Display>(name: &str, r: std::result::Result<T, E>) -> Result<T> {
    r.map_err(|e| Error::Config(format!("field `{name}`: {e}")))
}

impl ExperimentSpec {
    pub fn from_config(c: &ConfigFile) -> Result<Self> {
        let task = match c.task.as_str() {
            "synthetic" => TaskSpec::Synthetic(SyntheticSpec {
                num_classes: c.classes,
                input_dim: c.input_dim,
                samples_per_class: c.samples_per_class,
                spread: c.spread,
                noise: c.noise,
                seed: c.data_seed,
            }),
            "csv" => TaskSpec::Csv {
                path: c.csv_path.clone().ok_or_else(|| {
                    Error::Config("field `csv_path`: required for task = \"csv\"".into())
                })?,
                schema: CsvSchema {
                    label_column: c.label_column.clone(),
                    num_classes: c.num_classes,
                },
            },
            other => {
                return Err(Error::Config(format!(
                    "field `task`: unknown task `{other}` (expected \"synthetic\" or \"csv\")"
                )))
            }
        };
        let quantizer = QuantizerConfig {
            phi: c.phi,
            ..QuantizerConfig::new(c.subvectors, c.groups, c.centroids)
        };
        let spec = Self {
            task,
            data_seed: c.data_seed,
            num_clients: c.clients,
            partition: field("partition", c.partition.parse())?,
            holdout_fraction: c.holdout,
            model: ModelSpec {
                client_hidden: c.client_hidden.clone(),
                cut_dim: c.cut_dim,
                server_hidden: c.server_hidden.clone(),
                hidden_activation: field("hidden_activation", c.hidden_activation.parse())?,
                cut_activation: field("cut_activation", c.cut_activation.parse())?,
            },
            training: TrainingConfig {
                eta_client: c.eta_client,
                eta_server: c.eta_server,
                lambda: c.lambda,
                batch_size: c.batch_size,
                clients_per_round: c.clients_per_round,
                rounds: c.rounds,
                quantizer: c.quantize.then_some(quantizer),
                seed: c.seed,
                phi: c.phi,
                probe_size: c.probe_size,
            },
            sweep: SweepGrid {
                subvectors: c.sweep_subvectors.clone(),
                groups: c.sweep_groups.clone(),
                centroids: c.sweep_centroids.clone(),
                lambdas: c.sweep_lambda.clone(),
            },
            eval_every: c.eval_every,
            diagnostics: c.diagnostics.then_some(DiagnosticsSpec {
                estimate_seeds: c.estimate_seeds,
                curvature_examples: c.curvature_examples,
            }),
            out_dir: c.out_dir.clone(),
            workers: c.workers,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Field-level checks that need no data.
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.num_clients >= 1,
            Config,
            "field `clients`: must be at least 1"
        );
        ensure!(
            self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0,
            Config,
            "field `holdout`: must lie in (0, 1), got {}",
            self.holdout_fraction
        );
        ensure!(
            self.model.cut_dim >= 1,
            Config,
            "field `cut_dim`: must be at least 1"
        );
        ensure!(
            self.model
                .client_hidden
                .iter()
                .chain(&self.model.server_hidden)
                .all(|&w| w >= 1),
            Config,
            "fields `client_hidden` / `server_hidden`: widths must be positive"
        );
        ensure!(
            self.model.hidden_activation != Activation::SoftmaxCrossEntropy
                && self.model.cut_activation != Activation::SoftmaxCrossEntropy,
            Config,
            "fields `hidden_activation` / `cut_activation`: softmax is reserved for the head"
        );
        ensure!(
            self.eval_every >= 1,
            Config,
            "field `eval_every`: must be at least 1"
        );
        ensure!(
            self.workers >= 1,
            Config,
            "field `workers`: must be at least 1"
        );
        ensure!(
            self.training.clients_per_round <= self.num_clients,
            Config,
            "field `clients_per_round`: {} exceeds clients = {}",
            self.training.clients_per_round,
            self.num_clients
        );
        if let TaskSpec::Synthetic(s) = &self.task {
            ensure!(
                s.num_classes >= 2,
                Config,
                "field `classes`: need at least 2 classes"
            );
        }
        self.training
            .validate()
            .map_err(|e| Error::Config(format!("training: {e}")))?;
        if let Some(q) = &self.training.quantizer {
            q.validate_for(self.model.cut_dim).map_err(|e| {
                Error::Config(format!("fields `subvectors`/`groups`/`centroids`: {e}"))
            })?;
        }
        if let Some(d) = &self.diagnostics {
            ensure!(
                d.estimate_seeds >= 1,
                Config,
                "field `estimate_seeds`: must be at least 1"
            );
        }
        Ok(())
    }

    /// Loads the dataset and splits it into the federation and the held-out
    /// evaluation set.
    pub fn prepare_data(&self) -> Result<(Federation, Dataset)> {
        let data = match &self.task {
            TaskSpec::Synthetic(s) => generate_synthetic(s)?,
            TaskSpec::Csv { path, schema } => load_csv(path, schema)?,
        };
        let (train, holdout) = data.split_holdout(self.holdout_fraction, self.data_seed)?;
        let federation = partition(&train, self.num_clients, self.partition, self.data_seed)?;
        Ok((federation, holdout))
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EvalRow {
    /// Rounds completed when evaluated.
    pub round: usize,
    pub accuracy: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RunSummary {
    pub rounds: usize,
    pub quantizer: Option<QuantizerConfig>,
    pub lambda: f64,
    pub final_accuracy: f64,
    pub final_eval_loss: f64,
    /// Training loss of the last round.
    pub final_loss: f64,
    pub max_kappa: f64,
    pub total_uplink_bits: u64,
    pub total_downlink_bits: u64,
    pub ideal_ratio: Option<f64>,
    pub wire_ratio: Option<f64>,
    pub bound: Option<f64>,
}

fn evaluate(model: &SplitModel, holdout: &Dataset) -> Result<(f64, f64)> {
    let (x, y) = stack_samples(holdout.samples.iter())?;
    let acc = accuracy(model, &x, &y)?;
    let (loss, _, _) = model.merged().loss_and_grad(&x, &y)?;
    Ok((acc, loss))
}

fn write_eval_csv(rows: &[EvalRow], path: &Path) -> Result<()> {
    let mut out = String::from("round,accuracy,loss\n");
    for r in rows {
        out.push_str(&format!("{},{:?},{:?}\n", r.round, r.accuracy, r.loss));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Trains once and writes the run's files into `out_dir`.
pub fn run_single(spec: &ExperimentSpec, out_dir: &Path) -> Result<RunSummary> {
    spec.validate()?;
    let (federation, holdout) = spec.prepare_data()?;
    let model = spec.model.build(
        federation.input_dim,
        federation.num_classes,
        spec.training.seed,
    )?;
    std::fs::create_dir_all(out_dir)?;

    let rounds = spec.training.rounds;
    let mut evals = Vec::new();
    let (acc0, loss0) = evaluate(&model, &holdout)?;
    evals.push(EvalRow {
        round: 0,
        accuracy: acc0,
        loss: loss0,
    });
    let output = train_with(&model, &federation, &spec.training, |t, m| {
        let done = t + 1;
        if done % spec.eval_every == 0 || done == rounds {
            let (accuracy, loss) = evaluate(m, &holdout)?;
            evals.push(EvalRow {
                round: done,
                accuracy,
                loss,
            });
        }
        Ok(())
    })?;

    write_trace_csv(
        &output.traces,
        std::fs::File::create(out_dir.join("trace.csv"))?,
    )?;
    output.ledger.save_csv(&out_dir.join("ledger.csv"))?;
    write_eval_csv(&evals, &out_dir.join("eval.csv"))?;

    let max_kappa = if output.traces.is_empty() {
        0.0
    } else {
        kappa_trajectory(&output.traces)?.max
    };

    let bound = match &spec.diagnostics {
        Some(d) => {
            let probe: Vec<_> = federation.pooled().cloned().collect();
            let estimates = estimate_constants(
                &model,
                &probe,
                &EstimateOptions {
                    num_seeds: d.estimate_seeds,
                    batch_size: spec.training.batch_size,
                    clients_per_round: spec.training.clients_per_round,
                    rounds: rounds.max(1),
                    lambda: spec.training.lambda,
                    kappa: max_kappa,
                    curvature_examples: d.curvature_examples,
                    seed: spec.training.seed,
                    ..Default::default()
                },
            )?;
            let diag = Diagnostics::new(&estimates, &output.traces);
            diag.save_json(&out_dir.join("diagnostics.json"))?;
            Some(diag.bound)
        }
        None => None,
    };

    let d = model.cut_dim();
    let b = spec.training.batch_size;
    let phi = spec.training.phi;
    let (ideal_ratio, wire_ratio) = match &spec.training.quantizer {
        Some(q) => {
            let bits = message_bits(&QuantizerConfig { phi, ..*q }, d, b);
            (
                Some(compression_ratio(phi, d, b, bits.ideal)),
                Some(compression_ratio(phi, d, b, bits.wire as f64)),
            )
        }
        None => (None, None),
    };
    let last = evals.last().expect("initial evaluation always recorded");
    let totals = output.ledger.totals();
    let summary = RunSummary {
        rounds,
        quantizer: spec.training.quantizer,
        lambda: spec.training.lambda,
        final_accuracy: last.accuracy,
        final_eval_loss: last.loss,
        final_loss: output.traces.last().map_or(f64::NAN, |t| t.loss),
        max_kappa,
        total_uplink_bits: totals.uplink_bits(),
        total_downlink_bits: totals.downlink_bits,
        ideal_ratio,
        wire_ratio,
        bound,
    };
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    Ok(summary)
}

/// One `(q, R, L, lambda)` grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub quantizer: QuantizerConfig,
    pub lambda: f64,
}

impl SweepPoint {
    pub fn dir_name(&self) -> String {
        format!(
            "q{}_r{}_l{}_lambda{}",
            self.quantizer.subvectors, self.quantizer.groups, self.quantizer.centroids, self.lambda
        )
    }

    fn sort_key(&self) -> (usize, usize, usize, f64) {
        (
            self.quantizer.subvectors,
            self.quantizer.groups,
            self.quantizer.centroids,
            self.lambda,
        )
    }
}

/// Expands the grid, dropping `(q, R)` pairs with `q` not dividing `d` or `R`
/// not dividing `q`. Other invalid values are errors.
pub fn sweep_points(spec: &ExperimentSpec) -> Result<Vec<SweepPoint>> {
    let g = &spec.sweep;
    ensure!(
        !g.subvectors.is_empty() && !g.groups.is_empty() && !g.centroids.is_empty() && !g.lambdas.is_empty(),
        Config,
        "fields `sweep_subvectors`, `sweep_groups`, `sweep_centroids`, `sweep_lambda` must all be non-empty"
    );
    ensure!(
        g.centroids.iter().all(|&l| l >= 1),
        Config,
        "field `sweep_centroids`: L must be at least 1"
    );
    ensure!(
        g.lambdas.iter().all(|&l| l >= 0.0 && l.is_finite()),
        Config,
        "field `sweep_lambda`: lambda must be non-negative"
    );
    ensure!(
        g.subvectors.iter().chain(&g.groups).all(|&v| v >= 1),
        Config,
        "fields `sweep_subvectors` / `sweep_groups`: values must be at least 1"
    );
    let d = spec.model.cut_dim;
    let mut points = Vec::new();
    for &q in &g.subvectors {
        for &r in &g.groups {
            if !d.is_multiple_of(q) || q % r != 0 {
                log::info!("skipping q = {q}, R = {r}: needs q | d = {d} and R | q");
                continue;
            }
            for &l in &g.centroids {
                for &lambda in &g.lambdas {
                    points.push(SweepPoint {
                        quantizer: QuantizerConfig {
                            phi: spec.training.phi,
                            ..QuantizerConfig::new(q, r, l)
                        },
                        lambda,
                    });
                }
            }
        }
    }
    ensure!(
        !points.is_empty(),
        Config,
        "the sweep grid has no valid (q, R) pair for d = {d}"
    );
    points.sort_by(|a, b| {
        a.sort_key()
            .partial_cmp(&b.sort_key())
            .expect("finite lambdas")
    });
    points.dedup();
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SweepRow {
    pub q: usize,
    pub r: usize,
    pub l: usize,
    pub lambda: f64,
    pub ideal_ratio: f64,
    pub wire_ratio: f64,
    pub final_accuracy: f64,
    pub final_loss: f64,
    pub max_kappa: f64,
    pub total_uplink_bits: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepFailure {
    pub point: SweepPoint,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Sorted by `(q, R, L, lambda)`.
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

impl SweepResult {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "q,R,L,lambda,ideal_ratio,wire_ratio,final_accuracy,final_loss,max_kappa,total_uplink_bits"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{}",
                r.q,
                r.r,
                r.l,
                r.lambda,
                r.ideal_ratio,
                r.wire_ratio,
                r.final_accuracy,
                r.final_loss,
                r.max_kappa,
                r.total_uplink_bits
            )?;
        }
        Ok(())
    }
}

/// Runs every grid point on `spec.workers` threads. Each point writes its own
/// directory under `out_dir/points`; failed points are collected, not fatal.
pub fn run_sweep(spec: &ExperimentSpec, out_dir: &Path) -> Result<SweepResult> {
    spec.validate()?;
    let points = sweep_points(spec)?;
    std::fs::create_dir_all(out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::Config(format!("field `workers`: {e}")))?;

    let failures = Mutex::new(Vec::new());
    let mut rows: Vec<(usize, SweepRow)> = pool.install(|| {
        points
            .par_iter()
            .enumerate()
            .filter_map(|(i, p)| {
                let mut point_spec = spec.clone();
                point_spec.training.quantizer = Some(p.quantizer);
                point_spec.training.lambda = p.lambda;
                let dir = out_dir.join("points").join(p.dir_name());
                match run_single(&point_spec, &dir) {
                    Ok(s) => Some((
                        i,
                        SweepRow {
                            q: p.quantizer.subvectors,
                            r: p.quantizer.groups,
                            l: p.quantizer.centroids,
                            lambda: p.lambda,
                            ideal_ratio: s.ideal_ratio.expect("quantized run"),
                            wire_ratio: s.wire_ratio.expect("quantized run"),
                            final_accuracy: s.final_accuracy,
                            final_loss: s.final_loss,
                            max_kappa: s.max_kappa,
                            total_uplink_bits: s.total_uplink_bits,
                        },
                    )),
                    Err(e) => {
                        log::error!("sweep point {} failed: {e}", p.dir_name());
                        failures.lock().expect("no poisoned lock").push((
                            i,
                            SweepFailure {
                                point: *p,
                                error: e.to_string(),
                            },
                        ));
                        None
                    }
                }
            })
            .collect()
    });
    rows.sort_by_key(|(i, _)| *i);
    let mut failures = failures.into_inner().expect("no poisoned lock");
    failures.sort_by_key(|(i, _)| *i);

    let result = SweepResult {
        rows: rows.into_iter().map(|(_, r)| r).collect(),
        failures: failures.into_iter().map(|(_, f)| f).collect(),
    };
    result.write_csv(std::fs::File::create(out_dir.join("sweep.csv"))?)?;
    if !result.failures.is_empty() {
        let mut text = String::from("q,R,L,lambda,error\n");
        for f in &result.failures {
            text.push_str(&format!(
                "{},{},{},{:?},\"{}\"\n",
                f.point.quantizer.subvectors,
                f.point.quantizer.groups,
                f.point.quantizer.centroids,
                f.point.lambda,
                f.error.replace('"', "'")
            ));
        }
        std::fs::write(out_dir.join("sweep_failures.csv"), text)?;
    }
    Ok(result)
}
