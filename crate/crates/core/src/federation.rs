//! Client datasets: synthetic blobs, CSV ingestion and IID / label-shard
//! partitioning.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure, Error, Result};
use crate::nn::DataSample;

/// A labelled dataset with a fixed feature width and class count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<DataSample>,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(samples: Vec<DataSample>, num_classes: usize) -> Result<Self> {
        ensure!(!samples.is_empty(), Domain, "dataset is empty");
        let input_dim = samples[0].features.len();
        for (i, s) in samples.iter().enumerate() {
            ensure!(
                s.features.len() == input_dim,
                Shape,
                "sample {i} has {} features, expected {input_dim}",
                s.features.len()
            );
            ensure!(
                s.label < num_classes,
                Domain,
                "sample {i} has label {} outside [0, {num_classes})",
                s.label
            );
        }
        Ok(Self {
            samples,
            input_dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Seeded random split; the second part holds `round(fraction * n)`
    /// samples (at least one, at most `n - 1`).
    pub fn split_holdout(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        ensure!(
            (0.0..1.0).contains(&fraction) && fraction > 0.0,
            Config,
            "holdout fraction {fraction} must lie in (0, 1)"
        );
        ensure!(
            self.len() >= 2,
            Domain,
            "need at least two samples to split"
        );
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let held = ((fraction * self.len() as f64).round() as usize).clamp(1, self.len() - 1);
        let pick = |ids: &[usize]| Dataset {
            samples: ids.iter().map(|&i| self.samples[i].clone()).collect(),
            input_dim: self.input_dim,
            num_classes: self.num_classes,
        };
        Ok((pick(&idx[held..]), pick(&idx[..held])))
    }

    /// Writes `f0,...,f{n-1},label` with shortest round-trip floats.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (0..self.input_dim)
            .map(|i| format!("f{i}"))
            .chain(std::iter::once("label".to_string()))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for s in &self.samples {
            let mut row: Vec<String> = s.features.iter().map(|v| format!("{v:?}")).collect();
            row.push(s.label.to_string());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub id: usize,
    pub samples: Vec<DataSample>,
}

impl ClientDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Clients with weights `p_i = n_i / sum_j n_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Federation {
    pub clients: Vec<ClientDataset>,
    pub weights: Vec<f64>,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl Federation {
    pub fn new(clients: Vec<ClientDataset>, input_dim: usize, num_classes: usize) -> Result<Self> {
        ensure!(
            !clients.is_empty(),
            Contract,
            "a federation needs at least one client"
        );
        for c in &clients {
            ensure!(!c.is_empty(), Contract, "client {} holds no samples", c.id);
        }
        let total: usize = clients.iter().map(ClientDataset::len).sum();
        let weights = clients
            .iter()
            .map(|c| c.len() as f64 / total as f64)
            .collect();
        Ok(Self {
            clients,
            weights,
            input_dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.clients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }

    pub fn total_samples(&self) -> usize {
        self.clients.iter().map(ClientDataset::len).sum()
    }

    /// All samples, client by client.
    pub fn pooled(&self) -> impl Iterator<Item = &DataSample> {
        self.clients.iter().flat_map(|c| c.samples.iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    pub samples_per_class: usize,
    /// Radius of the sphere the class means are drawn on.
    pub spread: f64,
    /// Standard deviation of the isotropic Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

/// Gaussian blobs, one per class, in class-major order.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    ensure!(
        spec.num_classes >= 1 && spec.input_dim >= 1 && spec.samples_per_class >= 1,
        Config,
        "class count, input dimension and samples per class must be positive"
    );
    ensure!(
        spec.spread >= 0.0 && spec.noise >= 0.0,
        Config,
        "spread and noise must be non-negative"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| loop {
            let v: Vec<f64> = (0..spec.input_dim)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let n = crate::tensor::norm(&v);
            if n > 1e-12 {
                break v.into_iter().map(|x| x * spec.spread / n).collect();
            }
        })
        .collect();
    let mut samples = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    for (label, mean) in means.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            let features = mean
                .iter()
                .map(|&m| {
                    let e: f64 = rng.sample(StandardNormal);
                    m + spec.noise * e
                })
                .collect();
            samples.push(DataSample { features, label });
        }
    }
    Dataset::new(samples, spec.num_classes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionMode {
    Iid,
    /// Sort by label, cut into `M * k` shards, deal `k` shards per client.
    LabelShard {
        shards_per_client: usize,
    },
}

impl std::str::FromStr for PartitionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "iid" {
            return Ok(Self::Iid);
        }
        if let Some(k) = s
            .strip_prefix("shard:")
            .or_else(|| s.strip_prefix("label-shard:"))
        {
            let k = k
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad shard count in `{s}`")))?;
            return Ok(Self::LabelShard {
                shards_per_client: k,
            });
        }
        Err(Error::Config(format!(
            "unknown partition `{s}` (expected `iid` or `shard:<k>`)"
        )))
    }
}

/// Splits `n` items into `parts` contiguous near-equal runs.
fn even_cuts(n: usize, parts: usize) -> Vec<std::ops::Range<usize>> {
    let base = n / parts;
    let extra = n % parts;
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

pub fn partition(
    dataset: &Dataset,
    num_clients: usize,
    mode: PartitionMode,
    seed: u64,
) -> Result<Federation> {
    ensure!(num_clients >= 1, Config, "need at least one client");
    ensure!(
        dataset.len() >= num_clients,
        Config,
        "{} samples cannot fill {num_clients} clients",
        dataset.len()
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let owned: Vec<Vec<usize>> = match mode {
        PartitionMode::Iid => {
            let mut idx: Vec<usize> = (0..dataset.len()).collect();
            idx.shuffle(&mut rng);
            even_cuts(idx.len(), num_clients)
                .into_iter()
                .map(|r| idx[r].to_vec())
                .collect()
        }
        PartitionMode::LabelShard { shards_per_client } => {
            ensure!(
                shards_per_client >= 1,
                Config,
                "shards per client must be positive"
            );
            let shards = num_clients * shards_per_client;
            ensure!(
                shards <= dataset.len(),
                Config,
                "{shards} shards exceed the {} available samples",
                dataset.len()
            );
            let mut idx: Vec<usize> = (0..dataset.len()).collect();
            idx.sort_by_key(|&i| (dataset.samples[i].label, i));
            let mut order: Vec<usize> = (0..shards).collect();
            order.shuffle(&mut rng);
            let cuts = even_cuts(idx.len(), shards);
            order
                .chunks(shards_per_client)
                .map(|group| {
                    let mut mine: Vec<usize> = group
                        .iter()
                        .flat_map(|&s| idx[cuts[s].clone()].iter().copied())
                        .collect();
                    mine.sort_unstable();
                    mine
                })
                .collect()
        }
    };
    let clients = owned
        .into_iter()
        .enumerate()
        .map(|(id, ids)| ClientDataset {
            id,
            samples: ids.iter().map(|&i| dataset.samples[i].clone()).collect(),
        })
        .collect();
    Federation::new(clients, dataset.input_dim, dataset.num_classes)
}

/// Column layout of a CSV dataset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvSchema {
    /// Header name of the label column; the last column when `None`.
    pub label_column: Option<String>,
    /// Declared class count; inferred as `max label + 1` when `None`.
    pub num_classes: Option<usize>,
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Parse {
            line: 1,
            msg: "missing header row".into(),
        });
    }
    let label_idx = match &schema.label_column {
        Some(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                line: 1,
                msg: format!("no column named `{name}`"),
            })?,
        None => headers.len() - 1,
    };
    ensure!(
        headers.len() >= 2,
        Config,
        "need at least one feature column and a label column"
    );

    let mut samples = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != headers.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let mut features = Vec::with_capacity(headers.len() - 1);
        let mut label = None;
        for (i, field) in record.iter().enumerate() {
            if i == label_idx {
                let l: usize = field.parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("label `{field}` is not a non-negative integer"),
                })?;
                label = Some(l);
            } else {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("`{field}` in column `{}` is not a number", &headers[i]),
                })?;
                features.push(v);
            }
        }
        let label = label.expect("label column is within the record");
        if let Some(c) = schema.num_classes {
            if label >= c {
                return Err(Error::Domain(format!(
                    "line {line}: label {label} outside the declared {c} classes"
                )));
            }
        }
        samples.push(DataSample { features, label });
    }
    ensure!(!samples.is_empty(), Domain, "CSV dataset has no rows");
    let num_classes = schema
        .num_classes
        .unwrap_or_else(|| samples.iter().map(|s| s.label).max().unwrap_or(0) + 1);
    Dataset::new(samples, num_classes)
}
