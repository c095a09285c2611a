//! Experiment configuration files.
//!
//! A config is a flat list of `key = value` lines in TOML syntax. Every key is
//! optional. Any key can be overridden from the environment as
//! `FEDLITE_<KEY>`, e.g. `FEDLITE_ROUNDS=50` or `FEDLITE_SWEEP_CENTROIDS=[2,4]`;
//! values that are not valid TOML are taken as strings.
//!
//! ```text
//! # data
//! task = "synthetic"          # or "csv"
//! csv_path = "data.csv"       # csv only
//! label_column = "label"      # csv only, defaults to the last column
//! num_classes = 10            # csv only, inferred when absent
//! classes = 4                 # synthetic only
//! input_dim = 16
//! samples_per_class = 150
//! spread = 3.0
//! noise = 1.0
//! data_seed = 7               # data generation, holdout split, partition
//! clients = 10
//! partition = "iid"           # or "shard:<k>"
//! holdout = 0.1
//!
//! # model
//! client_hidden = [32]
//! cut_dim = 16
//! server_hidden = [32]
//! hidden_activation = "tanh"
//! cut_activation = "relu"
//!
//! # training
//! eta_client = 0.1
//! eta_server = 0.1
//! lambda = 0.0
//! batch_size = 20
//! clients_per_round = 4
//! rounds = 100
//! quantize = false
//! subvectors = 4
//! groups = 1
//! centroids = 4
//! phi = 64
//! probe_size = 64
//! seed = 0
//! eval_every = 10
//!
//! # sweep grids
//! sweep_subvectors = [1, 4, 16]
//! sweep_groups = [1]
//! sweep_centroids = [2, 4]
//! sweep_lambda = [0.0]
//!
//! # diagnostics
//! diagnostics = true
//! estimate_seeds = 4
//! curvature_examples = 4
//!
//! # output
//! out_dir = "out"
//! workers = 1
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ENV_PREFIX: &str = "FEDLITE_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub task: String,
    pub csv_path: Option<PathBuf>,
    pub label_column: Option<String>,
    pub num_classes: Option<usize>,
    pub classes: usize,
    pub input_dim: usize,
    pub samples_per_class: usize,
    pub spread: f64,
    pub noise: f64,
    pub data_seed: u64,
    pub clients: usize,
    pub partition: String,
    pub holdout: f64,

    pub client_hidden: Vec<usize>,
    pub cut_dim: usize,
    pub server_hidden: Vec<usize>,
    pub hidden_activation: String,
    pub cut_activation: String,

    pub eta_client: f64,
    pub eta_server: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub clients_per_round: usize,
    pub rounds: usize,
    pub quantize: bool,
    pub subvectors: usize,
    pub groups: usize,
    pub centroids: usize,
    pub phi: u32,
    pub probe_size: usize,
    pub seed: u64,
    pub eval_every: usize,

    pub sweep_subvectors: Vec<usize>,
    pub sweep_groups: Vec<usize>,
    pub sweep_centroids: Vec<usize>,
    pub sweep_lambda: Vec<f64>,

    pub diagnostics: bool,
    pub estimate_seeds: usize,
    pub curvature_examples: usize,

    pub out_dir: PathBuf,
    pub workers: usize,
}

impl Default for ConfigFile {
    fn default() -> Self {
        Self {
            task: "synthetic".into(),
            csv_path: None,
            label_column: None,
            num_classes: None,
            classes: 4,
            input_dim: 16,
            samples_per_class: 150,
            spread: 3.0,
            noise: 1.0,
            data_seed: 7,
            clients: 10,
            partition: "iid".into(),
            holdout: 0.1,
            client_hidden: vec![32],
            cut_dim: 16,
            server_hidden: vec![32],
            hidden_activation: "tanh".into(),
            cut_activation: "relu".into(),
            eta_client: 0.1,
            eta_server: 0.1,
            lambda: 0.0,
            batch_size: 20,
            clients_per_round: 4,
            rounds: 100,
            quantize: false,
            subvectors: 4,
            groups: 1,
            centroids: 4,
            phi: 64,
            probe_size: 64,
            seed: 0,
            eval_every: 10,
            sweep_subvectors: vec![],
            sweep_groups: vec![],
            sweep_centroids: vec![],
            sweep_lambda: vec![],
            diagnostics: true,
            estimate_seeds: 4,
            curvature_examples: 4,
            out_dir: PathBuf::from("out"),
            workers: 1,
        }
    }
}

fn env_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key inserted above"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl ConfigFile {
    /// Parses config text and applies `FEDLITE_*` overrides from `env`.
    pub fn parse<I, K, V>(text: &str, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for (k, v) in env {
            if let Some(key) = k.as_ref().strip_prefix(ENV_PREFIX) {
                table.insert(key.to_ascii_lowercase(), env_value(v.as_ref()));
            }
        }
        table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    /// Reads `path` (or starts from defaults) and applies the process
    /// environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        Self::parse(&text, std::env::vars())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
