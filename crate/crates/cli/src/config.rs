//! Run configuration: a diffable plain-text file of `key = value` lines with
//! `#` comments. Parsing and serialization round-trip losslessly, and the
//! defaults are the published training protocol (learning rate 0.001 decayed
//! by 0.7 every 5 epochs, batch 50, 50 epochs, attention dim 32, kernel 3,
//! 64 channels).

use std::fmt::Write as _;
use std::path::Path;

use stemgnn::error::{Error, Result};
use stemgnn::model::AblationFlags;
use stemgnn::persist::fnv1a;
use stemgnn::training::{NormKind, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<String>,
    pub adjacency: Option<String>,
    pub output_dir: String,
    pub normalization: NormKind,
    pub window: usize,
    pub horizon: usize,
    pub head_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub rho: f64,
    pub epsilon: f64,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
    pub seed: u64,
    pub channels: usize,
    pub basis_count: usize,
    pub attention_dim: usize,
    pub gru_hidden: usize,
    pub kernel_size: usize,
    pub tied_gate: bool,
    pub freeze_graph: bool,
    /// Recompute the learned graph at every rolling step.
    pub rolling_recompute: bool,
    pub without_lc: bool,
    pub without_spe_seq: bool,
    pub without_dft: bool,
    pub without_gft: bool,
    pub without_residual: bool,
    pub without_backcast: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            adjacency: None,
            output_dir: "out".into(),
            normalization: NormKind::ZScore,
            window: 12,
            horizon: 1,
            head_len: 1,
            epochs: 50,
            batch_size: 50,
            learning_rate: 0.001,
            decay_factor: 0.7,
            decay_every: 5,
            rho: 0.9,
            epsilon: 1e-8,
            train_ratio: 0.6,
            val_ratio: 0.2,
            test_ratio: 0.2,
            seed: 0,
            channels: 64,
            basis_count: 16,
            attention_dim: 32,
            gru_hidden: 32,
            kernel_size: 3,
            tied_gate: false,
            freeze_graph: false,
            rolling_recompute: true,
            without_lc: false,
            without_spe_seq: false,
            without_dft: false,
            without_gft: false,
            without_residual: false,
            without_backcast: false,
        }
    }
}

impl RunConfig {
    pub fn ablation(&self) -> AblationFlags {
        AblationFlags {
            without_latent_correlation: self.without_lc,
            without_spe_seq: self.without_spe_seq,
            without_dft: self.without_dft,
            without_gft: self.without_gft,
            without_residual: self.without_residual,
            without_backcast: self.without_backcast,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            window: self.window,
            head_len: self.head_len,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            decay_factor: self.decay_factor,
            decay_every: self.decay_every,
            rho: self.rho,
            epsilon: self.epsilon,
            ratios: (self.train_ratio, self.val_ratio, self.test_ratio),
            seed: self.seed,
            channels: self.channels,
            basis_count: self.basis_count,
            attention_dim: self.attention_dim,
            gru_hidden: self.gru_hidden,
            kernel_size: self.kernel_size,
            tied_gate: self.tied_gate,
            normalization: self.normalization,
            ablation: self.ablation(),
            freeze_graph: self.freeze_graph,
        }
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str("# forecasting run configuration\n");
        if let Some(d) = &self.dataset {
            writeln!(out, "dataset = {d}").unwrap();
        }
        if let Some(a) = &self.adjacency {
            writeln!(out, "adjacency = {a}").unwrap();
        }
        writeln!(out, "output_dir = {}", self.output_dir).unwrap();
        writeln!(out, "normalization = {}", self.normalization).unwrap();
        writeln!(out, "window = {}", self.window).unwrap();
        writeln!(out, "horizon = {}", self.horizon).unwrap();
        writeln!(out, "head_len = {}", self.head_len).unwrap();
        writeln!(out, "epochs = {}", self.epochs).unwrap();
        writeln!(out, "batch_size = {}", self.batch_size).unwrap();
        writeln!(out, "learning_rate = {}", self.learning_rate).unwrap();
        writeln!(out, "decay_factor = {}", self.decay_factor).unwrap();
        writeln!(out, "decay_every = {}", self.decay_every).unwrap();
        writeln!(out, "rho = {}", self.rho).unwrap();
        writeln!(out, "epsilon = {}", self.epsilon).unwrap();
        writeln!(out, "train_ratio = {}", self.train_ratio).unwrap();
        writeln!(out, "val_ratio = {}", self.val_ratio).unwrap();
        writeln!(out, "test_ratio = {}", self.test_ratio).unwrap();
        writeln!(out, "seed = {}", self.seed).unwrap();
        writeln!(out, "channels = {}", self.channels).unwrap();
        writeln!(out, "basis_count = {}", self.basis_count).unwrap();
        writeln!(out, "attention_dim = {}", self.attention_dim).unwrap();
        writeln!(out, "gru_hidden = {}", self.gru_hidden).unwrap();
        writeln!(out, "kernel_size = {}", self.kernel_size).unwrap();
        writeln!(out, "tied_gate = {}", self.tied_gate).unwrap();
        writeln!(out, "freeze_graph = {}", self.freeze_graph).unwrap();
        writeln!(out, "rolling_recompute = {}", self.rolling_recompute).unwrap();
        writeln!(out, "without_lc = {}", self.without_lc).unwrap();
        writeln!(out, "without_spe_seq = {}", self.without_spe_seq).unwrap();
        writeln!(out, "without_dft = {}", self.without_dft).unwrap();
        writeln!(out, "without_gft = {}", self.without_gft).unwrap();
        writeln!(out, "without_residual = {}", self.without_residual).unwrap();
        writeln!(out, "without_backcast = {}", self.without_backcast).unwrap();
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value', got '{raw}'", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| Error::Config(format!("line {}: bad {what} '{value}'", lineno + 1));
            match key {
                "dataset" => cfg.dataset = Some(value.to_string()),
                "adjacency" => cfg.adjacency = Some(value.to_string()),
                "output_dir" => cfg.output_dir = value.to_string(),
                "normalization" => cfg.normalization = value.parse()?,
                "window" => cfg.window = value.parse().map_err(|_| bad("integer"))?,
                "horizon" => cfg.horizon = value.parse().map_err(|_| bad("integer"))?,
                "head_len" => cfg.head_len = value.parse().map_err(|_| bad("integer"))?,
                "epochs" => cfg.epochs = value.parse().map_err(|_| bad("integer"))?,
                "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad("integer"))?,
                "learning_rate" => cfg.learning_rate = value.parse().map_err(|_| bad("number"))?,
                "decay_factor" => cfg.decay_factor = value.parse().map_err(|_| bad("number"))?,
                "decay_every" => cfg.decay_every = value.parse().map_err(|_| bad("integer"))?,
                "rho" => cfg.rho = value.parse().map_err(|_| bad("number"))?,
                "epsilon" => cfg.epsilon = value.parse().map_err(|_| bad("number"))?,
                "train_ratio" => cfg.train_ratio = value.parse().map_err(|_| bad("number"))?,
                "val_ratio" => cfg.val_ratio = value.parse().map_err(|_| bad("number"))?,
                "test_ratio" => cfg.test_ratio = value.parse().map_err(|_| bad("number"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("integer"))?,
                "channels" => cfg.channels = value.parse().map_err(|_| bad("integer"))?,
                "basis_count" => cfg.basis_count = value.parse().map_err(|_| bad("integer"))?,
                "attention_dim" => cfg.attention_dim = value.parse().map_err(|_| bad("integer"))?,
                "gru_hidden" => cfg.gru_hidden = value.parse().map_err(|_| bad("integer"))?,
                "kernel_size" => cfg.kernel_size = value.parse().map_err(|_| bad("integer"))?,
                "tied_gate" => cfg.tied_gate = value.parse().map_err(|_| bad("bool"))?,
                "freeze_graph" => cfg.freeze_graph = value.parse().map_err(|_| bad("bool"))?,
                "rolling_recompute" => cfg.rolling_recompute = value.parse().map_err(|_| bad("bool"))?,
                "without_lc" => cfg.without_lc = value.parse().map_err(|_| bad("bool"))?,
                "without_spe_seq" => cfg.without_spe_seq = value.parse().map_err(|_| bad("bool"))?,
                "without_dft" => cfg.without_dft = value.parse().map_err(|_| bad("bool"))?,
                "without_gft" => cfg.without_gft = value.parse().map_err(|_| bad("bool"))?,
                "without_residual" => cfg.without_residual = value.parse().map_err(|_| bad("bool"))?,
                "without_backcast" => cfg.without_backcast = value.parse().map_err(|_| bad("bool"))?,
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key '{other}'",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.serialize())?;
        Ok(())
    }

    /// Stable hex fingerprint of the serialized configuration.
    pub fn fingerprint(&self) -> String {
        format!("{:016x}", fnv1a(self.serialize().as_bytes()))
    }
}
