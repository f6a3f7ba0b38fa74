//! Run configuration, read from JSON. Every field has a default and unknown
//! keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aed::AedDims;
use crate::data::DataConfig;
use crate::error::{contract, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub enc_layers: usize,
    pub enc_hidden: usize,
    /// Width shared by the projected encoder output, embeddings and decoder.
    pub dim: usize,
    pub dec_layers: usize,
    pub att_dim: usize,
    pub disc_hidden: usize,
    pub disc_layers: usize,
    pub init_range: f64,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            enc_layers: 2,
            enc_hidden: 24,
            dim: 24,
            dec_layers: 2,
            att_dim: 24,
            disc_hidden: 32,
            disc_layers: 2,
            init_range: 0.08,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn dims(&self, feat: usize, vocab: usize) -> AedDims {
        AedDims {
            feat,
            vocab,
            enc_layers: self.enc_layers,
            enc_hidden: self.enc_hidden,
            dim: self.dim,
            dec_layers: self.dec_layers,
            att_dim: self.att_dim,
            ln_eps: self.ln_eps,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Rescale the batch gradient to this global norm when exceeded.
    pub clip_norm: Option<f64>,
    /// Epoch `e` runs at `lr * lr_decay^e`.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            lr: 5e-3,
            epochs: 20,
            batch_size: 4,
            clip_norm: Some(5.0),
            lr_decay: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return contract("learning rate must be positive");
        }
        if self.batch_size == 0 {
            return contract("batch_size must be at least 1");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return contract("lr_decay must be in (0, 1]");
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return contract("clip_norm must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub lr: f64,
    pub disc_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Global gradient norm cap for the adapted parameters.
    pub clip_norm: Option<f64>,
    pub rho: f64,
    pub lambda: f64,
    pub beta: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            lr: 0.005,
            disc_lr: 0.05,
            epochs: 20,
            batch_size: 4,
            clip_norm: Some(1.0),
            rho: 0.2,
            lambda: 0.5,
            beta: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub beam_width: usize,
    pub max_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_width: 4,
            max_len: 12,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Supervision {
    Sup,
    Unsup,
}

impl Supervision {
    pub fn as_str(self) -> &'static str {
        match self {
            Supervision::Sup => "sup",
            Supervision::Unsup => "unsup",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub kld_weights: Vec<f64>,
    pub asa_weights: Vec<f64>,
    pub mtl_weights: Vec<f64>,
    pub sizes: Vec<usize>,
    pub supervision: Vec<Supervision>,
    pub seeds: Vec<u64>,
    /// Held-out speakers to adapt to; empty means all.
    pub speakers: Vec<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            kld_weights: vec![0.2],
            asa_weights: vec![0.5],
            mtl_weights: vec![0.5],
            sizes: vec![20, 40],
            supervision: vec![Supervision::Sup, Supervision::Unsup],
            seeds: vec![1, 2, 3],
            speakers: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub char_train: TrainConfig,
    pub adapt: AdaptConfig,
    pub decode: DecodeConfig,
    pub grid: GridConfig,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        self.char_train.validate()?;
        let a = &self.adapt;
        if !(a.lr > 0.0) || !(a.disc_lr > 0.0) || a.batch_size == 0 {
            return contract("adaptation lr, disc_lr and batch_size must be positive");
        }
        if a.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return contract("adaptation clip_norm must be positive");
        }
        self.model
            .dims(self.data.feat_dim(), 3)
            .validate()?;
        if self.model.disc_layers == 0 || self.model.disc_hidden == 0 {
            return contract("discriminator needs at least one hidden layer");
        }
        if self.decode.beam_width == 0 || self.decode.max_len == 0 {
            return contract("beam_width and max_len must be at least 1");
        }
        Ok(())
    }
}
