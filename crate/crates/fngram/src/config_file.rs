//! Flat `key = value` run configuration. Keys mirror the model
//! configuration plus the optimizer and schedule; `#` starts a comment.

use std::fs;
use std::path::Path;

use fngram_core::model::{geometric_alpha, ModelConfig};
use fngram_core::training::TrainConfig;

use crate::error::{format_err, io_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Decay used to derive `alpha` when it is not given explicitly.
    pub gamma: f64,
    alpha_given: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { model: ModelConfig::toy(0), train: TrainConfig::default(), gamma: 0.5, alpha_given: false }
    }
}

pub const KEYS: [&str; 21] = [
    "n_future",
    "alpha",
    "gamma",
    "layers_enc",
    "layers_dec",
    "hidden",
    "ffn",
    "heads",
    "max_len",
    "vocab_size",
    "dropout",
    "layer_norm_eps",
    "init_std",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "warmup_steps",
    "batch_size",
    "steps",
    "seed",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("{key}: cannot parse {value:?}"))
}

impl RunConfig {
    /// A configuration that reproduces `model` and `train` exactly, alpha
    /// included.
    pub fn from_parts(model: ModelConfig, train: TrainConfig) -> Self {
        RunConfig { model, train, gamma: 0.5, alpha_given: true }
    }

    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "n_future" => m.n_future = num(key, value)?,
            "alpha" => {
                m.alpha = value.split(',').map(|v| num(key, v.trim())).collect::<std::result::Result<_, _>>()?;
                self.alpha_given = true;
            }
            "gamma" => self.gamma = num(key, value)?,
            "layers_enc" => m.layers_enc = num(key, value)?,
            "layers_dec" => m.layers_dec = num(key, value)?,
            "hidden" => m.hidden = num(key, value)?,
            "ffn" => m.ffn = num(key, value)?,
            "heads" => m.heads = num(key, value)?,
            "max_len" => m.max_len = num(key, value)?,
            "vocab_size" => m.vocab_size = num(key, value)?,
            "dropout" => m.dropout = num(key, value)?,
            "layer_norm_eps" => m.layer_norm_eps = num(key, value)?,
            "init_std" => m.init_std = num(key, value)?,
            "lr" => t.optimizer.lr = num(key, value)?,
            "beta1" => t.optimizer.beta1 = num(key, value)?,
            "beta2" => t.optimizer.beta2 = num(key, value)?,
            "eps" => t.optimizer.eps = num(key, value)?,
            "warmup_steps" => t.optimizer.warmup_steps = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "steps" => t.steps = num(key, value)?,
            "seed" => t.seed = num(key, value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        if !self.alpha_given {
            m.alpha = geometric_alpha(m.n_future, self.gamma);
        }
        Ok(())
    }

    /// Parses `key=value` lines on top of the defaults.
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let section = format!("line {}", i + 1);
            let (k, v) = line.split_once('=').ok_or_else(|| format_err(path, &section, "expected key = value"))?;
            cfg.set(k.trim(), v.trim()).map_err(|m| format_err(path, &section, m))?;
        }
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(path, &text)
    }

    /// Every key with its current value, in `KEYS` order. Floats use the
    /// shortest representation that parses back to the same value.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let (m, t) = (&self.model, &self.train);
        let alpha = m.alpha.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        KEYS.iter()
            .map(|&k| {
                let v = match k {
                    "n_future" => m.n_future.to_string(),
                    "alpha" => alpha.clone(),
                    "gamma" => self.gamma.to_string(),
                    "layers_enc" => m.layers_enc.to_string(),
                    "layers_dec" => m.layers_dec.to_string(),
                    "hidden" => m.hidden.to_string(),
                    "ffn" => m.ffn.to_string(),
                    "heads" => m.heads.to_string(),
                    "max_len" => m.max_len.to_string(),
                    "vocab_size" => m.vocab_size.to_string(),
                    "dropout" => m.dropout.to_string(),
                    "layer_norm_eps" => m.layer_norm_eps.to_string(),
                    "init_std" => m.init_std.to_string(),
                    "lr" => t.optimizer.lr.to_string(),
                    "beta1" => t.optimizer.beta1.to_string(),
                    "beta2" => t.optimizer.beta2.to_string(),
                    "eps" => t.optimizer.eps.to_string(),
                    "warmup_steps" => t.optimizer.warmup_steps.to_string(),
                    "batch_size" => t.batch_size.to_string(),
                    "steps" => t.steps.to_string(),
                    "seed" => t.seed.to_string(),
                    _ => unreachable!(),
                };
                (k, v)
            })
            .collect()
    }

    pub fn render(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
