use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Hyperparameters of the encoder-decoder and its loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Number of decoder streams; stream `j` predicts the token `j` steps
    /// ahead of the usual next token.
    pub n_future: usize,
    /// Loss weight of each stream.
    pub alpha: Vec<f64>,
    pub layers_enc: usize,
    pub layers_dec: usize,
    pub hidden: usize,
    pub ffn: usize,
    pub heads: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub layer_norm_eps: f64,
    pub init_std: f64,
}

/// `alpha_j = gamma^j` for `j` in `0..n`.
pub fn geometric_alpha(n: usize, gamma: f64) -> Vec<f64> {
    let mut w = 1.0;
    (0..n)
        .map(|_| {
            let cur = w;
            w *= gamma;
            cur
        })
        .collect()
}

impl ModelConfig {
    /// Two-layer, 64-wide configuration used for tests and toy runs.
    pub fn toy(vocab_size: usize) -> Self {
        ModelConfig {
            n_future: 2,
            alpha: vec![1.0, 0.5],
            layers_enc: 2,
            layers_dec: 2,
            hidden: 64,
            ffn: 256,
            heads: 4,
            max_len: 64,
            vocab_size,
            dropout: 0.0,
            layer_norm_eps: 1e-5,
            init_std: 0.02,
        }
    }

    /// 12+12 layers, hidden 1024, feed-forward 4096, bigram prediction.
    pub fn large(vocab_size: usize) -> Self {
        ModelConfig {
            layers_enc: 12,
            layers_dec: 12,
            hidden: 1024,
            ffn: 4096,
            heads: 16,
            max_len: 512,
            ..Self::toy(vocab_size)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: alloc::string::String| Err(Error::Config(msg));
        if self.n_future == 0 {
            return fail("n_future must be at least 1".into());
        }
        if self.alpha.len() != self.n_future {
            return fail(format!("alpha has {} weights but n_future is {}", self.alpha.len(), self.n_future));
        }
        if !(self.alpha[0] > 0.0) || self.alpha.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return fail(format!("alpha weights must be finite and nonnegative with alpha[0] > 0: {:?}", self.alpha));
        }
        if self.heads == 0 || self.hidden == 0 || !self.hidden.is_multiple_of(self.heads) {
            return fail(format!("hidden {} is not divisible by heads {}", self.hidden, self.heads));
        }
        if self.ffn == 0 || self.max_len == 0 || self.layers_enc == 0 || self.layers_dec == 0 {
            return fail("layer counts, ffn and max_len must be positive".into());
        }
        if self.vocab_size <= crate::tokenizer::SPECIAL_TOKENS.len() {
            return fail(format!("vocab_size {} leaves no room beyond the reserved tokens", self.vocab_size));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.layer_norm_eps > 0.0) || !(self.init_std > 0.0) {
            return fail("layer_norm_eps and init_std must be positive".into());
        }
        Ok(())
    }
}
