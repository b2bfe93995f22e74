//! Encoder-decoder Transformer whose decoder carries one main stream plus
//! `n_future - 1` predicting streams.
//!
//! Layout of the decoder: the main stream is an ordinary pre-norm causal
//! decoder and supplies the logits of stream 0 (the next token). Predicting
//! stream `j` starts at position `t` from the main-stream input at `t` plus a
//! learned stream embedding and the position embedding of `t + j`. It shares
//! every layer weight with the main stream, takes its keys and values only
//! from main-stream positions `<= t`, never from another stream, and
//! cross-attends to the encoder. All streams are stacked as rows of one
//! matrix, so each layer runs a single set of matmuls; row independence of
//! every op keeps the main stream exactly what it would be on its own.
//!
//! The output projection is the transposed token embedding, shared by all
//! streams.

mod config;
mod incremental;
mod params;

pub use config::{geometric_alpha, ModelConfig};
pub use incremental::{DecoderState, EncodedSource};
pub use params::Parameters;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Error, Result};
use crate::tensor::{Element, Tape, Tensor, Var};
use crate::tokenizer::BOS;

/// Additive attention bias for hidden positions. Large enough that its
/// softmax weight is exactly zero in both precisions.
const MASKED: f64 = -1e9;

/// Whether a forward pass applies dropout.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut ChaCha8Rng),
}

/// A tape plus the model parameters registered on it so far.
pub struct Session<'m, E: Element> {
    pub tape: Tape<E>,
    params: &'m Parameters<E>,
    bound: BTreeMap<&'m str, Var>,
}

impl<'m, E: Element> Session<'m, E> {
    pub fn new(model: &'m ProphetModel<E>) -> Self {
        Session { tape: Tape::new(), params: &model.params, bound: BTreeMap::new() }
    }

    /// Tape handle of a named parameter, registering it on first use.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let (key, t) = self
            .params
            .get_key_value(name)
            .ok_or_else(|| contract(format!("unknown parameter {name}")))?;
        if let Some(&v) = self.bound.get(key) {
            return Ok(v);
        }
        let v = self.tape.leaf_named(key, t);
        self.bound.insert(key, v);
        Ok(v)
    }

    /// Gradients accumulated on bound parameters by the last backward pass.
    pub fn param_grads(&self) -> Vec<(String, Vec<E>)> {
        self.bound
            .iter()
            .filter_map(|(name, &v)| self.tape.grad(v).map(|g| (String::from(*name), g.to_vec())))
            .collect()
    }
}

/// The full model: configuration plus named parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ProphetModel<E> {
    config: ModelConfig,
    params: Parameters<E>,
}

fn additive_mask<E: Element>(visible: impl Iterator<Item = bool>) -> Vec<E> {
    visible.map(|v| if v { E::zero() } else { E::from_f64(MASKED) }).collect()
}

impl<E: Element> ProphetModel<E> {
    /// Fresh model with normal(0, init_std) weights and embeddings, unit
    /// norm gains and zero biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = Parameters::init(&config, seed)?;
        Ok(ProphetModel { config, params })
    }

    /// Wraps existing parameters, checking names and shapes.
    pub fn from_parameters(config: ModelConfig, params: Parameters<E>) -> Result<Self> {
        config.validate()?;
        params.check_layout(&config)?;
        Ok(ProphetModel { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Parameters<E> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters<E> {
        &mut self.params
    }

    pub fn into_parameters(self) -> Parameters<E> {
        self.params
    }

    /// Same model in another element precision.
    pub fn cast<F: Element>(&self) -> ProphetModel<F> {
        ProphetModel { config: self.config.clone(), params: self.params.cast() }
    }

    // ---- building blocks ----

    fn linear(&self, s: &mut Session<'_, E>, x: Var, prefix: &str) -> Result<Var> {
        let w = s.param(&format!("{prefix}.weight"))?;
        let b = s.param(&format!("{prefix}.bias"))?;
        let y = s.tape.matmul(x, w)?;
        s.tape.add_bias(y, b)
    }

    fn norm(&self, s: &mut Session<'_, E>, x: Var, prefix: &str) -> Result<Var> {
        let g = s.param(&format!("{prefix}.gain"))?;
        let b = s.param(&format!("{prefix}.bias"))?;
        s.tape.layer_norm(x, g, b, E::from_f64(self.config.layer_norm_eps))
    }

    fn dropout(&self, s: &mut Session<'_, E>, x: Var, mode: &mut Mode<'_>) -> Result<Var> {
        let p = self.config.dropout;
        let Mode::Train(rng) = mode else { return Ok(x) };
        if p == 0.0 {
            return Ok(x);
        }
        let keep = E::from_f64(1.0 / (1.0 - p));
        let n = s.tape.value(x).len();
        let mask = (0..n).map(|_| if rng.random::<f64>() < p { E::zero() } else { keep }).collect();
        let m = s.tape.constant(s.tape.shape(x).to_vec(), mask)?;
        s.tape.mul(x, m)
    }

    /// Multi-head scaled dot-product attention of projected `q` over `k`/`v`.
    fn attend(&self, s: &mut Session<'_, E>, q: Var, k: Var, v: Var, mask: Option<Var>) -> Result<Var> {
        let (heads, dh) = (self.config.heads, self.config.head_dim());
        let scale = E::from_f64(1.0 / Float::sqrt(dh as f64));
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (
                    s.tape.slice(q, 1, h * dh, dh)?,
                    s.tape.slice(k, 1, h * dh, dh)?,
                    s.tape.slice(v, 1, h * dh, dh)?,
                )
            };
            let kt = s.tape.transpose(kh)?;
            let scores = s.tape.matmul(qh, kt)?;
            let mut scores = s.tape.scale(scores, scale);
            if let Some(m) = mask {
                scores = s.tape.add(scores, m)?;
            }
            let probs = s.tape.softmax(scores);
            outs.push(s.tape.matmul(probs, vh)?);
        }
        if heads == 1 {
            Ok(outs[0])
        } else {
            s.tape.concat(&outs, 1)
        }
    }

    fn feed_forward(&self, s: &mut Session<'_, E>, x: Var, prefix: &str) -> Result<Var> {
        let h = self.linear(s, x, &format!("{prefix}.ffn.in"))?;
        let h = s.tape.gelu(h);
        self.linear(s, h, &format!("{prefix}.ffn.out"))
    }

    pub(crate) fn cross_kv(&self, s: &mut Session<'_, E>, layer: usize, enc: Var) -> Result<(Var, Var)> {
        let k = self.linear(s, enc, &format!("decoder.{layer}.cross_attn.k"))?;
        let v = self.linear(s, enc, &format!("decoder.{layer}.cross_attn.v"))?;
        Ok((k, v))
    }

    /// Cross-attention and feed-forward sublayers of decoder layer `layer`.
    pub(crate) fn decoder_tail(
        &self,
        s: &mut Session<'_, E>,
        layer: usize,
        x: Var,
        cross: (Var, Var),
        cross_mask: Var,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let p = format!("decoder.{layer}");
        let a = self.norm(s, x, &format!("{p}.ln2"))?;
        let q = self.linear(s, a, &format!("{p}.cross_attn.q"))?;
        let att = self.attend(s, q, cross.0, cross.1, Some(cross_mask))?;
        let att = self.linear(s, att, &format!("{p}.cross_attn.o"))?;
        let att = self.dropout(s, att, mode)?;
        let x = s.tape.add(x, att)?;
        let a = self.norm(s, x, &format!("{p}.ln3"))?;
        let f = self.feed_forward(s, a, &p)?;
        let f = self.dropout(s, f, mode)?;
        s.tape.add(x, f)
    }

    pub(crate) fn tied_logits(&self, s: &mut Session<'_, E>, x: Var) -> Result<Var> {
        let x = self.norm(s, x, "decoder.final_ln")?;
        let table = s.param("embed.token")?;
        let out = s.tape.transpose(table)?;
        s.tape.matmul(x, out)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == 0 {
            return Err(contract("empty sequence"));
        }
        if len > self.config.max_len {
            return Err(Error::Length { len, max: self.config.max_len });
        }
        Ok(())
    }

    /// Additive `[rows × M]` mask hiding padded source positions.
    pub(crate) fn source_mask(&self, s: &mut Session<'_, E>, mask: &[bool], rows: usize) -> Result<Var> {
        let data = additive_mask((0..rows).flat_map(|_| mask.iter().copied()));
        s.tape.constant(vec![rows, mask.len()], data)
    }

    // ---- encoder ----

    /// Encoder states `[M × hidden]`. `mask[i]` is false for padding, which
    /// is never attended to.
    pub fn encode_on(&self, s: &mut Session<'_, E>, src: &[u32], mask: &[bool], mode: &mut Mode<'_>) -> Result<Var> {
        let m = src.len();
        self.check_len(m)?;
        if mask.len() != m {
            return Err(Error::Shape { op: "encode", lhs: vec![m], rhs: vec![mask.len()] });
        }
        let tok = s.param("embed.token")?;
        let pos = s.param("embed.position")?;
        let te = s.tape.embedding(tok, src)?;
        let positions: Vec<u32> = (0..m as u32).collect();
        let pe = s.tape.embedding(pos, &positions)?;
        let x = s.tape.add(te, pe)?;
        let mut x = self.dropout(s, x, mode)?;
        let key_mask = self.source_mask(s, mask, m)?;
        for l in 0..self.config.layers_enc {
            let p = format!("encoder.{l}");
            let a = self.norm(s, x, &format!("{p}.ln1"))?;
            let q = self.linear(s, a, &format!("{p}.self_attn.q"))?;
            let k = self.linear(s, a, &format!("{p}.self_attn.k"))?;
            let v = self.linear(s, a, &format!("{p}.self_attn.v"))?;
            let att = self.attend(s, q, k, v, Some(key_mask))?;
            let att = self.linear(s, att, &format!("{p}.self_attn.o"))?;
            let att = self.dropout(s, att, mode)?;
            x = s.tape.add(x, att)?;
            let a = self.norm(s, x, &format!("{p}.ln2"))?;
            let f = self.feed_forward(s, a, &p)?;
            let f = self.dropout(s, f, mode)?;
            x = s.tape.add(x, f)?;
        }
        self.norm(s, x, "encoder.final_ln")
    }

    // ---- decoder ----

    /// Main-stream input ids: `[BOS]` followed by all but the last target.
    fn shifted_inputs(target: &[u32]) -> Vec<u32> {
        let mut inp = Vec::with_capacity(target.len());
        inp.push(BOS);
        inp.extend_from_slice(&target[..target.len() - 1]);
        inp
    }

    /// Logits of all streams stacked as `[n_future·T × vocab]`: row
    /// `j·T + t` scores `target[t + j]` given `target[..t]` and the source.
    pub fn decode_streams_on(
        &self,
        s: &mut Session<'_, E>,
        target: &[u32],
        enc: Var,
        src_mask: &[bool],
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let t_len = target.len();
        self.check_len(t_len)?;
        let n = self.config.n_future;
        let tok = s.param("embed.token")?;
        let pos = s.param("embed.position")?;
        let streams = s.param("embed.stream")?;

        let inputs = Self::shifted_inputs(target);
        let te = s.tape.embedding(tok, &inputs)?;
        let positions: Vec<u32> = (0..t_len as u32).collect();
        let pe = s.tape.embedding(pos, &positions)?;
        let se = s.tape.embedding(streams, &vec![0; t_len])?;
        let h0 = s.tape.add(te, pe)?;
        let h0 = s.tape.add(h0, se)?;
        let mut rows = vec![h0];
        let last_pos = (self.config.max_len - 1) as u32;
        for j in 1..n {
            let sj = s.tape.embedding(streams, &vec![j as u32; t_len])?;
            let ahead: Vec<u32> = (0..t_len as u32).map(|t| (t + j as u32).min(last_pos)).collect();
            let pj = s.tape.embedding(pos, &ahead)?;
            let g = s.tape.add(h0, sj)?;
            rows.push(s.tape.add(g, pj)?);
        }
        let x = if n == 1 { h0 } else { s.tape.concat(&rows, 0)? };
        let mut x = self.dropout(s, x, mode)?;

        let causal = additive_mask((0..n).flat_map(|_| (0..t_len).flat_map(move |t| (0..t_len).map(move |k| k <= t))));
        let self_mask = s.tape.constant(vec![n * t_len, t_len], causal)?;
        let cross_mask = self.source_mask(s, src_mask, n * t_len)?;

        for l in 0..self.config.layers_dec {
            let p = format!("decoder.{l}");
            let a = self.norm(s, x, &format!("{p}.ln1"))?;
            let main = if n == 1 { a } else { s.tape.slice(a, 0, 0, t_len)? };
            let q = self.linear(s, a, &format!("{p}.self_attn.q"))?;
            let k = self.linear(s, main, &format!("{p}.self_attn.k"))?;
            let v = self.linear(s, main, &format!("{p}.self_attn.v"))?;
            let att = self.attend(s, q, k, v, Some(self_mask))?;
            let att = self.linear(s, att, &format!("{p}.self_attn.o"))?;
            let att = self.dropout(s, att, mode)?;
            x = s.tape.add(x, att)?;
            let cross = self.cross_kv(s, l, enc)?;
            x = self.decoder_tail(s, l, x, cross, cross_mask, mode)?;
        }
        self.tied_logits(s, x)
    }

    /// Weighted future n-gram loss of one source/target pair.
    pub fn example_loss_on(
        &self,
        s: &mut Session<'_, E>,
        src: &[u32],
        src_mask: &[bool],
        target: &[u32],
        pad: u32,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let enc = self.encode_on(s, src, src_mask, mode)?;
        let logits = self.decode_streams_on(s, target, enc, src_mask, mode)?;
        crate::training::future_ngram_loss(&mut s.tape, logits, self.config.n_future, target, &self.config.alpha, pad)
    }

    /// Mean of per-example losses over a padded batch.
    pub fn batch_loss_on(&self, s: &mut Session<'_, E>, batch: &crate::corpus::Batch, mode: &mut Mode<'_>) -> Result<Var> {
        if batch.is_empty() {
            return Err(contract("empty batch"));
        }
        let mut total = None;
        for i in 0..batch.len() {
            let l = self.example_loss_on(
                s,
                &batch.source_ids[i],
                &batch.source_mask[i],
                &batch.target_ids[i],
                crate::tokenizer::PAD,
                mode,
            )?;
            total = Some(match total {
                None => l,
                Some(acc) => s.tape.add(acc, l)?,
            });
        }
        let total = total.unwrap();
        Ok(s.tape.scale(total, E::from_f64(1.0 / batch.len() as f64)))
    }

    // ---- tape-free conveniences ----

    /// Encoder states as a standalone `[M × hidden]` tensor.
    pub fn encode(&self, src: &[u32], mask: &[bool]) -> Result<Tensor<E>> {
        let mut s = Session::new(self);
        let v = self.encode_on(&mut s, src, mask, &mut Mode::Eval)?;
        Ok(s.tape.tensor(v))
    }

    /// Stream logits as an `[n_future × T × vocab]` tensor.
    pub fn decode_streams(&self, target: &[u32], enc: &Tensor<E>, src_mask: &[bool]) -> Result<Tensor<E>> {
        if enc.shape() != [src_mask.len(), self.config.hidden] {
            return Err(Error::Shape {
                op: "decode_streams",
                lhs: enc.shape().to_vec(),
                rhs: vec![src_mask.len(), self.config.hidden],
            });
        }
        let mut s = Session::new(self);
        let e = s.tape.leaf(enc);
        let v = self.decode_streams_on(&mut s, target, e, src_mask, &mut Mode::Eval)?;
        let flat = s.tape.tensor(v);
        Tensor::new(vec![self.config.n_future, target.len(), self.config.vocab_size], flat.data().to_vec())
    }
}
