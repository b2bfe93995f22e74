//! Step-by-step main-stream decoding with cached keys and values.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{Mode, ProphetModel, Session};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};
use crate::tokenizer::BOS;

/// Encoder output projected into every decoder layer's cross-attention
/// keys and values.
#[derive(Debug, Clone)]
pub struct EncodedSource<E> {
    cross: Vec<(Tensor<E>, Tensor<E>)>,
    mask: Vec<bool>,
}

/// Cached self-attention keys/values of every fed position, plus the
/// stream-0 logits for the next position.
#[derive(Debug, Clone)]
pub struct DecoderState<E> {
    keys: Vec<Tensor<E>>,
    values: Vec<Tensor<E>>,
    fed: Vec<u32>,
    logits: Vec<E>,
}

impl<E: Element> DecoderState<E> {
    /// Next-token logits given everything fed so far.
    pub fn logits(&self) -> &[E] {
        &self.logits
    }

    /// Tokens fed so far, starting with `[BOS]`.
    pub fn fed(&self) -> &[u32] {
        &self.fed
    }
}

impl<E: Element> ProphetModel<E> {
    /// Runs the encoder once for incremental decoding. The whole source is
    /// treated as real (unpadded) tokens.
    pub fn encode_source(&self, src: &[u32]) -> Result<EncodedSource<E>> {
        let mask = vec![true; src.len()];
        let mut s = Session::new(self);
        let enc = self.encode_on(&mut s, src, &mask, &mut Mode::Eval)?;
        let mut cross = Vec::with_capacity(self.config.layers_dec);
        for l in 0..self.config.layers_dec {
            let (k, v) = self.cross_kv(&mut s, l, enc)?;
            cross.push((s.tape.tensor(k), s.tape.tensor(v)));
        }
        Ok(EncodedSource { cross, mask })
    }

    /// Feeds `[BOS]` at position 0.
    pub fn start_decoding(&self, src: &EncodedSource<E>) -> Result<DecoderState<E>> {
        let mut state = DecoderState { keys: Vec::new(), values: Vec::new(), fed: Vec::new(), logits: Vec::new() };
        self.decode_step(src, &mut state, BOS)?;
        Ok(state)
    }

    /// Feeds `token` at the next position and refreshes the logits.
    pub fn decode_step(&self, src: &EncodedSource<E>, state: &mut DecoderState<E>, token: u32) -> Result<()> {
        let pos = state.fed.len();
        if pos >= self.config.max_len {
            return Err(Error::Length { len: pos + 1, max: self.config.max_len });
        }
        let mut s = Session::new(self);
        let mode = &mut Mode::Eval;
        let tok = s.param("embed.token")?;
        let pe = s.param("embed.position")?;
        let st = s.param("embed.stream")?;
        let te = s.tape.embedding(tok, &[token])?;
        let pe = s.tape.embedding(pe, &[pos as u32])?;
        let se = s.tape.embedding(st, &[0])?;
        let x = s.tape.add(te, pe)?;
        let mut x = s.tape.add(x, se)?;
        let cross_mask = self.source_mask(&mut s, &src.mask, 1)?;

        let mut new_keys = Vec::with_capacity(self.config.layers_dec);
        let mut new_values = Vec::with_capacity(self.config.layers_dec);
        for l in 0..self.config.layers_dec {
            let p = format!("decoder.{l}");
            let a = self.norm(&mut s, x, &format!("{p}.ln1"))?;
            let q = self.linear(&mut s, a, &format!("{p}.self_attn.q"))?;
            let k_new = self.linear(&mut s, a, &format!("{p}.self_attn.k"))?;
            let v_new = self.linear(&mut s, a, &format!("{p}.self_attn.v"))?;
            let (k, v) = match (state.keys.get(l), state.values.get(l)) {
                (Some(kc), Some(vc)) => {
                    let kc = s.tape.leaf(kc);
                    let vc = s.tape.leaf(vc);
                    (s.tape.concat(&[kc, k_new], 0)?, s.tape.concat(&[vc, v_new], 0)?)
                }
                _ => (k_new, v_new),
            };
            new_keys.push(s.tape.tensor(k));
            new_values.push(s.tape.tensor(v));
            let att = self.attend(&mut s, q, k, v, None)?;
            let att = self.linear(&mut s, att, &format!("{p}.self_attn.o"))?;
            x = s.tape.add(x, att)?;
            let (ck, cv) = &src.cross[l];
            let cross = (s.tape.leaf(ck), s.tape.leaf(cv));
            x = self.decoder_tail(&mut s, l, x, cross, cross_mask, mode)?;
        }
        let logits = self.tied_logits(&mut s, x)?;
        state.logits = s.tape.value(logits).to_vec();
        state.keys = new_keys;
        state.values = new_values;
        state.fed.push(token);
        Ok(())
    }
}
