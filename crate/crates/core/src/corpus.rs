//! Turning token streams into training pairs: span-masked denoising
//! examples and (context, response) dialog examples.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Error, Result};
use crate::tokenizer::{Vocabulary, EOS, MASK, PAD, SEP, X_SEP};

/// Width of a masking block.
pub const BLOCK_LEN: usize = 64;
/// Tokens masked in every full block.
pub const BLOCK_SPAN_LEN: usize = 9;
/// Maximum encoder and decoder sequence length.
pub const MAX_SEQ_LEN: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

/// Encoder input with masked spans and the decoder target that recovers them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSpanExample {
    pub encoder_ids: Vec<u32>,
    pub decoder_target_ids: Vec<u32>,
    pub spans: Vec<Span>,
}

impl MaskedSpanExample {
    /// Writes the decoder target back into the masked positions.
    pub fn reconstruct(&self) -> Vec<u32> {
        let mut out = self.encoder_ids.clone();
        let mut target = self.decoder_target_ids.iter();
        for span in &self.spans {
            for slot in &mut out[span.start..span.start + span.len] {
                *slot = *target.next().expect("target shorter than spans");
            }
        }
        out
    }
}

/// Span length for a trailing block of `len` < 64 tokens: 15% rounded half
/// up, at least one token. Zero for an empty tail.
pub fn tail_span_len(len: usize) -> usize {
    if len == 0 {
        0
    } else {
        ((15 * len + 50) / 100).max(1)
    }
}

/// Total number of tokens [`mask_spans`] masks in a sequence of `len`.
pub fn masked_token_count(len: usize) -> usize {
    BLOCK_SPAN_LEN * (len / BLOCK_LEN) + tail_span_len(len % BLOCK_LEN)
}

/// Masks one contiguous span per 64-token block: 9 tokens in each full
/// block, `tail_span_len` tokens in a trailing partial block. Each span's
/// offset within its block is drawn uniformly from a generator seeded with
/// `seed`. Every masked token becomes its own `[MASK]`.
pub fn mask_spans(ids: &[u32], seed: u64) -> Result<MaskedSpanExample> {
    if ids.is_empty() {
        return Err(contract("cannot mask an empty sequence"));
    }
    if ids.contains(&MASK) {
        return Err(contract("input already contains [MASK]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut encoder_ids = ids.to_vec();
    let mut decoder_target_ids = Vec::with_capacity(masked_token_count(ids.len()));
    let mut spans = Vec::new();
    for (b, block) in ids.chunks(BLOCK_LEN).enumerate() {
        let len = if block.len() == BLOCK_LEN { BLOCK_SPAN_LEN } else { tail_span_len(block.len()) };
        let offset = rng.random_range(0..=block.len() - len);
        let start = b * BLOCK_LEN + offset;
        decoder_target_ids.extend_from_slice(&ids[start..start + len]);
        encoder_ids[start..start + len].iter_mut().for_each(|t| *t = MASK);
        spans.push(Span { start, len });
    }
    Ok(MaskedSpanExample { encoder_ids, decoder_target_ids, spans })
}

/// An ordered multi-turn conversation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogSession {
    turns: Vec<String>,
}

impl DialogSession {
    pub fn new(turns: Vec<String>) -> Result<Self> {
        if turns.len() < 2 {
            return Err(contract(alloc::format!("a dialog session needs at least 2 turns, got {}", turns.len())));
        }
        if let Some(i) = turns.iter().position(|t| t.trim().is_empty()) {
            return Err(contract(alloc::format!("turn {} of the session is empty", i + 1)));
        }
        Ok(DialogSession { turns })
    }

    /// Parses one corpus line, turns separated by tabs.
    pub fn parse_line(line: &str) -> Result<Self> {
        Self::new(line.trim_end_matches(['\r', '\n']).split('\t').map(ToString::to_string).collect())
    }

    pub fn turns(&self) -> &[String] {
        &self.turns
    }

    /// All turns joined by `[X_SEP]`.
    pub fn encode_context(&self, vocab: &Vocabulary) -> Vec<u32> {
        join_turns(self.turns.iter().map(String::as_str), vocab)
    }
}

fn join_turns<'a>(turns: impl Iterator<Item = &'a str>, vocab: &Vocabulary) -> Vec<u32> {
    let mut ids = Vec::new();
    for (i, t) in turns.enumerate() {
        if i > 0 {
            ids.push(X_SEP);
        }
        ids.extend(vocab.encode(t));
    }
    ids
}

/// A source/target pair ready for batching.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub source: Vec<u32>,
    pub target: Vec<u32>,
}

impl From<MaskedSpanExample> for Example {
    fn from(m: MaskedSpanExample) -> Self {
        Example { source: m.encoder_ids, target: m.decoder_target_ids }
    }
}

/// Expands an n-turn session into n-1 examples: turns 1..=k joined by
/// `[X_SEP]` predict turn k+1 followed by `[EOS]`.
pub fn expand_dialog(session: &DialogSession, vocab: &Vocabulary) -> Vec<Example> {
    let n = session.turns.len();
    (1..n)
        .map(|k| {
            let source = join_turns(session.turns[..k].iter().map(String::as_str), vocab);
            let mut target = vocab.encode(&session.turns[k]);
            target.push(EOS);
            Example { source, target }
        })
        .collect()
}

/// Packs sessions into token streams of at most `max_len`, turns joined by
/// `[X_SEP]` and successive sessions separated by `[SEP]`. A session longer
/// than `max_len` is cut from the right and occupies its own stream.
pub fn pack_sessions(sessions: &[DialogSession], vocab: &Vocabulary, max_len: usize) -> Vec<Vec<u32>> {
    let mut streams = Vec::new();
    let mut current: Vec<u32> = Vec::new();
    for s in sessions {
        let mut ids = s.encode_context(vocab);
        ids.truncate(max_len);
        let needed = if current.is_empty() { ids.len() } else { ids.len() + 1 };
        if !current.is_empty() && current.len() + needed > max_len {
            streams.push(core::mem::take(&mut current));
        }
        if !current.is_empty() {
            current.push(SEP);
        }
        current.extend(ids);
    }
    if !current.is_empty() {
        streams.push(current);
    }
    streams
}

/// Which end of an over-length source is dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    /// Keep the most recent tokens (dialog contexts).
    Left,
    /// Keep the leading tokens (documents).
    Right,
}

/// Right-padded id matrices with masks marking real tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub source_ids: Vec<Vec<u32>>,
    pub source_mask: Vec<Vec<bool>>,
    pub target_ids: Vec<Vec<u32>>,
    pub target_mask: Vec<Vec<bool>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.source_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_ids.is_empty()
    }
}

fn pad_rows(rows: Vec<Vec<u32>>) -> (Vec<Vec<u32>>, Vec<Vec<bool>>) {
    let width = rows.iter().map(Vec::len).max().unwrap_or(0);
    rows.into_iter()
        .map(|mut r| {
            let mut mask = vec![true; r.len()];
            mask.resize(width, false);
            r.resize(width, PAD);
            (r, mask)
        })
        .unzip()
}

/// Truncates each example to `max_len` and right-pads to the widest row.
/// Sources are cut per `truncation`; targets are always cut on the right.
pub fn batch(examples: &[Example], max_len: usize, truncation: Truncation) -> Result<Batch> {
    if max_len == 0 {
        return Err(Error::Length { len: 0, max: 0 });
    }
    let mut sources = Vec::with_capacity(examples.len());
    let mut targets = Vec::with_capacity(examples.len());
    for ex in examples {
        if ex.source.is_empty() || ex.target.is_empty() {
            return Err(contract("examples need a non-empty source and target"));
        }
        let src = match truncation {
            Truncation::Left if ex.source.len() > max_len => ex.source[ex.source.len() - max_len..].to_vec(),
            _ => ex.source.iter().copied().take(max_len).collect(),
        };
        sources.push(src);
        targets.push(ex.target.iter().copied().take(max_len).collect());
    }
    let (source_ids, source_mask) = pad_rows(sources);
    let (target_ids, target_mask) = pad_rows(targets);
    Ok(Batch { source_ids, source_mask, target_ids, target_mask })
}
