//! Greedy and beam-search decoding over the main stream.
//!
//! The search routines are written against [`StepScorer`] so they can be
//! exercised with hand-built distributions as well as a trained model.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use num_traits::Float;

use crate::error::{contract, Result};
use crate::model::{DecoderState, EncodedSource, ProphetModel};
use crate::tensor::Element;
use crate::tokenizer::{BOS, EOS, MASK, PAD};

/// Source of next-token log-probabilities for a growing prefix.
pub trait StepScorer {
    type State: Clone;

    /// State for the empty prefix.
    fn start(&self) -> Result<Self::State>;

    /// Natural-log probabilities of every vocabulary entry as the next token.
    fn log_probs(&self, state: &Self::State) -> Vec<f64>;

    /// Appends `token` to the prefix.
    fn advance(&self, state: &mut Self::State, token: u32) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    /// Maximum number of search steps; the end token counts as a step.
    pub max_out: usize,
    pub eos: u32,
    /// Ids that are never emitted.
    pub banned: Vec<u32>,
}

impl SearchOptions {
    pub fn new(max_out: usize) -> Self {
        SearchOptions { max_out, eos: EOS, banned: vec![PAD, MASK, BOS] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated ids, without the end token.
    pub ids: Vec<u32>,
    pub log_prob: f64,
    /// `log_prob / steps^length_norm`, where `steps` counts the end token
    /// when one was produced.
    pub score: f64,
    pub finished: bool,
}

/// Normalized hypothesis score. `steps == 0` only happens with an empty
/// budget and scores zero.
pub fn length_normalized(log_prob: f64, steps: usize, length_norm: f64) -> f64 {
    if steps == 0 {
        return 0.0;
    }
    log_prob / Float::powf(steps as f64, length_norm)
}

fn allowed(opts: &SearchOptions, vocab: usize) -> impl Iterator<Item = u32> + '_ {
    (0..vocab as u32).filter(move |t| !opts.banned.contains(t))
}

/// Repeatedly takes the most probable next token, lowest id on ties.
pub fn greedy<S: StepScorer>(scorer: &S, opts: &SearchOptions) -> Result<Vec<u32>> {
    let mut state = scorer.start()?;
    let mut out = Vec::new();
    for step in 0..opts.max_out {
        let lp = scorer.log_probs(&state);
        let mut best: Option<(u32, f64)> = None;
        for t in allowed(opts, lp.len()) {
            let v = lp[t as usize];
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((t, v));
            }
        }
        let Some((tok, _)) = best else { break };
        if tok == opts.eos {
            break;
        }
        out.push(tok);
        if step + 1 < opts.max_out {
            scorer.advance(&mut state, tok)?;
        }
    }
    Ok(out)
}

struct Live<St> {
    ids: Vec<u32>,
    log_prob: f64,
    state: St,
}

struct Candidate {
    parent: usize,
    token: u32,
    step_lp: f64,
    total: f64,
}

/// Beam search. Each step expands every live hypothesis by every allowed
/// token and keeps the `beam` best by cumulative log-probability; kept
/// candidates ending in the end token retire as finished. Hypotheses still
/// live when the budget runs out are returned unfinished. The result is
/// sorted best first by normalized score.
pub fn beam_search<S: StepScorer>(
    scorer: &S,
    opts: &SearchOptions,
    beam: usize,
    length_norm: f64,
) -> Result<Vec<Hypothesis>> {
    if beam == 0 {
        return Err(contract("beam width must be at least 1"));
    }
    let mut live = vec![Live { ids: Vec::new(), log_prob: 0.0, state: scorer.start()? }];
    let mut done = Vec::new();
    for step in 0..opts.max_out {
        if live.is_empty() {
            break;
        }
        let mut cands = Vec::new();
        for (parent, h) in live.iter().enumerate() {
            let lp = scorer.log_probs(&h.state);
            for t in allowed(opts, lp.len()) {
                let step_lp = lp[t as usize];
                cands.push(Candidate { parent, token: t, step_lp, total: h.log_prob + step_lp });
            }
        }
        cands.sort_by(|a, b| {
            b.total
                .total_cmp(&a.total)
                .then(a.parent.cmp(&b.parent))
                .then(b.step_lp.total_cmp(&a.step_lp))
                .then(a.token.cmp(&b.token))
        });
        cands.truncate(beam);
        let last = step + 1 == opts.max_out;
        let mut next = Vec::new();
        for c in cands {
            let parent = &live[c.parent];
            if c.token == opts.eos {
                done.push(Hypothesis {
                    ids: parent.ids.clone(),
                    log_prob: c.total,
                    score: length_normalized(c.total, parent.ids.len() + 1, length_norm),
                    finished: true,
                });
                continue;
            }
            let mut ids = parent.ids.clone();
            ids.push(c.token);
            let mut state = parent.state.clone();
            if !last {
                scorer.advance(&mut state, c.token)?;
            }
            next.push(Live { ids, log_prob: c.total, state });
        }
        live = next;
    }
    for h in live {
        let score = length_normalized(h.log_prob, h.ids.len(), length_norm);
        done.push(Hypothesis { ids: h.ids, log_prob: h.log_prob, score, finished: false });
    }
    done.sort_by(compare_hypotheses);
    Ok(done)
}

/// Best-first order: higher score, then lexicographically smaller ids.
pub fn compare_hypotheses(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.ids.cmp(&b.ids))
}

/// Natural-log softmax in f64.
pub fn log_softmax<E: Element>(logits: &[E]) -> Vec<f64> {
    let max = logits.iter().map(|x| x.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|x| Float::exp(x.as_f64() - max)).sum();
    let lz = max + Float::ln(z);
    logits.iter().map(|x| x.as_f64() - lz).collect()
}

/// Scores prefixes with the model's main stream for one encoded source.
pub struct ModelScorer<'m, E: Element> {
    model: &'m ProphetModel<E>,
    source: EncodedSource<E>,
}

impl<'m, E: Element> ModelScorer<'m, E> {
    pub fn new(model: &'m ProphetModel<E>, source_ids: &[u32]) -> Result<Self> {
        Ok(ModelScorer { model, source: model.encode_source(source_ids)? })
    }
}

impl<E: Element> StepScorer for ModelScorer<'_, E> {
    type State = DecoderState<E>;

    fn start(&self) -> Result<Self::State> {
        self.model.start_decoding(&self.source)
    }

    fn log_probs(&self, state: &Self::State) -> Vec<f64> {
        log_softmax(state.logits())
    }

    fn advance(&self, state: &mut Self::State, token: u32) -> Result<()> {
        self.model.decode_step(&self.source, state, token)
    }
}

/// Greedy decoding from `source_ids`. `max_out` is capped at the model's
/// maximum length.
pub fn greedy_generate<E: Element>(model: &ProphetModel<E>, source_ids: &[u32], max_out: usize) -> Result<Vec<u32>> {
    let scorer = ModelScorer::new(model, source_ids)?;
    greedy(&scorer, &SearchOptions::new(max_out.min(model.config().max_len)))
}

/// Beam decoding from `source_ids`, best hypothesis first.
pub fn beam_generate<E: Element>(
    model: &ProphetModel<E>,
    source_ids: &[u32],
    beam: usize,
    max_out: usize,
    length_norm: f64,
) -> Result<Vec<Hypothesis>> {
    let scorer = ModelScorer::new(model, source_ids)?;
    beam_search(&scorer, &SearchOptions::new(max_out.min(model.config().max_len)), beam, length_norm)
}
