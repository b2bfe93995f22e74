//! ROUGE, BLEU and Distinct over token sequences, one reference per
//! candidate.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{contract, Result};

/// Why a score fell back to zero instead of being computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Warning {
    EmptyReference,
    EmptyCorpus,
    NoNgrams,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub value: f64,
    pub warning: Option<Warning>,
}

impl Score {
    fn ok(value: f64) -> Self {
        Score { value, warning: None }
    }

    fn zero(w: Warning) -> Self {
        Score { value: 0.0, warning: Some(w) }
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(contract("n-gram order must be at least 1"));
    }
    Ok(())
}

fn ngram_counts<T: Ord>(tokens: &[T], n: usize) -> BTreeMap<&[T], usize> {
    let mut out = BTreeMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *out.entry(g).or_insert(0) += 1;
        }
    }
    out
}

fn ngram_total(len: usize, n: usize) -> usize {
    (len + 1).saturating_sub(n)
}

/// Clipped overlap: each candidate n-gram matches at most as often as it
/// occurs in the reference.
fn clipped_matches<T: Ord>(cand: &[T], reference: &[T], n: usize) -> usize {
    let r = ngram_counts(reference, n);
    ngram_counts(cand, n).iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum()
}

fn f1(hits: usize, cand_total: usize, ref_total: usize) -> f64 {
    if hits == 0 {
        return 0.0;
    }
    let p = hits as f64 / cand_total as f64;
    let r = hits as f64 / ref_total as f64;
    2.0 * p * r / (p + r)
}

pub fn rouge_n<T: Ord>(cand: &[T], reference: &[T], n: usize) -> Result<Score> {
    check_n(n)?;
    if reference.is_empty() {
        return Ok(Score::zero(Warning::EmptyReference));
    }
    let rt = ngram_total(reference.len(), n);
    if rt == 0 {
        return Ok(Score::zero(Warning::NoNgrams));
    }
    let hits = clipped_matches(cand, reference, n);
    Ok(Score::ok(f1(hits, ngram_total(cand.len(), n), rt)))
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn rouge_l<T: PartialEq>(cand: &[T], reference: &[T]) -> Score {
    if reference.is_empty() {
        return Score::zero(Warning::EmptyReference);
    }
    Score::ok(f1(lcs_len(cand, reference), cand.len(), reference.len()))
}

fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c > r {
        1.0
    } else {
        Float::exp(1.0 - r as f64 / c as f64)
    }
}

/// Corpus BLEU up to `max_n`. Unsmoothed: clipped matches and n-gram totals
/// are pooled over the corpus before taking the geometric mean, with one
/// brevity penalty from total lengths. Smoothed: every precision becomes
/// `(matches + 1) / (total + 1)` per sentence, and sentence scores are
/// averaged.
pub fn bleu<T: Ord>(cands: &[Vec<T>], refs: &[Vec<T>], max_n: usize, smoothed: bool) -> Result<Score> {
    check_n(max_n)?;
    if cands.len() != refs.len() {
        return Err(contract(alloc::format!(
            "{} candidates but {} references",
            cands.len(),
            refs.len()
        )));
    }
    if cands.is_empty() {
        return Ok(Score::zero(Warning::EmptyCorpus));
    }
    if smoothed {
        let mut sum = 0.0;
        for (c, r) in cands.iter().zip(refs) {
            if c.is_empty() {
                continue;
            }
            let log_p: f64 = (1..=max_n)
                .map(|n| {
                    let m = clipped_matches(c, r, n) as f64;
                    let t = ngram_total(c.len(), n) as f64;
                    Float::ln((m + 1.0) / (t + 1.0))
                })
                .sum();
            sum += brevity_penalty(c.len(), r.len()) * Float::exp(log_p / max_n as f64);
        }
        return Ok(Score::ok(sum / cands.len() as f64));
    }
    let c_len: usize = cands.iter().map(Vec::len).sum();
    let r_len: usize = refs.iter().map(Vec::len).sum();
    let mut log_p = 0.0;
    for n in 1..=max_n {
        let total: usize = cands.iter().map(|c| ngram_total(c.len(), n)).sum();
        if total == 0 {
            return Ok(Score::zero(Warning::NoNgrams));
        }
        let m: usize = cands.iter().zip(refs).map(|(c, r)| clipped_matches(c, r, n)).sum();
        if m == 0 {
            return Ok(Score::ok(0.0));
        }
        log_p += Float::ln(m as f64 / total as f64);
    }
    Ok(Score::ok(brevity_penalty(c_len, r_len) * Float::exp(log_p / max_n as f64)))
}

/// Unique n-grams over total n-grams, pooled across all candidates.
pub fn distinct_n<T: Ord>(cands: &[Vec<T>], n: usize) -> Result<Score> {
    check_n(n)?;
    let mut seen = BTreeMap::new();
    let mut total = 0usize;
    for c in cands {
        if c.len() >= n {
            for g in c.windows(n) {
                seen.insert(g, ());
                total += 1;
            }
        }
    }
    if total == 0 {
        return Ok(Score::zero(Warning::NoNgrams));
    }
    Ok(Score::ok(seen.len() as f64 / total as f64))
}
