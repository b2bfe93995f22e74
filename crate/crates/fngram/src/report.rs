//! Score reports: `metric<TAB>value` lines with six decimals.

use fngram_core::metrics::{bleu, distinct_n, rouge_l, rouge_n, Score, Warning};

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    /// How the text was split into tokens, recorded as a comment line.
    pub tokenizer: String,
    pub rows: Vec<(String, f64)>,
    pub warnings: Vec<String>,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn note(warnings: &mut Vec<String>, metric: &str, s: &Score) {
    if let Some(w) = s.warning {
        let why = match w {
            Warning::EmptyReference => "empty reference",
            Warning::EmptyCorpus => "empty corpus",
            Warning::NoNgrams => "no n-grams",
        };
        warnings.push(format!("{metric}: {why}, scored 0"));
    }
}

/// ROUGE-1/2/L averaged over pairs, corpus BLEU-1..4 plain and smoothed,
/// Distinct-1/2. Inputs must have equal length.
pub fn score(cands: &[Vec<u32>], refs: &[Vec<u32>], tokenizer: &str) -> fngram_core::Result<Report> {
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    if cands.len() != refs.len() {
        return Err(fngram_core::Error::Contract(format!(
            "{} candidates but {} references",
            cands.len(),
            refs.len()
        )));
    }
    for n in 1..=2 {
        let name = format!("rouge-{n}");
        let mut vals = Vec::new();
        for (i, (c, r)) in cands.iter().zip(refs).enumerate() {
            let s = rouge_n(c, r, n)?;
            note(&mut warnings, &format!("{name} line {}", i + 1), &s);
            vals.push(s.value);
        }
        rows.push((name, mean(&vals)));
    }
    let mut vals = Vec::new();
    for (i, (c, r)) in cands.iter().zip(refs).enumerate() {
        let s = rouge_l(c, r);
        note(&mut warnings, &format!("rouge-l line {}", i + 1), &s);
        vals.push(s.value);
    }
    rows.push(("rouge-l".into(), mean(&vals)));
    for smoothed in [false, true] {
        for n in 1..=4 {
            let name = if smoothed { format!("bleu-{n}-smoothed") } else { format!("bleu-{n}") };
            let s = bleu(cands, refs, n, smoothed)?;
            note(&mut warnings, &name, &s);
            rows.push((name, s.value));
        }
    }
    for n in 1..=2 {
        let name = format!("distinct-{n}");
        let s = distinct_n(cands, n)?;
        note(&mut warnings, &name, &s);
        rows.push((name, s.value));
    }
    Ok(Report { tokenizer: tokenizer.to_string(), rows, warnings })
}

impl Report {
    pub fn render(&self) -> String {
        let mut out = format!("# tokenizer: {}\n", self.tokenizer);
        for (k, v) in &self.rows {
            out.push_str(&format!("{k}\t{v:.6}\n"));
        }
        out
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.rows.iter().find(|(k, _)| k == metric).map(|(_, v)| *v)
    }
}
