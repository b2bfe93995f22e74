//! Vocabulary files: UTF-8, one token per line, line number = id.

use std::fs;
use std::path::Path;

use fngram_core::tokenizer::{VocabMode, Vocabulary};

use crate::error::{format_err, io_err, Result};

pub fn write(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut text = String::new();
    for tok in vocab.tokens() {
        text.push_str(tok);
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

/// Mode a token list implies when none is given: character mode exactly
/// when every ordinary entry is a single character.
pub fn infer_mode(tokens: &[String]) -> VocabMode {
    let single = tokens.iter().skip(fngram_core::tokenizer::SPECIAL_TOKENS.len()).all(|t| t.chars().count() == 1);
    if single {
        VocabMode::Char
    } else {
        VocabMode::Subword
    }
}

pub fn read(path: &Path, mode: Option<VocabMode>) -> Result<Vocabulary> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let body = text.strip_suffix('\n').unwrap_or(&text);
    let tokens: Vec<String> = body.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l).to_string()).collect();
    let mode = mode.unwrap_or_else(|| infer_mode(&tokens));
    Vocabulary::from_tokens(tokens, mode).map_err(|e| format_err(path, "tokens", e.to_string()))
}
