//! Character-level and greedy longest-match subword vocabularies.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Reserved tokens, in id order.
pub const SPECIAL_TOKENS: [&str; 7] = ["[PAD]", "[UNK]", "[MASK]", "[SEP]", "[X_SEP]", "[BOS]", "[EOS]"];

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const MASK: u32 = 2;
pub const SEP: u32 = 3;
pub const X_SEP: u32 = 4;
pub const BOS: u32 = 5;
pub const EOS: u32 = 6;

pub fn is_special(id: u32) -> bool {
    (id as usize) < SPECIAL_TOKENS.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabMode {
    /// One token per Unicode scalar value; whitespace is an ordinary token.
    Char,
    /// Greedy longest match over whitespace-separated words.
    Subword,
}

/// Bidirectional token/id map with the seven reserved tokens at ids 0..7.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
    mode: VocabMode,
    longest_piece: usize,
}

impl Vocabulary {
    /// Builds from a full token list whose first seven entries are the
    /// reserved tokens in canonical order.
    pub fn from_tokens(tokens: Vec<String>, mode: VocabMode) -> Result<Self> {
        if tokens.len() < SPECIAL_TOKENS.len()
            || tokens.iter().zip(SPECIAL_TOKENS).any(|(t, s)| t != s)
        {
            return Err(Error::Vocab("the first seven tokens must be the reserved tokens in order".to_string()));
        }
        let mut index = BTreeMap::new();
        let mut longest_piece = 1;
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return Err(Error::Vocab(alloc::format!("empty token at id {id}")));
            }
            if id >= SPECIAL_TOKENS.len() {
                let chars = tok.chars().count();
                if SPECIAL_TOKENS.contains(&tok.as_str()) {
                    return Err(Error::Vocab(alloc::format!("reserved token {tok} repeated at id {id}")));
                }
                if mode == VocabMode::Char && chars != 1 {
                    return Err(Error::Vocab(alloc::format!("char vocabulary entry {tok:?} is not one character")));
                }
                longest_piece = longest_piece.max(chars);
            }
            if index.insert(tok.clone(), id as u32).is_some() {
                return Err(Error::Vocab(alloc::format!("duplicate token {tok:?}")));
            }
        }
        Ok(Vocabulary { tokens, index, mode, longest_piece })
    }

    /// The `max_size - 7` most frequent characters of `corpus` plus the
    /// reserved tokens. Frequency ties go to the smaller code point. Line
    /// breaks separate documents and are not counted.
    pub fn build_char(corpus: &str, max_size: usize) -> Result<Self> {
        check_capacity(max_size)?;
        let mut counts: BTreeMap<char, u64> = BTreeMap::new();
        for c in corpus.chars().filter(|&c| c != '\n' && c != '\r') {
            *counts.entry(c).or_default() += 1;
        }
        if counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut ranked: Vec<(char, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(ranked.into_iter().take(max_size - SPECIAL_TOKENS.len()).map(|(c, _)| c.to_string()));
        Self::from_tokens(tokens, VocabMode::Char)
    }

    /// Subword vocabulary from a user-supplied inventory (one piece per
    /// entry). Blank lines, reserved tokens and duplicates are skipped; the
    /// result is capped at `max_size` including the reserved tokens.
    pub fn build_subword<'a>(wordlist: impl IntoIterator<Item = &'a str>, max_size: usize) -> Result<Self> {
        check_capacity(max_size)?;
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut seen: BTreeMap<&str, ()> = BTreeMap::new();
        for piece in wordlist {
            let piece = piece.trim_end_matches('\r');
            if tokens.len() == max_size {
                break;
            }
            if piece.is_empty() || piece.chars().any(char::is_whitespace) || SPECIAL_TOKENS.contains(&piece) {
                continue;
            }
            if seen.insert(piece, ()).is_none() {
                tokens.push(piece.to_string());
            }
        }
        if tokens.len() == SPECIAL_TOKENS.len() {
            return Err(Error::EmptyCorpus);
        }
        Self::from_tokens(tokens, VocabMode::Subword)
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn mode(&self) -> VocabMode {
        self.mode
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Text lookups never resolve to reserved tokens; those are only
    /// inserted by the corpus pipeline.
    fn text_id(&self, piece: &str) -> Option<u32> {
        self.id(piece).filter(|&id| !is_special(id))
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        match self.mode {
            VocabMode::Char => {
                let mut buf = [0u8; 4];
                text.chars().map(|c| self.text_id(c.encode_utf8(&mut buf)).unwrap_or(UNK)).collect()
            }
            VocabMode::Subword => {
                let mut ids = Vec::new();
                for word in text.split_whitespace() {
                    self.encode_word(word, &mut ids);
                }
                ids
            }
        }
    }

    fn encode_word(&self, word: &str, out: &mut Vec<u32>) {
        let bounds: Vec<usize> = word.char_indices().map(|(i, _)| i).chain([word.len()]).collect();
        let nchars = bounds.len() - 1;
        let mut pos = 0;
        while pos < nchars {
            let longest = self.longest_piece.min(nchars - pos);
            let hit = (1..=longest)
                .rev()
                .find_map(|len| self.text_id(&word[bounds[pos]..bounds[pos + len]]).map(|id| (id, len)));
            match hit {
                Some((id, len)) => {
                    out.push(id);
                    pos += len;
                }
                None => {
                    out.push(UNK);
                    pos += 1;
                }
            }
        }
    }

    /// Concatenates token strings. Reserved tokens are rendered verbatim
    /// unless `strip_specials` is set.
    pub fn decode(&self, ids: &[u32], strip_specials: bool) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let tok = self.token(id).ok_or(Error::Index { index: id as usize, size: self.size() })?;
            if strip_specials && is_special(id) {
                continue;
            }
            out.push_str(tok);
        }
        Ok(out)
    }
}

fn check_capacity(max_size: usize) -> Result<()> {
    if max_size <= SPECIAL_TOKENS.len() {
        return Err(Error::Vocab(alloc::format!(
            "max_size {max_size} cannot hold the reserved tokens plus one entry"
        )));
    }
    Ok(())
}
