//! Every n-turn session expands into exactly n - 1 examples.

use fngram_core::corpus::{expand_dialog, DialogSession};
use fngram_core::tokenizer::{Vocabulary, EOS, X_SEP};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ALPHABET: &str = "abcdefghij klmnop";

pub fn run() -> Result<String, String> {
    let vocab = Vocabulary::build_char(ALPHABET, 100).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let letters: Vec<char> = "abcdefghijklmnop".chars().collect();
    let mut sessions = 0;
    for n in 2..=20usize {
        for _ in 0..25 {
            let turns: Vec<String> = (0..n)
                .map(|_| (0..rng.random_range(1..10)).map(|_| letters[rng.random_range(0..letters.len())]).collect())
                .collect();
            let session = DialogSession::new(turns.clone()).map_err(|e| e.to_string())?;
            let examples = expand_dialog(&session, &vocab);
            if examples.len() != n - 1 {
                return Err(format!("{n} turns gave {} examples", examples.len()));
            }
            for (k, ex) in examples.iter().enumerate() {
                let mut source = Vec::new();
                for (i, t) in turns[..=k].iter().enumerate() {
                    if i > 0 {
                        source.push(X_SEP);
                    }
                    source.extend(vocab.encode(t));
                }
                let mut target = vocab.encode(&turns[k + 1]);
                target.push(EOS);
                if ex.source != source || ex.target != target {
                    return Err(format!("{n} turns: example {k} has the wrong context or response"));
                }
            }
            sessions += 1;
        }
    }
    let one = DialogSession::new(vec!["a".into()]);
    if one.is_ok() {
        return Err("a 1-turn session was accepted".into());
    }
    Ok(format!("{sessions} random sessions with 2..=20 turns"))
}
