//! Span-masking arithmetic and lossless reconstruction.

use fngram_core::corpus::mask_spans;
use fngram_core::tokenizer::MASK;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `9 * floor(L / 64)` plus the tail rule: 15% of the remainder rounded
/// half up, at least one token, none for an empty remainder. Integer-only so
/// the .5 cases are exact.
pub fn expected_masked(len: usize) -> usize {
    let tail = len % 64;
    let tail_count = if tail == 0 { 0 } else { ((tail * 15 * 2 + 100) / 200).max(1) };
    9 * (len / 64) + tail_count
}

fn document(rng: &mut ChaCha8Rng, len: usize) -> Vec<u32> {
    (0..len).map(|_| loop {
        let t = rng.random_range(0..500u32);
        if t != MASK {
            break t;
        }
    })
    .collect()
}

pub fn check_example(ids: &[u32], seed: u64) -> Result<usize, String> {
    let ex = mask_spans(ids, seed).map_err(|e| format!("length {}: {e}", ids.len()))?;
    let masked = ex.encoder_ids.iter().filter(|&&t| t == MASK).count();
    if ex.encoder_ids.len() != ids.len() || masked != ex.decoder_target_ids.len() {
        return Err(format!("length {}: masked {masked}, target {}", ids.len(), ex.decoder_target_ids.len()));
    }
    let mut prev_end = 0;
    let mut target = Vec::new();
    for s in &ex.spans {
        if s.len == 0 || s.start < prev_end || s.start + s.len > ids.len() {
            return Err(format!("length {}: bad span {s:?}", ids.len()));
        }
        if ex.encoder_ids[s.start..s.start + s.len].iter().any(|&t| t != MASK) {
            return Err(format!("length {}: span {s:?} not fully masked", ids.len()));
        }
        target.extend_from_slice(&ids[s.start..s.start + s.len]);
        prev_end = s.start + s.len;
    }
    if target != ex.decoder_target_ids {
        return Err(format!("length {}: target is not the concatenated spans", ids.len()));
    }
    // Rebuild by walking the encoder input and filling each gap in order.
    let mut fill = ex.decoder_target_ids.iter();
    let rebuilt: Vec<u32> =
        ex.encoder_ids.iter().map(|&t| if t == MASK { *fill.next().unwrap() } else { t }).collect();
    if rebuilt != ids {
        return Err(format!("length {}: reconstruction differs", ids.len()));
    }
    Ok(masked)
}

pub fn run() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2048);
    let doc = document(&mut rng, 512);
    let ex = mask_spans(&doc, 0).map_err(|e| e.to_string())?;
    if ex.spans.len() != 8 || ex.decoder_target_ids.len() != 72 {
        return Err(format!("length 512: {} spans, {} masked", ex.spans.len(), ex.decoder_target_ids.len()));
    }
    for len in 1..=2048 {
        let ids = document(&mut rng, len);
        let got = check_example(&ids, len as u64)?;
        if got != expected_masked(len) {
            return Err(format!("length {len}: masked {got}, closed form {}", expected_masked(len)));
        }
    }
    for i in 0..1000u64 {
        let len = rng.random_range(1..1500);
        let ids = document(&mut rng, len);
        check_example(&ids, i)?;
    }
    Ok("512 -> 8 spans / 72 tokens; lengths 1..=2048 match closed form; 1000 documents reconstruct".into())
}
