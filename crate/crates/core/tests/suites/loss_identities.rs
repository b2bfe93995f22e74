//! The future n-gram loss against per-stream oracles written here.

use fngram_core::corpus::{batch, Example, Truncation};
use fngram_core::model::{Mode, ModelConfig, ProphetModel, Session};
use fngram_core::tokenizer::PAD;
use fngram_core::training::future_ngram_loss;
use fngram_core::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOLERANCE: f64 = 1e-10;

/// Mean over `t` of `-log softmax(row j*T + t)[y[t + j]]`, skipping pads and
/// positions past the end.
pub fn stream_ce(logits: &[f64], v: usize, t_len: usize, j: usize, y: &[u32]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0;
    for t in 0..t_len.saturating_sub(j) {
        let target = y[t + j];
        if target == PAD {
            continue;
        }
        let row = &logits[(j * t_len + t) * v..(j * t_len + t + 1) * v];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        sum += lse - row[target as usize];
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn loss(logits: &[f64], n: usize, t_len: usize, v: usize, y: &[u32], alpha: &[f64]) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::new(vec![n * t_len, v], logits.to_vec()).unwrap().with_requires_grad(true));
    let l = future_ngram_loss(&mut tape, x, n, y, alpha, PAD).unwrap();
    let value = tape.value(l)[0];
    tape.backward(l).unwrap();
    (value, tape.grad(x).map_or_else(|| vec![0.0; logits.len()], <[f64]>::to_vec))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOLERANCE
}

/// Random logits; returns the worst deviation for each identity.
pub fn random_identities(trials: u64) -> Result<String, String> {
    let mut worst = [0.0f64; 4];
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..4);
        let t_len = rng.random_range(1..8);
        let v = rng.random_range(3..9);
        let logits: Vec<f64> = (0..n * t_len * v).map(|_| rng.random_range(-4.0..4.0)).collect();
        let y: Vec<u32> =
            (0..t_len).map(|_| if rng.random_bool(0.2) { PAD } else { rng.random_range(1..v as u32) }).collect();
        let alpha: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();

        let (l, g) = loss(&logits, n, t_len, v, &y, &alpha);
        let oracle: f64 = (0..n).map(|j| alpha[j] * stream_ce(&logits, v, t_len, j, &y)).sum();
        worst[0] = worst[0].max((l - oracle).abs());

        if n == 1 {
            worst[1] = worst[1].max((l - alpha[0] * stream_ce(&logits, v, t_len, 0, &y)).abs());
        }
        let mut lm_only = vec![0.0; n];
        lm_only[0] = 1.0;
        let (l0, _) = loss(&logits, n, t_len, v, &y, &lm_only);
        worst[2] = worst[2].max((l0 - stream_ce(&logits, v, t_len, 0, &y)).abs());

        let c = rng.random_range(0.1..5.0);
        let scaled: Vec<f64> = alpha.iter().map(|a| a * c).collect();
        let (ls, gs) = loss(&logits, n, t_len, v, &y, &scaled);
        let mut d = (ls - c * l).abs();
        for (a, b) in gs.iter().zip(&g) {
            d = d.max((a - c * b).abs());
        }
        worst[3] = worst[3].max(d);
    }
    let names = ["decomposition", "n=1 NLL", "alpha=[1,0,..] LM term", "alpha scaling"];
    for (name, w) in names.iter().zip(worst) {
        if !(w <= TOLERANCE) {
            return Err(format!("{name}: deviation {w:e}"));
        }
    }
    Ok(names.iter().zip(worst).map(|(n, w)| format!("{n} {w:.1e}")).collect::<Vec<_>>().join(", "))
}

/// Zero logits over `v` classes for every stream.
pub fn uniform_case(n: usize, t_len: usize, v: usize, alpha: &[f64]) -> f64 {
    let y: Vec<u32> = (0..t_len as u32).map(|t| 1 + t % (v as u32 - 1)).collect();
    loss(&vec![0.0; n * t_len * v], n, t_len, v, &y, alpha).0
}

/// Model-level checks: the n=1 model's loss against an oracle on its own
/// logits, and pad columns leaving gradients untouched.
pub fn model_identities() -> Result<String, String> {
    let mut config = ModelConfig { n_future: 1, alpha: vec![1.0], max_len: 16, ..ModelConfig::toy(24) };
    let model = ProphetModel::<f64>::new(config.clone(), 3).unwrap();
    let src = [8u32, 9, 10, 11];
    let y = [12u32, 13, 14, 6];
    let mask = [true; 4];
    let enc = model.encode(&src, &mask).unwrap();
    let logits = model.decode_streams(&y, &enc, &mask).unwrap();
    let oracle = stream_ce(logits.data(), 24, 4, 0, &y);
    let mut s = Session::new(&model);
    let l = model.example_loss_on(&mut s, &src, &mask, &y, PAD, &mut Mode::Eval).unwrap();
    let got = s.tape.value(l)[0];
    if !close(got, oracle) {
        return Err(format!("n=1 model loss {got} vs oracle {oracle}"));
    }

    config.n_future = 3;
    config.alpha = vec![1.0, 0.5, 0.25];
    let model = ProphetModel::<f64>::new(config.clone(), 4).unwrap();
    let grads = |b: &fngram_core::corpus::Batch| {
        let mut s = Session::new(&model);
        let l = model.example_loss_on(&mut s, &b.source_ids[0], &b.source_mask[0], &b.target_ids[0], PAD, &mut Mode::Eval).unwrap();
        s.tape.backward(l).unwrap();
        s.param_grads()
    };
    let short = Example { source: vec![8, 9], target: vec![10, 11, 6] };
    let long = Example { source: vec![8, 9, 10, 11, 12, 13], target: vec![10, 11, 12, 13, 14, 15, 6] };
    let alone = batch(&[short.clone()], 16, Truncation::Right).unwrap();
    let padded = batch(&[short, long], 16, Truncation::Right).unwrap();
    if padded.target_ids[0].len() <= alone.target_ids[0].len() {
        return Err("padding was not introduced".into());
    }
    let (ga, gb) = (grads(&alone), grads(&padded));
    let mut worst: f64 = 0.0;
    for ((na, a), (nb, b)) in ga.iter().zip(&gb) {
        if na != nb {
            return Err(format!("gradient sets differ at {na} / {nb}"));
        }
        for (x, y) in a.iter().zip(b) {
            worst = worst.max((x - y).abs());
        }
    }
    if ga.len() != gb.len() || !(worst <= TOLERANCE) {
        return Err(format!("pad columns changed gradients by {worst:e}"));
    }
    Ok(format!("n=1 model loss matches oracle, pad-column gradient change {worst:.1e}"))
}

pub fn run() -> Result<String, String> {
    let random = random_identities(200)?;
    let mut uniform_worst: f64 = 0.0;
    for (n, alpha) in [(1, vec![1.0]), (2, vec![1.0, 0.5]), (3, vec![1.0, 0.5, 0.25]), (2, vec![0.3, 2.0])] {
        for v in [4usize, 7, 30] {
            let expect: f64 = alpha.iter().sum::<f64>() * (v as f64).ln();
            uniform_worst = uniform_worst.max((uniform_case(n, 5, v, &alpha) - expect).abs());
        }
    }
    if !(uniform_worst <= TOLERANCE) {
        return Err(format!("uniform logits deviate from sum(alpha)*ln V by {uniform_worst:e}"));
    }
    let model = model_identities()?;
    Ok(format!("{random}, uniform {uniform_worst:.1e}; {model}"))
}
