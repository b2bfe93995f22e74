//! Beam search against exhaustive enumeration of every sequence the search
//! could produce.

use std::collections::BTreeMap;

use fngram_core::generation::{beam_search, greedy, Hypothesis, SearchOptions, StepScorer};
use fngram_core::Result as CoreResult;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EOS: u32 = 0;

/// Prefix-dependent distributions, drawn lazily from a hash of the prefix.
pub struct RandomTree {
    pub vocab: usize,
    pub seed: u64,
}

impl StepScorer for RandomTree {
    type State = Vec<u32>;

    fn start(&self) -> CoreResult<Vec<u32>> {
        Ok(Vec::new())
    }

    fn log_probs(&self, prefix: &Vec<u32>) -> Vec<f64> {
        let mut h = self.seed ^ 0x9e37_79b9_7f4a_7c15;
        for &t in prefix {
            h = h.wrapping_mul(0x100_0000_01b3).wrapping_add(t as u64 + 1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let w: Vec<f64> = (0..self.vocab).map(|_| rng.random_range(0.05..1.0f64)).collect();
        let z: f64 = w.iter().sum();
        w.iter().map(|x| (x / z).ln()).collect()
    }

    fn advance(&self, prefix: &mut Vec<u32>, token: u32) -> CoreResult<()> {
        prefix.push(token);
        Ok(())
    }
}

/// Explicit probability tables keyed by prefix; unlisted prefixes are
/// uniform.
pub struct Table {
    pub vocab: usize,
    pub rows: BTreeMap<Vec<u32>, Vec<f64>>,
}

impl StepScorer for Table {
    type State = Vec<u32>;

    fn start(&self) -> CoreResult<Vec<u32>> {
        Ok(Vec::new())
    }

    fn log_probs(&self, prefix: &Vec<u32>) -> Vec<f64> {
        match self.rows.get(prefix) {
            Some(p) => p.iter().map(|x| x.ln()).collect(),
            None => vec![-(self.vocab as f64).ln(); self.vocab],
        }
    }

    fn advance(&self, prefix: &mut Vec<u32>, token: u32) -> CoreResult<()> {
        prefix.push(token);
        Ok(())
    }
}

/// Every sequence ending in EOS within `steps` steps, plus every EOS-free
/// sequence of exactly `steps` tokens, scored and sorted best first.
pub fn enumerate<S: StepScorer<State = Vec<u32>>>(scorer: &S, vocab: usize, steps: usize, norm: f64) -> Vec<Hypothesis> {
    let mut out = Vec::new();
    let mut frontier: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    for depth in 1..=steps {
        let mut next = Vec::new();
        for (prefix, lp) in &frontier {
            let dist = scorer.log_probs(prefix);
            for t in 0..vocab as u32 {
                let total = lp + dist[t as usize];
                if t == EOS {
                    out.push(Hypothesis {
                        ids: prefix.clone(),
                        log_prob: total,
                        score: total / (depth as f64).powf(norm),
                        finished: true,
                    });
                } else {
                    let mut ids = prefix.clone();
                    ids.push(t);
                    next.push((ids, total));
                }
            }
        }
        frontier = next;
    }
    for (ids, lp) in frontier {
        out.push(Hypothesis { score: lp / (steps as f64).powf(norm), ids, log_prob: lp, finished: false });
    }
    out.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then_with(|| a.ids.cmp(&b.ids)));
    out
}

fn opts(steps: usize) -> SearchOptions {
    SearchOptions { max_out: steps, eos: EOS, banned: Vec::new() }
}

/// The worked three-step example where beam 2 recovers the top two.
pub fn hand_example() -> Result<(), String> {
    let rows = BTreeMap::from([
        (vec![], vec![0.1, 0.5, 0.4]),
        (vec![1], vec![0.8, 0.1, 0.1]),
        (vec![2], vec![0.05, 0.9, 0.05]),
        (vec![2, 1], vec![0.9, 0.05, 0.05]),
    ]);
    let table = Table { vocab: 3, rows };
    let beam = beam_search(&table, &opts(3), 2, 0.0).map_err(|e| e.to_string())?;
    let exact = enumerate(&table, 3, 3, 0.0);
    for k in 0..2 {
        if beam[k].ids != exact[k].ids || (beam[k].score - exact[k].score).abs() > 1e-12 {
            return Err(format!("rank {k}: beam {:?} vs exhaustive {:?}", beam[k], exact[k]));
        }
    }
    if exact[0].ids != [1] || exact[1].ids != [2, 1] {
        return Err(format!("unexpected exhaustive ranking {:?}", &exact[..2]));
    }
    Ok(())
}

pub fn run() -> Result<String, String> {
    hand_example()?;
    let mut instances = 0;
    for vocab in 2..=6usize {
        for steps in 1..=4usize {
            for norm in [0.0, 0.5, 1.0, 2.0] {
                for seed in 0..5u64 {
                    let tree = RandomTree { vocab, seed: seed * 1000 + (vocab * 10 + steps) as u64 };
                    let width = vocab.pow(steps as u32);
                    let beam = beam_search(&tree, &opts(steps), width, norm).map_err(|e| e.to_string())?;
                    let exact = enumerate(&tree, vocab, steps, norm);
                    if beam.len() != exact.len() {
                        return Err(format!("V={vocab} steps={steps}: {} vs {} hypotheses", beam.len(), exact.len()));
                    }
                    for (b, e) in beam.iter().zip(&exact) {
                        if b.ids != e.ids || b.finished != e.finished || (b.score - e.score).abs() > 1e-12 {
                            return Err(format!("V={vocab} steps={steps} norm={norm}: {b:?} vs {e:?}"));
                        }
                    }
                    let one = beam_search(&tree, &opts(steps), 1, norm).map_err(|e| e.to_string())?;
                    let g = greedy(&tree, &opts(steps)).map_err(|e| e.to_string())?;
                    if one[0].ids != g {
                        return Err(format!("V={vocab} steps={steps}: beam 1 {:?} vs greedy {g:?}", one[0].ids));
                    }
                    instances += 1;
                }
            }
        }
    }
    Ok(format!("{instances} instances (vocab 2..=6, steps 1..=4) plus the hand example"))
}
