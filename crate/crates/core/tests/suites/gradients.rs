//! Central finite differences against reverse-mode gradients at f64.

use fngram_core::corpus::{batch, Example, Truncation};
use fngram_core::model::{Mode, ModelConfig, ProphetModel, Session};
use fngram_core::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-3;
pub const TRIALS: u64 = 100;

type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Var;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn eval(inputs: &[Tensor<f64>], f: &Build) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(&t.clone().with_requires_grad(true))).collect();
    let loss = f(&mut tape, &vars);
    let value = tape.value(loss)[0];
    tape.backward(loss).unwrap();
    let grads = vars.iter().map(|&v| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_default()).collect();
    (value, grads)
}

fn forward(inputs: &[Tensor<f64>], f: &Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let loss = f(&mut tape, &vars);
    tape.value(loss)[0]
}

/// Worst relative error over all inputs of one op instance.
fn check(inputs: Vec<Tensor<f64>>, f: &Build) -> f64 {
    let (_, analytic) = eval(&inputs, f);
    let mut worst: f64 = 0.0;
    for (i, grad) in analytic.iter().enumerate() {
        let mut numeric = Vec::with_capacity(inputs[i].numel());
        for k in 0..inputs[i].numel() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[k] += STEP;
            let mut minus = inputs.clone();
            minus[i].data_mut()[k] -= STEP;
            numeric.push((forward(&plus, f) - forward(&minus, f)) / (2.0 * STEP));
        }
        let grad = if grad.is_empty() { vec![0.0; numeric.len()] } else { grad.clone() };
        worst = worst.max(relative_error(&grad, &numeric));
    }
    worst
}

/// Reduces a tensor output to a scalar with fixed random weights, so every
/// output element carries a distinct gradient.
fn weighted(tape: &mut Tape<f64>, out: Var, seed: u64) -> Var {
    let shape = tape.shape(out).to_vec();
    let w = rand_tensor(&mut ChaCha8Rng::seed_from_u64(seed), &shape);
    let w = tape.constant(shape, w.data().to_vec()).unwrap();
    let p = tape.mul(out, w).unwrap();
    tape.sum(p)
}

pub const OPS: [&str; 16] = [
    "matmul",
    "add",
    "add_bias",
    "mul",
    "scale",
    "sum",
    "softmax",
    "layer_norm",
    "embedding",
    "concat_rows",
    "concat_cols",
    "slice_rows",
    "slice_cols",
    "transpose",
    "gelu",
    "cross_entropy",
];

/// Worst error of `op` over one seeded trial.
pub fn op_trial(op: &str, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(1..5usize);
    let k = rng.random_range(1..5usize);
    let n = rng.random_range(1..5usize);
    let ws = seed.wrapping_mul(31).wrapping_add(7);
    let mut data = ChaCha8Rng::seed_from_u64(!seed);
    let mut t = |shape: &[usize]| rand_tensor(&mut data, shape);
    match op {
        "matmul" => check(vec![t(&[m, k]), t(&[k, n])], &move |tp, v| {
            let o = tp.matmul(v[0], v[1]).unwrap();
            weighted(tp, o, ws)
        }),
        "add" => check(vec![t(&[m, k]), t(&[m, k])], &move |tp, v| {
            let o = tp.add(v[0], v[1]).unwrap();
            weighted(tp, o, ws)
        }),
        "add_bias" => check(vec![t(&[m, k]), t(&[k])], &move |tp, v| {
            let o = tp.add_bias(v[0], v[1]).unwrap();
            weighted(tp, o, ws)
        }),
        "mul" => check(vec![t(&[m, k]), t(&[m, k])], &move |tp, v| {
            let o = tp.mul(v[0], v[1]).unwrap();
            weighted(tp, o, ws)
        }),
        "scale" => {
            let c = rng.random_range(-2.0..2.0);
            check(vec![t(&[m, k])], &move |tp, v| {
                let o = tp.scale(v[0], c);
                weighted(tp, o, ws)
            })
        }
        "sum" => check(vec![t(&[m, k])], &move |tp, v| {
            let o = tp.sum(v[0]);
            let o = tp.mul(o, o).unwrap();
            tp.sum(o)
        }),
        "softmax" => check(vec![t(&[m, k + 1])], &move |tp, v| {
            let o = tp.softmax(v[0]);
            weighted(tp, o, ws)
        }),
        "layer_norm" => check(vec![t(&[m, k + 1]), t(&[k + 1]), t(&[k + 1])], &move |tp, v| {
            let o = tp.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
            weighted(tp, o, ws)
        }),
        "embedding" => {
            let ids: Vec<u32> = (0..n + 1).map(|_| rng.random_range(0..m as u32)).collect();
            check(vec![t(&[m, k])], &move |tp, v| {
                let o = tp.embedding(v[0], &ids).unwrap();
                weighted(tp, o, ws)
            })
        }
        "concat_rows" => check(vec![t(&[m, k]), t(&[n, k])], &move |tp, v| {
            let o = tp.concat(&[v[0], v[1]], 0).unwrap();
            weighted(tp, o, ws)
        }),
        "concat_cols" => check(vec![t(&[m, k]), t(&[m, n])], &move |tp, v| {
            let o = tp.concat(&[v[0], v[1]], 1).unwrap();
            weighted(tp, o, ws)
        }),
        "slice_rows" => {
            let start = rng.random_range(0..m);
            let len = rng.random_range(1..=m - start);
            check(vec![t(&[m, k])], &move |tp, v| {
                let o = tp.slice(v[0], 0, start, len).unwrap();
                weighted(tp, o, ws)
            })
        }
        "slice_cols" => {
            let start = rng.random_range(0..k);
            let len = rng.random_range(1..=k - start);
            check(vec![t(&[m, k])], &move |tp, v| {
                let o = tp.slice(v[0], 1, start, len).unwrap();
                weighted(tp, o, ws)
            })
        }
        "transpose" => check(vec![t(&[m, k])], &move |tp, v| {
            let o = tp.transpose(v[0]).unwrap();
            weighted(tp, o, ws)
        }),
        "gelu" => check(vec![t(&[m, k])], &move |tp, v| {
            let o = tp.gelu(v[0]);
            weighted(tp, o, ws)
        }),
        "cross_entropy" => {
            let v_size = k + 1;
            let mut targets: Vec<u32> = (0..m + 1).map(|_| rng.random_range(0..v_size as u32)).collect();
            // Occasionally ignore a row, never all of them.
            if targets.len() > 1 && rng.random_bool(0.5) {
                targets[0] = u32::MAX;
            }
            check(vec![t(&[m + 1, v_size])], &move |tp, v| {
                tp.cross_entropy(v[0], &targets, u32::MAX).unwrap()
            })
        }
        other => panic!("unknown op {other}"),
    }
}

fn model_config() -> ModelConfig {
    ModelConfig { n_future: 3, alpha: vec![1.0, 0.5, 0.25], max_len: 16, ..ModelConfig::toy(24) }
}

/// One seeded trial of the full model: a padded two-example batch, eight
/// sampled parameter coordinates.
pub fn model_trial(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = model_config();
    let model = ProphetModel::<f64>::new(config.clone(), seed).unwrap();
    let mut ids = |len: usize| -> Vec<u32> { (0..len).map(|_| rng.random_range(7..24)).collect() };
    let examples = vec![
        Example { source: ids(4), target: ids(5) },
        Example { source: ids(2), target: ids(3) },
    ];
    let b = batch(&examples, config.max_len, Truncation::Right).unwrap();
    let loss_of = |m: &ProphetModel<f64>| {
        let mut s = Session::new(m);
        let l = m.batch_loss_on(&mut s, &b, &mut Mode::Eval).unwrap();
        s.tape.value(l)[0]
    };
    let mut s = Session::new(&model);
    let loss = model.batch_loss_on(&mut s, &b, &mut Mode::Eval).unwrap();
    s.tape.backward(loss).unwrap();
    let grads: std::collections::BTreeMap<String, Vec<f64>> = s.param_grads().into_iter().collect();
    drop(s);

    let names: Vec<String> = model.params().iter().map(|(n, _)| n.to_string()).collect();
    let used: Vec<u32> = examples.iter().flat_map(|e| e.source.iter().chain(&e.target)).copied().collect();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for _ in 0..8 {
        let name = &names[rng.random_range(0..names.len())];
        let t = model.params().get(name).unwrap();
        let width = *t.shape().last().unwrap();
        let row = match name.as_str() {
            "embed.token" => used[rng.random_range(0..used.len())] as usize,
            "embed.position" => rng.random_range(0..6),
            _ => rng.random_range(0..t.numel() / width),
        };
        let idx = row * width + rng.random_range(0..width);
        let mut plus = model.clone();
        plus.params_mut().get_mut(name).unwrap().data_mut()[idx] += STEP;
        let mut minus = model.clone();
        minus.params_mut().get_mut(name).unwrap().data_mut()[idx] -= STEP;
        numeric.push((loss_of(&plus) - loss_of(&minus)) / (2.0 * STEP));
        analytic.push(grads.get(name).map_or(0.0, |g| g[idx]));
    }
    relative_error(&analytic, &numeric)
}

/// Runs every op and the model for `TRIALS` seeds; returns the worst error
/// seen per check.
pub fn run() -> Result<String, String> {
    let mut report = Vec::new();
    let mut failures = Vec::new();
    for op in OPS {
        let worst = (0..TRIALS).map(|s| op_trial(op, s)).fold(0.0, f64::max);
        report.push(format!("{op} {worst:.1e}"));
        if !(worst < TOLERANCE) {
            failures.push(format!("{op}: {worst:.3e}"));
        }
    }
    let worst = (0..TRIALS).map(model_trial).fold(0.0, f64::max);
    report.push(format!("model {worst:.1e}"));
    if !(worst < TOLERANCE) {
        failures.push(format!("model: {worst:.3e}"));
    }
    if failures.is_empty() {
        Ok(format!("worst relative error: {}", report.join(", ")))
    } else {
        Err(format!("relative error >= {TOLERANCE}: {}", failures.join("; ")))
    }
}
