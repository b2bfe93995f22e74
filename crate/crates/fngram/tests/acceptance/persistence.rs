//! Interrupted training resumes bit-for-bit.

use fngram::checkpoint;
use fngram_core::corpus::{Example, Truncation};
use fngram_core::model::{ModelConfig, ProphetModel};
use fngram_core::training::{Adam, TrainConfig, Trainer};
use fngram_core::Element;

fn examples() -> Vec<Example> {
    (0..12u32)
        .map(|i| Example { source: (7..12 + i % 5).collect(), target: vec![8 + i % 9, 9 + i % 4, 6] })
        .collect()
}

fn fresh<E: Element>(steps: u64) -> Trainer<E> {
    // Dropout on, so the generator state has to survive the round trip too.
    let config = ModelConfig { hidden: 32, ffn: 64, heads: 2, max_len: 16, dropout: 0.1, ..ModelConfig::toy(24) };
    let settings = TrainConfig {
        optimizer: Adam { lr: 0.01, warmup_steps: 3, ..Adam::default() },
        batch_size: 4,
        steps,
        seed: 11,
    };
    Trainer::new(ProphetModel::new(config, 5).unwrap(), settings)
}

/// Trains `k` steps, saves, loads and trains `k` more; compares the
/// checkpoint bytes against `2k` uninterrupted steps.
pub fn split_matches_straight<E: Element>(k: u64) -> Result<(), String> {
    let data = examples();
    let mut straight = fresh::<E>(2 * k);
    straight.run(&data, Truncation::Right, |_, _| {}).map_err(|e| e.to_string())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("half.ck");
    let mut first = fresh::<E>(k);
    first.run(&data, Truncation::Right, |_, _| {}).map_err(|e| e.to_string())?;
    checkpoint::save(&path, &first).map_err(|e| e.to_string())?;
    drop(first);
    let mut second: Trainer<E> = checkpoint::load(&path).map_err(|e| e.to_string())?;
    second.settings.steps = 2 * k;
    second.run(&data, Truncation::Right, |_, _| {}).map_err(|e| e.to_string())?;

    if second.step() != 2 * k {
        return Err(format!("resumed run stopped at step {}", second.step()));
    }
    if checkpoint::to_bytes(&second) != checkpoint::to_bytes(&straight) {
        return Err(format!("{} split run differs from straight run", E::DTYPE.name()));
    }
    Ok(())
}

pub fn run() -> Result<String, String> {
    for k in [1, 5, 10] {
        split_matches_straight::<f32>(k)?;
        split_matches_straight::<f64>(k)?;
    }
    Ok("k in {1, 5, 10} at f32 and f64: checkpoints bitwise equal".to_string())
}
