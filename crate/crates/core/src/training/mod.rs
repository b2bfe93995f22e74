//! Future n-gram loss, optimizer and the training loop.

mod loss;
mod optim;

pub use loss::future_ngram_loss;
pub use optim::{Adam, AdamState};

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{batch, Batch, Example, Truncation};
use crate::error::{contract, Error, Result};
use crate::model::{Mode, ProphetModel, Session};
use crate::tensor::Element;

/// Run-level hyperparameters outside the model itself.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: Adam,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { optimizer: Adam::default(), batch_size: 8, steps: 1000, seed: 0 }
    }
}

/// Resumable position of the dropout generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Example indices for update number `step` (0-based). Examples are
/// visited epoch by epoch, each epoch in a fresh order derived from `seed`,
/// so the schedule depends only on (seed, step) and survives restarts.
pub fn batch_indices(seed: u64, step: u64, batch_size: usize, n_examples: usize) -> Vec<usize> {
    let mut perms: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    (0..batch_size as u64)
        .map(|i| {
            let p = step * batch_size as u64 + i;
            let epoch = p / n_examples as u64;
            let perm = perms.entry(epoch).or_insert_with(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(epoch);
                let mut order: Vec<usize> = (0..n_examples).collect();
                order.shuffle(&mut rng);
                order
            });
            perm[(p % n_examples as u64) as usize]
        })
        .collect()
}

/// The batch for update number `step` under `settings`.
pub fn scheduled_batch(
    settings: &TrainConfig,
    step: u64,
    examples: &[Example],
    max_len: usize,
    truncation: Truncation,
) -> Result<Batch> {
    if examples.is_empty() {
        return Err(contract("no training examples"));
    }
    if settings.batch_size == 0 {
        return Err(contract("batch_size must be at least 1"));
    }
    let idx = batch_indices(settings.seed, step, settings.batch_size, examples.len());
    let picked: Vec<Example> = idx.into_iter().map(|i| examples[i].clone()).collect();
    batch(&picked, max_len, truncation)
}

/// Model, optimizer state and generator: everything needed to continue a
/// run bit-for-bit.
#[derive(Debug, Clone)]
pub struct Trainer<E> {
    pub model: ProphetModel<E>,
    pub settings: TrainConfig,
    pub optimizer: AdamState<E>,
    pub rng: ChaCha8Rng,
}

impl<E: Element> Trainer<E> {
    pub fn new(model: ProphetModel<E>, settings: TrainConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(settings.seed ^ 0x5eed_d20b);
        Trainer { model, settings, optimizer: AdamState::default(), rng }
    }

    /// Number of updates applied so far.
    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    /// One forward, one backward, one update. Returns the loss before the
    /// update. A non-finite loss aborts without touching any state.
    pub fn train_step(&mut self, batch: &Batch) -> Result<E> {
        let (loss, grads) = {
            let mut s = Session::new(&self.model);
            let mut mode = Mode::Train(&mut self.rng);
            let loss = self.model.batch_loss_on(&mut s, batch, &mut mode)?;
            let value = s.tape.value(loss)[0];
            if !value.is_finite() {
                let culprit = s.tape.first_non_finite().unwrap_or_else(|| String::from("loss"));
                return Err(Error::NonFinite(culprit));
            }
            s.tape.backward(loss)?;
            (value, s.param_grads())
        };
        let params = self.model.params_mut();
        for (name, g) in grads {
            params
                .get_mut(&name)
                .ok_or_else(|| contract(alloc::format!("gradient for unknown parameter {name}")))?
                .accumulate_grad(&g)?;
        }
        self.settings.optimizer.update(params, &mut self.optimizer);
        params.zero_grad();
        Ok(loss)
    }

    /// The batch scheduled for the next update.
    pub fn next_batch(&self, examples: &[Example], truncation: Truncation) -> Result<Batch> {
        scheduled_batch(&self.settings, self.step(), examples, self.model.config().max_len, truncation)
    }

    /// Trains until `settings.steps` updates have been applied in total,
    /// calling `on_step(step, loss)` after each.
    pub fn run(
        &mut self,
        examples: &[Example],
        truncation: Truncation,
        mut on_step: impl FnMut(u64, E),
    ) -> Result<()> {
        while self.step() < self.settings.steps {
            let b = self.next_batch(examples, truncation)?;
            let loss = self.train_step(&b)?;
            on_step(self.step(), loss);
        }
        Ok(())
    }
}
