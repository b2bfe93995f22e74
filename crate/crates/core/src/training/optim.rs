use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::model::Parameters;
use crate::tensor::Element;

/// Adam with bias correction and a linear warmup to a constant rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: u64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, warmup_steps: 0 }
    }
}

/// First and second moment estimates per parameter, plus the update count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState<E> {
    pub step: u64,
    pub m: BTreeMap<String, Vec<E>>,
    pub v: BTreeMap<String, Vec<E>>,
}

impl Adam {
    /// Learning rate of update number `step` (1-based).
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.lr
        } else {
            self.lr * step as f64 / self.warmup_steps as f64
        }
    }

    /// Applies one update from the gradients stored on `params`.
    /// Parameters without a gradient keep their values and moments.
    pub fn update<E: Element>(&self, params: &mut Parameters<E>, state: &mut AdamState<E>) {
        state.step += 1;
        let t = state.step as i32;
        let lr = E::from_f64(self.lr_at(state.step));
        let (b1, b2) = (E::from_f64(self.beta1), E::from_f64(self.beta2));
        let (one, eps) = (E::one(), E::from_f64(self.eps));
        let c1 = E::from_f64(1.0 - Float::powi(self.beta1, t));
        let c2 = E::from_f64(1.0 - Float::powi(self.beta2, t));
        for (name, p) in params.iter_mut() {
            let Some(g) = p.grad().map(<[E]>::to_vec) else { continue };
            let m = state.m.entry(String::from(name)).or_insert_with(|| vec![E::zero(); g.len()]);
            let v = state.v.entry(String::from(name)).or_insert_with(|| vec![E::zero(); g.len()]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
