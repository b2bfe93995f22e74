use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::error::{contract, Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Ones,
    Zeros,
}

/// Every parameter name with its shape and initializer, in creation order.
fn layout(c: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (h, f) = (c.hidden, c.ffn);
    let mut out = vec![
        ("embed.token".into(), vec![c.vocab_size, h], Init::Normal),
        ("embed.position".into(), vec![c.max_len, h], Init::Normal),
        ("embed.stream".into(), vec![c.n_future, h], Init::Normal),
    ];
    let norm = |out: &mut Vec<_>, p: String| {
        out.push((format!("{p}.gain"), vec![h], Init::Ones));
        out.push((format!("{p}.bias"), vec![h], Init::Zeros));
    };
    let attn = |out: &mut Vec<_>, p: String| {
        for proj in ["q", "k", "v", "o"] {
            out.push((format!("{p}.{proj}.weight"), vec![h, h], Init::Normal));
            out.push((format!("{p}.{proj}.bias"), vec![h], Init::Zeros));
        }
    };
    let ffn = |out: &mut Vec<_>, p: String| {
        out.push((format!("{p}.ffn.in.weight"), vec![h, f], Init::Normal));
        out.push((format!("{p}.ffn.in.bias"), vec![f], Init::Zeros));
        out.push((format!("{p}.ffn.out.weight"), vec![f, h], Init::Normal));
        out.push((format!("{p}.ffn.out.bias"), vec![h], Init::Zeros));
    };
    for l in 0..c.layers_enc {
        let p = format!("encoder.{l}");
        norm(&mut out, format!("{p}.ln1"));
        attn(&mut out, format!("{p}.self_attn"));
        norm(&mut out, format!("{p}.ln2"));
        ffn(&mut out, p);
    }
    norm(&mut out, "encoder.final_ln".into());
    for l in 0..c.layers_dec {
        let p = format!("decoder.{l}");
        norm(&mut out, format!("{p}.ln1"));
        attn(&mut out, format!("{p}.self_attn"));
        norm(&mut out, format!("{p}.ln2"));
        attn(&mut out, format!("{p}.cross_attn"));
        norm(&mut out, format!("{p}.ln3"));
        ffn(&mut out, p);
    }
    norm(&mut out, "decoder.final_ln".into());
    out
}

/// Named parameter tensors, iterated in name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Parameters<E> {
    tensors: BTreeMap<String, Tensor<E>>,
}

impl<E: Element> Parameters<E> {
    pub fn new() -> Self {
        Parameters { tensors: BTreeMap::new() }
    }

    pub(crate) fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, config.init_std).map_err(|e| Error::Config(format!("{e}")))?;
        let mut tensors = BTreeMap::new();
        for (name, shape, init) in layout(config) {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Normal => (0..n).map(|_| E::from_f64(normal.sample(&mut rng))).collect(),
                Init::Ones => vec![E::one(); n],
                Init::Zeros => vec![E::zero(); n],
            };
            tensors.insert(name, Tensor::new(shape, data)?.with_requires_grad(true));
        }
        Ok(Parameters { tensors })
    }

    /// Fails unless names and shapes match `config` exactly.
    pub fn check_layout(&self, config: &ModelConfig) -> Result<()> {
        let expected = layout(config);
        if expected.len() != self.tensors.len() {
            return Err(contract(format!(
                "expected {} parameters, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for (name, shape, _) in expected {
            match self.tensors.get(&name) {
                None => return Err(contract(format!("missing parameter {name}"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::Shape { op: "parameter", lhs: t.shape().to_vec(), rhs: shape })
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<E>) -> Option<Tensor<E>> {
        self.tensors.insert(name.into(), tensor)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<E>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<E>> {
        self.tensors.get_mut(name)
    }

    pub(crate) fn get_key_value(&self, name: &str) -> Option<(&str, &Tensor<E>)> {
        self.tensors.get_key_value(name).map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<E>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.values_mut().for_each(Tensor::zero_grad);
    }

    pub fn cast<F: Element>(&self) -> Parameters<F> {
        Parameters { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }
}
