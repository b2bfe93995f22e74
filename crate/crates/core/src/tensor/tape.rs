use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::{numel_of, Element, Tensor};
use crate::error::{contract, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<E> {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add { a: Var, b: Var },
    AddBias { x: Var, bias: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: E },
    Sum { x: Var },
    Softmax { x: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, normed: Vec<E>, rstd: Vec<E> },
    Embedding { table: Var, ids: Vec<usize> },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Transpose { x: Var },
    Gelu { x: Var },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<E>, count: usize },
}

impl<E> Op<E> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::AddBias { .. } => "add_bias",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Sum { .. } => "sum",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Embedding { .. } => "embedding",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Transpose { .. } => "transpose",
            Op::Gelu { .. } => "gelu",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node<E> {
    shape: Vec<usize>,
    value: Arc<Vec<E>>,
    op: Op<E>,
    requires_grad: bool,
    label: Option<String>,
}

/// Records a forward computation so gradients can be pulled back from a
/// scalar loss.
///
/// Gradients of leaves accumulate across [`Tape::backward`] calls until
/// [`Tape::zero_grad`].
#[derive(Debug, Default)]
pub struct Tape<E> {
    nodes: Vec<Node<E>>,
    leaf_grads: Vec<Option<Vec<E>>>,
}

/// Splits `shape` around `axis` into (outer, dim, inner) extents.
fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn gelu_parts<E: Element>(x: E) -> (E, E) {
    // tanh approximation
    let c = E::from_f64(0.797_884_560_802_865_4);
    let a = E::from_f64(0.044_715);
    let half = E::from_f64(0.5);
    let one = E::one();
    let x2 = x * x;
    let u = c * (x + a * x2 * x);
    let t = u.tanh();
    let y = half * x * (one + t);
    let dy = half * (one + t) + half * x * (one - t * t) * c * (one + E::from_f64(3.0) * a * x2);
    (y, dy)
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), leaf_grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<E>, op: Op<E>, requires_grad: bool) -> Var {
        debug_assert_eq!(numel_of(&shape), value.len());
        self.nodes.push(Node { shape, value: Arc::new(value), op, requires_grad, label: None });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<E> {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Registers a tensor as a leaf. Shares the tensor's storage.
    pub fn leaf(&mut self, t: &Tensor<E>) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.shared_data().clone(),
            op: Op::Leaf,
            requires_grad: t.requires_grad(),
            label: None,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Registers a leaf with a name used in diagnostics.
    pub fn leaf_named(&mut self, name: &str, t: &Tensor<E>) -> Var {
        let v = self.leaf(t);
        self.nodes[v.0].label = Some(String::from(name));
        v
    }

    /// Registers a constant (non-differentiable) leaf.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<E>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.leaf(&t))
    }

    pub fn value(&self, v: Var) -> &[E] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Snapshot of a recorded value as a standalone tensor.
    pub fn tensor(&self, v: Var) -> Tensor<E> {
        let n = self.node(v);
        Tensor::from_shared(n.shape.clone(), n.value.clone())
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[E]> {
        self.leaf_grads[v.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    /// Name of the first recorded value containing a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.nodes.iter().enumerate().find_map(|(i, n)| {
            if n.value.iter().all(|x| x.is_finite()) {
                return None;
            }
            Some(match &n.label {
                Some(l) => format!("{} `{}` (node {})", n.op.name(), l, i),
                None => format!("{} (node {})", n.op.name(), i),
            })
        })
    }

    // ---- forward ops ----

    /// Matrix product of `[m×k]` and `[k×p]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape { op: "matmul", lhs: sa.to_vec(), rhs: sb.to_vec() });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_kernel(self.value(a), self.value(b), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b, m, k, n }, rg))
    }

    /// Elementwise sum of equally shaped tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add { a, b }, rg))
    }

    /// Adds a `[d]` vector to every last-axis slice of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = *self.shape(x).last().unwrap();
        if self.shape(bias) != [d] {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias);
        let out = self.value(x).chunks(d).flat_map(|row| row.iter().zip(b).map(|(&v, &w)| v + w)).collect();
        let rg = self.rg(&[x, bias]);
        Ok(self.push(self.shape(x).to_vec(), out, Op::AddBias { x, bias }, rg))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul { a, b }, rg))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, x: Var, factor: E) -> Var {
        let out = self.value(x).iter().map(|&v| v * factor).collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Scale { x, factor }, rg)
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().fold(E::zero(), |acc, &v| acc + v);
        let rg = self.rg(&[x]);
        self.push(vec![1], vec![s], Op::Sum { x }, rg)
    }

    /// Max-stabilized softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let d = *self.shape(x).last().unwrap();
        let mut out = self.value(x).to_vec();
        out.chunks_mut(d).for_each(softmax_row);
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Softmax { x }, rg)
    }

    /// Normalizes each last-axis slice to zero mean and unit variance, then
    /// applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: E) -> Result<Var> {
        if eps <= E::zero() {
            return Err(contract("layer_norm eps must be positive"));
        }
        let d = *self.shape(x).last().unwrap();
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(Error::Shape {
                    op: "layer_norm",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let (g, b) = (self.value(gain), self.value(bias));
        let xs = self.value(x);
        let rows = xs.len() / d;
        let dn = E::from_f64(d as f64);
        let mut normed = Vec::with_capacity(xs.len());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xs.len());
        for row in xs.chunks(d) {
            let mean = row.iter().fold(E::zero(), |a, &v| a + v) / dn;
            let var = row.iter().fold(E::zero(), |a, &v| a + (v - mean) * (v - mean)) / dn;
            let r = E::one() / (var + eps).sqrt();
            rstd.push(r);
            for (i, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                normed.push(h);
                out.push(h * g[i] + b[i]);
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(self.shape(x).to_vec(), out, Op::LayerNorm { x, gain, bias, normed, rstd }, rg))
    }

    /// Gathers rows of a `[V×d]` table.
    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(Error::Shape { op: "embedding", lhs: s.to_vec(), rhs: vec![ids.len()] });
        }
        let (vocab, d) = (s[0], s[1]);
        if ids.is_empty() {
            return Err(contract("embedding lookup with no ids"));
        }
        let mut idx = Vec::with_capacity(ids.len());
        for &id in ids {
            let id = id as usize;
            if id >= vocab {
                return Err(Error::Index { index: id, size: vocab });
            }
            idx.push(id);
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in &idx {
            out.extend_from_slice(&t[id * d..(id + 1) * d]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(vec![idx.len(), d], out, Op::Embedding { table, ids: idx }, rg))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = match inputs.first() {
            Some(&v) => self.shape(v).to_vec(),
            None => return Err(contract("concat of zero tensors")),
        };
        if axis >= first.len() {
            return Err(Error::Index { index: axis, size: first.len() });
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let agree = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !agree {
                return Err(Error::Shape { op: "concat", lhs: first, rhs: s.to_vec() });
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_extents(&first, axis);
        let mut out = Vec::with_capacity(numel_of(&shape));
        for o in 0..outer {
            for &v in inputs {
                let chunk = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v)[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = self.rg(inputs);
        Ok(self.push(shape, out, Op::Concat { inputs: inputs.to_vec(), axis }, rg))
    }

    /// Copies `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::Index { index: axis, size: s.len() });
        }
        if len == 0 || start + len > s[axis] {
            return Err(Error::Index { index: start + len, size: s[axis] });
        }
        let (outer, dim, inner) = axis_extents(&s, axis);
        let xs = self.value(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            out.extend_from_slice(&xs[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.rg(&[x]);
        Ok(self.push(shape, out, Op::Slice { x, axis, start }, rg))
    }

    /// Transposes a 2-D tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::Shape { op: "transpose", lhs: s.to_vec(), rhs: vec![] });
        }
        let (r, c) = (s[0], s[1]);
        let out = transpose_kernel(self.value(x), r, c);
        let rg = self.rg(&[x]);
        Ok(self.push(vec![c, r], out, Op::Transpose { x }, rg))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| gelu_parts(v).0).collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Gelu { x }, rg)
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `[T×V]` logits. Rows whose target equals `ignore_index` are skipped;
    /// if every row is skipped the loss is zero.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32], ignore_index: u32) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != targets.len() {
            return Err(Error::Shape { op: "cross_entropy", lhs: s.to_vec(), rhs: vec![targets.len()] });
        }
        let v = s[1];
        let mut tgt = Vec::with_capacity(targets.len());
        for &t in targets {
            if t == ignore_index {
                tgt.push(None);
            } else if (t as usize) < v {
                tgt.push(Some(t as usize));
            } else {
                return Err(Error::Index { index: t as usize, size: v });
            }
        }
        let count = tgt.iter().filter(|t| t.is_some()).count();
        let mut probs = self.value(logits).to_vec();
        let mut total = E::zero();
        for (row, t) in probs.chunks_mut(v).zip(&tgt) {
            let max = row.iter().fold(E::neg_infinity(), |m, &x| m.max(x));
            let z = row.iter().fold(E::zero(), |a, &x| a + (x - max).exp());
            if let Some(t) = t {
                total = total + (max + z.ln() - row[*t]);
            }
            row.iter_mut().for_each(|x| *x = (*x - max).exp() / z);
        }
        let loss = if count == 0 { E::zero() } else { total / E::from_f64(count as f64) };
        let rg = self.rg(&[logits]);
        Ok(self.push(vec![1], vec![loss], Op::CrossEntropy { logits, targets: tgt, probs, count }, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape { op, lhs: self.shape(a).to_vec(), rhs: self.shape(b).to_vec() });
        }
        Ok(())
    }

    // ---- reverse pass ----

    /// Back-propagates from a scalar `loss`, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.node(loss).value.len() != 1 {
            return Err(contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<E>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![E::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = node.op {
                match &mut self.leaf_grads[i] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[E], grads: &mut [Option<Vec<E>>]) {
        let nodes = &self.nodes;
        let wants = |v: &Var| nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [E])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![E::zero(); nodes[v.0].value.len()]);
            f(slot);
        };
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                if wants(a) {
                    let bv = &nodes[b.0].value;
                    acc(*a, &mut |ga| {
                        for r in 0..m {
                            let grow = &g[r * n..(r + 1) * n];
                            for p in 0..k {
                                let brow = &bv[p * n..(p + 1) * n];
                                let dot = grow.iter().zip(brow).fold(E::zero(), |s, (&x, &y)| s + x * y);
                                ga[r * k + p] = ga[r * k + p] + dot;
                            }
                        }
                    });
                }
                if wants(b) {
                    let av = &nodes[a.0].value;
                    acc(*b, &mut |gb| {
                        for r in 0..m {
                            let grow = &g[r * n..(r + 1) * n];
                            for p in 0..k {
                                let x = av[r * k + p];
                                let dst = &mut gb[p * n..(p + 1) * n];
                                dst.iter_mut().zip(grow).for_each(|(d, &y)| *d = *d + x * y);
                            }
                        }
                    });
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    acc(v, &mut |gv| gv.iter_mut().zip(g).for_each(|(d, &y)| *d = *d + y));
                }
            }
            Op::AddBias { x, bias } => {
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(d, &y)| *d = *d + y));
                let d = nodes[bias.0].value.len();
                acc(*bias, &mut |gb| {
                    for row in g.chunks(d) {
                        gb.iter_mut().zip(row).for_each(|(s, &y)| *s = *s + y);
                    }
                });
            }
            Op::Mul { a, b } => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(*a, &mut |ga| {
                    for ((d, &y), &o) in ga.iter_mut().zip(g).zip(bv.iter()) {
                        *d = *d + y * o;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((d, &y), &o) in gb.iter_mut().zip(g).zip(av.iter()) {
                        *d = *d + y * o;
                    }
                });
            }
            Op::Scale { x, factor } => {
                let f = *factor;
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(d, &y)| *d = *d + y * f));
            }
            Op::Sum { x } => {
                let s = g[0];
                acc(*x, &mut |gx| gx.iter_mut().for_each(|d| *d = *d + s));
            }
            Op::Softmax { x } => {
                let y = &nodes[i].value;
                let d = *nodes[i].shape.last().unwrap();
                acc(*x, &mut |gx| {
                    for ((gr, yr), dr) in g.chunks(d).zip(y.chunks(d)).zip(gx.chunks_mut(d)) {
                        let dot = gr.iter().zip(yr).fold(E::zero(), |s, (&a, &b)| s + a * b);
                        for j in 0..d {
                            dr[j] = dr[j] + yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, normed, rstd } => {
                let gv = &nodes[gain.0].value;
                let d = gv.len();
                let dn = E::from_f64(d as f64);
                acc(*x, &mut |gx| {
                    for (r, ((gr, hr), dr)) in g.chunks(d).zip(normed.chunks(d)).zip(gx.chunks_mut(d)).enumerate() {
                        let mut mean_dh = E::zero();
                        let mut mean_dh_h = E::zero();
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            mean_dh = mean_dh + dh;
                            mean_dh_h = mean_dh_h + dh * hr[j];
                        }
                        mean_dh = mean_dh / dn;
                        mean_dh_h = mean_dh_h / dn;
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            dr[j] = dr[j] + rstd[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                });
                acc(*gain, &mut |gg| {
                    for (gr, hr) in g.chunks(d).zip(normed.chunks(d)) {
                        for j in 0..d {
                            gg[j] = gg[j] + gr[j] * hr[j];
                        }
                    }
                });
                acc(*bias, &mut |gb| {
                    for gr in g.chunks(d) {
                        gb.iter_mut().zip(gr).for_each(|(s, &y)| *s = *s + y);
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d = nodes[table.0].shape[1];
                acc(*table, &mut |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut gt[id * d..(id + 1) * d];
                        dst.iter_mut().zip(&g[r * d..(r + 1) * d]).for_each(|(s, &y)| *s = *s + y);
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_extents(&nodes[i].shape, *axis);
                let mut offset = 0;
                for &v in inputs {
                    let dim = nodes[v.0].shape[*axis];
                    acc(v, &mut |gv| {
                        for o in 0..outer {
                            let src = &g[o * total * inner + offset * inner..][..dim * inner];
                            let dst = &mut gv[o * dim * inner..(o + 1) * dim * inner];
                            dst.iter_mut().zip(src).for_each(|(s, &y)| *s = *s + y);
                        }
                    });
                    offset += dim;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, dim, inner) = axis_extents(&nodes[x.0].shape, *axis);
                let len = nodes[i].shape[*axis];
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        let dst = &mut gx[o * dim * inner + start * inner..][..len * inner];
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        dst.iter_mut().zip(src).for_each(|(s, &y)| *s = *s + y);
                    }
                });
            }
            Op::Transpose { x } => {
                let (c, r) = (nodes[i].shape[0], nodes[i].shape[1]);
                let back = transpose_kernel(g, c, r);
                acc(*x, &mut |gx| gx.iter_mut().zip(&back).for_each(|(s, &y)| *s = *s + y));
            }
            Op::Gelu { x } => {
                let xv = &nodes[x.0].value;
                acc(*x, &mut |gx| {
                    for ((d, &y), &v) in gx.iter_mut().zip(g).zip(xv.iter()) {
                        *d = *d + y * gelu_parts(v).1;
                    }
                });
            }
            Op::CrossEntropy { logits, targets, probs, count } => {
                if *count == 0 {
                    return;
                }
                let v = nodes[logits.0].shape[1];
                let scale = g[0] / E::from_f64(*count as f64);
                acc(*logits, &mut |gl| {
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = t else { continue };
                        let (pr, dr) = (&probs[r * v..(r + 1) * v], &mut gl[r * v..(r + 1) * v]);
                        for j in 0..v {
                            dr[j] = dr[j] + scale * pr[j];
                        }
                        dr[*t] = dr[*t] - scale;
                    }
                });
            }
        }
    }
}

fn softmax_row<E: Element>(row: &mut [E]) {
    let max = row.iter().fold(E::neg_infinity(), |m, &x| m.max(x));
    let mut z = E::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        z = z + *x;
    }
    row.iter_mut().for_each(|x| *x = *x / z);
}

pub(crate) fn matmul_kernel<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut out = vec![E::zero(); m * n];
    for (r, orow) in out.chunks_mut(n).enumerate() {
        let arow = &a[r * k..(r + 1) * k];
        for (p, &x) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            orow.iter_mut().zip(brow).for_each(|(o, &y)| *o = *o + x * y);
        }
    }
    out
}

fn transpose_kernel<E: Element>(x: &[E], r: usize, c: usize) -> Vec<E> {
    let mut out = vec![E::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}
