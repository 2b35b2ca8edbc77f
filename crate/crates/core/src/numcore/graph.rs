//! Reverse-mode automatic differentiation over an eager tape.
//!
//! Every builder method evaluates its result immediately and records the
//! operation on the tape. Nodes are appended in evaluation order, so the tape
//! itself is a topological order and `backward` is a single reverse sweep that
//! visits each node exactly once, accumulating vector-Jacobian products into
//! per-node gradient buffers.
//!
//! The op set is deliberately small: affine algebra, pointwise activations,
//! softmax/cross-entropy, masked log-probability and entropy for action
//! distributions, and the min/clamp pair needed by clipped surrogate
//! objectives. Shape violations are caller bugs and panic; runtime conditions
//! (non-scalar root, repeated backward) return errors.

use crate::error::{Error, Result};
use crate::numcore::ops::PROB_FLOOR;
use crate::numcore::Tensor;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VarId(usize);

enum Op {
    Leaf,
    MatVec { m: VarId, v: VarId },
    Add { a: VarId, b: VarId },
    Sub { a: VarId, b: VarId },
    Mul { a: VarId, b: VarId },
    Scale { a: VarId, k: f64 },
    Sigmoid { a: VarId },
    Tanh { a: VarId },
    Exp { a: VarId },
    Softmax { a: VarId },
    CrossEntropy { probs: VarId, label: usize },
    MaskedLogProb { logits: VarId, seen: Vec<bool>, action: usize },
    MaskedEntropy { logits: VarId, seen: Vec<bool> },
    Pick { a: VarId, index: usize },
    Dot { a: VarId, b: VarId },
    Sum { a: VarId },
    Mean { a: VarId },
    Stack { parts: Vec<VarId> },
    Min { a: VarId, b: VarId },
    Clamp { a: VarId, lo: f64, hi: f64 },
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    swept: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: VarId) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the most recent `backward` root with respect to `v`, or
    /// `None` if no gradient reached it.
    pub fn grad(&self, v: VarId) -> Option<Tensor> {
        self.grads.get(v.0).and_then(|g| {
            g.as_ref().map(|data| {
                Tensor::from_vec(self.nodes[v.0].value.shape().to_vec(), data.clone())
                    .expect("gradient buffer matches node shape")
            })
        })
    }

    /// Like `grad`, but an unreached node yields zeros of the node's shape.
    pub fn grad_or_zeros(&self, v: VarId) -> Tensor {
        self.grad(v)
            .unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape()))
    }

    fn push(&mut self, op: Op, value: Tensor) -> VarId {
        self.nodes.push(Node { op, value });
        VarId(self.nodes.len() - 1)
    }

    /// Registers a tensor as a differentiable leaf.
    pub fn leaf(&mut self, t: &Tensor) -> VarId {
        self.push(Op::Leaf, t.clone())
    }

    /// Registers a tensor the caller does not need gradients for. Identical
    /// to `leaf`; the separate name keeps call sites self-describing.
    pub fn constant(&mut self, t: &Tensor) -> VarId {
        self.leaf(t)
    }

    pub fn scalar(&mut self, x: f64) -> VarId {
        self.push(Op::Leaf, Tensor::scalar(x))
    }

    /// Matrix-vector product.
    pub fn matvec(&mut self, m: VarId, v: VarId) -> VarId {
        let out = self.nodes[m.0].value.matvec(&self.nodes[v.0].value);
        self.push(Op::MatVec { m, v }, out)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let out = self.nodes[a.0].value.add(&self.nodes[b.0].value);
        self.push(Op::Add { a, b }, out)
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        let out = self.nodes[a.0].value.sub(&self.nodes[b.0].value);
        self.push(Op::Sub { a, b }, out)
    }

    /// Elementwise product; shapes must match.
    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(va.shape().to_vec(), data).unwrap();
        self.push(Op::Mul { a, b }, out)
    }

    pub fn scale(&mut self, a: VarId, k: f64) -> VarId {
        let out = self.nodes[a.0].value.map(|x| k * x);
        self.push(Op::Scale { a, k }, out)
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        let out = self.nodes[a.0].value.map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(Op::Sigmoid { a }, out)
    }

    pub fn tanh(&mut self, a: VarId) -> VarId {
        let out = self.nodes[a.0].value.map(f64::tanh);
        self.push(Op::Tanh { a }, out)
    }

    pub fn exp(&mut self, a: VarId) -> VarId {
        let out = self.nodes[a.0].value.map(f64::exp);
        self.push(Op::Exp { a }, out)
    }

    /// Softmax over a vector node, max-subtracted.
    pub fn softmax(&mut self, a: VarId) -> VarId {
        let z = &self.nodes[a.0].value;
        assert!(z.rank() == 1 && !z.is_empty(), "softmax expects a nonempty vector");
        let m = z.max();
        let mut p: Vec<f64> = z.data().iter().map(|x| (x - m).exp()).collect();
        let s: f64 = p.iter().sum();
        for x in &mut p {
            *x /= s;
        }
        self.push(Op::Softmax { a }, Tensor::vector(p))
    }

    /// `-ln(max(probs[label], floor))` against a one-hot label.
    pub fn cross_entropy(&mut self, probs: VarId, label: usize) -> VarId {
        let p = &self.nodes[probs.0].value;
        assert!(label < p.len(), "label {} out of range for {} classes", label, p.len());
        let out = Tensor::scalar(-p.data()[label].max(PROB_FLOOR).ln());
        self.push(Op::CrossEntropy { probs, label }, out)
    }

    /// Log-probability of `action` under a softmax restricted to positions
    /// where `seen` is false. The action itself must be unseen.
    pub fn masked_log_prob(&mut self, logits: VarId, seen: &[bool], action: usize) -> VarId {
        let z = &self.nodes[logits.0].value;
        assert_eq!(z.len(), seen.len(), "mask length mismatch");
        assert!(action < z.len() && !seen[action], "action {action} is masked or out of range");
        let (m, log_z) = masked_log_norm(z.data(), seen);
        let out = Tensor::scalar(z.data()[action] - m - log_z);
        self.push(
            Op::MaskedLogProb { logits, seen: seen.to_vec(), action },
            out,
        )
    }

    /// Shannon entropy of the masked softmax distribution over `logits`.
    pub fn masked_entropy(&mut self, logits: VarId, seen: &[bool]) -> VarId {
        let z = &self.nodes[logits.0].value;
        assert_eq!(z.len(), seen.len(), "mask length mismatch");
        let (m, log_z) = masked_log_norm(z.data(), seen);
        let mut h = 0.0;
        for (x, s) in z.data().iter().zip(seen) {
            if !s {
                let lp = x - m - log_z;
                h -= lp.exp() * lp;
            }
        }
        self.push(Op::MaskedEntropy { logits, seen: seen.to_vec() }, Tensor::scalar(h))
    }

    /// Extracts a single element as a scalar node.
    pub fn pick(&mut self, a: VarId, index: usize) -> VarId {
        let v = &self.nodes[a.0].value;
        assert!(index < v.len(), "pick index {} out of range {}", index, v.len());
        let out = Tensor::scalar(v.data()[index]);
        self.push(Op::Pick { a, index }, out)
    }

    pub fn dot(&mut self, a: VarId, b: VarId) -> VarId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.shape(), vb.shape(), "dot shape mismatch");
        let out: f64 = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).sum();
        self.push(Op::Dot { a, b }, Tensor::scalar(out))
    }

    pub fn sum(&mut self, a: VarId) -> VarId {
        let out: f64 = self.nodes[a.0].value.data().iter().sum();
        self.push(Op::Sum { a }, Tensor::scalar(out))
    }

    pub fn mean(&mut self, a: VarId) -> VarId {
        let v = &self.nodes[a.0].value;
        assert!(!v.is_empty(), "mean of empty tensor");
        let out: f64 = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Op::Mean { a }, Tensor::scalar(out))
    }

    /// Concatenates scalar nodes into a vector.
    pub fn stack(&mut self, parts: &[VarId]) -> VarId {
        assert!(!parts.is_empty(), "stack of zero parts");
        let data: Vec<f64> = parts
            .iter()
            .map(|p| {
                let v = &self.nodes[p.0].value;
                assert_eq!(v.len(), 1, "stack expects scalar parts");
                v.data()[0]
            })
            .collect();
        self.push(Op::Stack { parts: parts.to_vec() }, Tensor::vector(data))
    }

    /// Elementwise minimum; ties route gradient to the first argument.
    pub fn min(&mut self, a: VarId, b: VarId) -> VarId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.shape(), vb.shape(), "min shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x.min(*y)).collect();
        let out = Tensor::from_vec(va.shape().to_vec(), data).unwrap();
        self.push(Op::Min { a, b }, out)
    }

    /// Clamp to `[lo, hi]`; the gradient is passed through strictly inside
    /// the interval and zero elsewhere.
    pub fn clamp(&mut self, a: VarId, lo: f64, hi: f64) -> VarId {
        assert!(lo <= hi, "clamp bounds inverted: [{lo}, {hi}]");
        let out = self.nodes[a.0].value.map(|x| x.clamp(lo, hi));
        self.push(Op::Clamp { a, lo, hi }, out)
    }

    /// Reverse sweep from a scalar root. May be called once per tape.
    pub fn backward(&mut self, root: VarId) -> Result<()> {
        if self.swept {
            return Err(Error::Contract(
                "backward called twice on the same tape".into(),
            ));
        }
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        self.swept = true;
        self.grads = vec![None; self.nodes.len()];
        self.grads[root.0] = Some(vec![1.0]);

        for id in (0..=root.0).rev() {
            let Some(upstream) = self.grads[id].take() else {
                continue;
            };
            self.propagate(id, &upstream);
            // Leaves keep their accumulated gradient for lookup.
            self.grads[id] = Some(upstream);
        }
        Ok(())
    }

    fn accum(&mut self, target: VarId, f: impl FnOnce(&mut [f64])) {
        let slot = &mut self.grads[target.0];
        if slot.is_none() {
            *slot = Some(vec![0.0; self.nodes[target.0].value.len()]);
        }
        f(slot.as_mut().unwrap());
    }

    fn propagate(&mut self, id: usize, u: &[f64]) {
        // Clones of small value buffers keep the borrow checker out of the
        // accumulation closures; node values are at most hidden-dim sized.
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::MatVec { m, v } => {
                let (m, v) = (*m, *v);
                let mat = self.nodes[m.0].value.clone();
                let vec = self.nodes[v.0].value.clone();
                let (r, c) = (mat.rows(), mat.cols());
                self.accum(m, |g| {
                    for i in 0..r {
                        for j in 0..c {
                            g[i * c + j] += u[i] * vec.data()[j];
                        }
                    }
                });
                self.accum(v, |g| {
                    for i in 0..r {
                        let row = &mat.data()[i * c..(i + 1) * c];
                        for (j, w) in row.iter().enumerate() {
                            g[j] += w * u[i];
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                self.accum(a, |g| {
                    for (gi, ui) in g.iter_mut().zip(u) {
                        *gi += ui;
                    }
                });
                self.accum(b, |g| {
                    for (gi, ui) in g.iter_mut().zip(u) {
                        *gi += ui;
                    }
                });
            }
            Op::Sub { a, b } => {
                let (a, b) = (*a, *b);
                self.accum(a, |g| {
                    for (gi, ui) in g.iter_mut().zip(u) {
                        *gi += ui;
                    }
                });
                self.accum(b, |g| {
                    for (gi, ui) in g.iter_mut().zip(u) {
                        *gi -= ui;
                    }
                });
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                let va = self.nodes[a.0].value.clone();
                let vb = self.nodes[b.0].value.clone();
                self.accum(a, |g| {
                    for ((gi, ui), x) in g.iter_mut().zip(u).zip(vb.data()) {
                        *gi += ui * x;
                    }
                });
                self.accum(b, |g| {
                    for ((gi, ui), x) in g.iter_mut().zip(u).zip(va.data()) {
                        *gi += ui * x;
                    }
                });
            }
            Op::Scale { a, k } => {
                let (a, k) = (*a, *k);
                self.accum(a, |g| {
                    for (gi, ui) in g.iter_mut().zip(u) {
                        *gi += k * ui;
                    }
                });
            }
            Op::Sigmoid { a } => {
                let a = *a;
                let y = self.nodes[id].value.clone();
                self.accum(a, |g| {
                    for ((gi, ui), yi) in g.iter_mut().zip(u).zip(y.data()) {
                        *gi += ui * yi * (1.0 - yi);
                    }
                });
            }
            Op::Tanh { a } => {
                let a = *a;
                let y = self.nodes[id].value.clone();
                self.accum(a, |g| {
                    for ((gi, ui), yi) in g.iter_mut().zip(u).zip(y.data()) {
                        *gi += ui * (1.0 - yi * yi);
                    }
                });
            }
            Op::Exp { a } => {
                let a = *a;
                let y = self.nodes[id].value.clone();
                self.accum(a, |g| {
                    for ((gi, ui), yi) in g.iter_mut().zip(u).zip(y.data()) {
                        *gi += ui * yi;
                    }
                });
            }
            Op::Softmax { a } => {
                let a = *a;
                let p = self.nodes[id].value.clone();
                let dot: f64 = u.iter().zip(p.data()).map(|(ui, pi)| ui * pi).sum();
                self.accum(a, |g| {
                    for ((gi, ui), pi) in g.iter_mut().zip(u).zip(p.data()) {
                        *gi += pi * (ui - dot);
                    }
                });
            }
            Op::CrossEntropy { probs, label } => {
                let (probs, label) = (*probs, *label);
                let p = self.nodes[probs.0].value.data()[label].max(PROB_FLOOR);
                self.accum(probs, |g| {
                    g[label] += u[0] * (-1.0 / p);
                });
            }
            Op::MaskedLogProb { logits, seen, action } => {
                let (logits, action) = (*logits, *action);
                let seen = seen.clone();
                let z = self.nodes[logits.0].value.clone();
                let probs = masked_probs(z.data(), &seen);
                self.accum(logits, |g| {
                    for (j, pj) in probs.iter().enumerate() {
                        if !seen[j] {
                            let indicator = if j == action { 1.0 } else { 0.0 };
                            g[j] += u[0] * (indicator - pj);
                        }
                    }
                });
            }
            Op::MaskedEntropy { logits, seen } => {
                let logits = *logits;
                let seen = seen.clone();
                let z = self.nodes[logits.0].value.clone();
                let probs = masked_probs(z.data(), &seen);
                let s: f64 = probs
                    .iter()
                    .zip(z.data())
                    .enumerate()
                    .filter(|(j, _)| !seen[*j])
                    .map(|(_, (p, x))| p * x)
                    .sum();
                self.accum(logits, |g| {
                    for (j, pj) in probs.iter().enumerate() {
                        if !seen[j] {
                            g[j] += u[0] * (-pj * (z.data()[j] - s));
                        }
                    }
                });
            }
            Op::Pick { a, index } => {
                let (a, index) = (*a, *index);
                self.accum(a, |g| {
                    g[index] += u[0];
                });
            }
            Op::Dot { a, b } => {
                let (a, b) = (*a, *b);
                let va = self.nodes[a.0].value.clone();
                let vb = self.nodes[b.0].value.clone();
                self.accum(a, |g| {
                    for (gi, x) in g.iter_mut().zip(vb.data()) {
                        *gi += u[0] * x;
                    }
                });
                self.accum(b, |g| {
                    for (gi, x) in g.iter_mut().zip(va.data()) {
                        *gi += u[0] * x;
                    }
                });
            }
            Op::Sum { a } => {
                let a = *a;
                self.accum(a, |g| {
                    for gi in g.iter_mut() {
                        *gi += u[0];
                    }
                });
            }
            Op::Mean { a } => {
                let a = *a;
                let n = self.nodes[a.0].value.len() as f64;
                self.accum(a, |g| {
                    for gi in g.iter_mut() {
                        *gi += u[0] / n;
                    }
                });
            }
            Op::Stack { parts } => {
                let parts = parts.clone();
                for (k, part) in parts.iter().enumerate() {
                    self.accum(*part, |g| {
                        g[0] += u[k];
                    });
                }
            }
            Op::Min { a, b } => {
                let (a, b) = (*a, *b);
                let va = self.nodes[a.0].value.clone();
                let vb = self.nodes[b.0].value.clone();
                self.accum(a, |g| {
                    for ((gi, ui), (x, y)) in
                        g.iter_mut().zip(u).zip(va.data().iter().zip(vb.data()))
                    {
                        if x <= y {
                            *gi += ui;
                        }
                    }
                });
                self.accum(b, |g| {
                    for ((gi, ui), (x, y)) in
                        g.iter_mut().zip(u).zip(va.data().iter().zip(vb.data()))
                    {
                        if x > y {
                            *gi += ui;
                        }
                    }
                });
            }
            Op::Clamp { a, lo, hi } => {
                let (a, lo, hi) = (*a, *lo, *hi);
                let x = self.nodes[a.0].value.clone();
                self.accum(a, |g| {
                    for ((gi, ui), xi) in g.iter_mut().zip(u).zip(x.data()) {
                        if *xi > lo && *xi < hi {
                            *gi += ui;
                        }
                    }
                });
            }
        }
    }
}

/// Max-subtracted log normalizer over unmasked positions; returns `(max, ln Z)`.
fn masked_log_norm(z: &[f64], seen: &[bool]) -> (f64, f64) {
    let mut m = f64::NEG_INFINITY;
    for (x, s) in z.iter().zip(seen) {
        if !s && *x > m {
            m = *x;
        }
    }
    assert!(m.is_finite(), "all positions masked");
    let z_sum: f64 = z
        .iter()
        .zip(seen)
        .filter(|(_, s)| !**s)
        .map(|(x, _)| (x - m).exp())
        .sum();
    (m, z_sum.ln())
}

/// Masked softmax probabilities; masked slots are exactly zero.
fn masked_probs(z: &[f64], seen: &[bool]) -> Vec<f64> {
    let (m, log_z) = masked_log_norm(z, seen);
    z.iter()
        .zip(seen)
        .map(|(x, s)| if *s { 0.0 } else { (x - m - log_z).exp() })
        .collect()
}
