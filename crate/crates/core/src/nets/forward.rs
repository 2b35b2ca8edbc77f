//! Inference-path forward passes. The tape builders in [`super::tape`]
//! mirror these exactly; evaluation and rollout collection go through here
//! because they never need gradients.

use std::cell::Cell;

use crate::nets::{AffineParams, ExtractorParams, GruParams, ModelParams};
use crate::numcore::{softmax, Tensor};

thread_local! {
    static ACTOR_QUERIES: Cell<u64> = const { Cell::new(0) };
}

/// Number of actor evaluations on this thread since the last reset.
/// Random-selection training must keep this at zero; tests assert it.
/// Thread-local so concurrent tests cannot interfere.
pub fn actor_query_count() -> u64 {
    ACTOR_QUERIES.with(Cell::get)
}

pub fn reset_actor_query_count() {
    ACTOR_QUERIES.with(|c| c.set(0));
}

fn affine(p: &AffineParams, x: &Tensor) -> Tensor {
    p.w.matvec(x).add(&p.b)
}

/// Per-view feature embedding.
pub fn extract(params: &ModelParams, x: &Tensor) -> Tensor {
    match &params.extractor {
        ExtractorParams::Identity => x.clone(),
        ExtractorParams::Mlp { hidden, out } => {
            let h = affine(hidden, x).map(f64::tanh);
            affine(out, &h)
        }
    }
}

/// One GRU update under the crate-wide convention
/// `h' = (1 - z) * h + z * n`, computed as `h + z * (n - h)`.
pub fn gru_step(gru: &GruParams, h_prev: &Tensor, x: &Tensor) -> Tensor {
    let z = gru.wz.matvec(x).add(&gru.uz.matvec(h_prev)).add(&gru.bz).map(sigmoid);
    let r = gru.wr.matvec(x).add(&gru.ur.matvec(h_prev)).add(&gru.br).map(sigmoid);
    let rh = Tensor::vector(
        r.data().iter().zip(h_prev.data()).map(|(a, b)| a * b).collect(),
    );
    let n = gru.wn.matvec(x).add(&gru.un.matvec(&rh)).add(&gru.bn).map(f64::tanh);
    let delta = Tensor::vector(
        z.data()
            .iter()
            .zip(n.data().iter().zip(h_prev.data()))
            .map(|(zi, (ni, hi))| zi * (ni - hi))
            .collect(),
    );
    h_prev.add(&delta)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Folds a feature sequence from the zero hidden state. Feeding a prefix and
/// then continuing from the carried state is identical to folding the full
/// sequence at once.
pub fn aggregate(gru: &GruParams, feats: &[Tensor]) -> Tensor {
    assert!(!feats.is_empty(), "aggregate over an empty sequence");
    let hidden = gru.uz.rows();
    let mut h = Tensor::zeros(&[hidden]);
    for f in feats {
        h = gru_step(gru, &h, f);
    }
    h
}

/// Classifier head: `(logits, probabilities)`.
pub fn classify(params: &ModelParams, e: &Tensor) -> (Tensor, Tensor) {
    let logits = affine(&params.classifier, e);
    let probs = softmax(&logits).expect("classifier output is nonempty");
    (logits, probs)
}

pub fn actor_logits(params: &ModelParams, s: &Tensor) -> Tensor {
    affine(&params.actor, s)
}

/// Softmax restricted to positions where `seen` is false; masked entries are
/// exactly zero.
pub fn masked_softmax(logits: &Tensor, seen: &[bool]) -> Tensor {
    assert_eq!(logits.len(), seen.len(), "mask length mismatch");
    let mut m = f64::NEG_INFINITY;
    for (x, s) in logits.data().iter().zip(seen) {
        if !s && *x > m {
            m = *x;
        }
    }
    assert!(m.is_finite(), "all views masked");
    let mut out = vec![0.0; logits.len()];
    let mut sum = 0.0;
    for (i, (x, s)) in logits.data().iter().zip(seen).enumerate() {
        if !s {
            let e = (x - m).exp();
            out[i] = e;
            sum += e;
        }
    }
    for x in &mut out {
        *x /= sum;
    }
    Tensor::vector(out)
}

/// Action distribution over views given the policy state; seen views get
/// probability exactly zero.
pub fn act(params: &ModelParams, s: &Tensor, seen: &[bool]) -> Tensor {
    ACTOR_QUERIES.with(|c| c.set(c.get() + 1));
    masked_softmax(&actor_logits(params, s), seen)
}

/// Scalar state-value estimate.
pub fn value(params: &ModelParams, s: &Tensor) -> f64 {
    affine(&params.value_head, s).item()
}

/// Incremental episode executor: extracts all view features once, then folds
/// both aggregators one selected view at a time.
pub struct ModelRunner<'a> {
    params: &'a ModelParams,
    feats: Vec<Tensor>,
    h_e: Tensor,
    h_s: Tensor,
    steps: usize,
}

impl<'a> ModelRunner<'a> {
    pub fn new(params: &'a ModelParams, views: &[Tensor]) -> Self {
        let feats = views.iter().map(|v| extract(params, v)).collect();
        let hidden = params.config.hidden_dim;
        ModelRunner {
            params,
            feats,
            h_e: Tensor::zeros(&[hidden]),
            h_s: Tensor::zeros(&[hidden]),
            steps: 0,
        }
    }

    /// Consumes one view; returns the classifier's `(logits, probs)` at the
    /// new step.
    pub fn step(&mut self, view: usize) -> (Tensor, Tensor) {
        let f = &self.feats[view];
        self.h_e = gru_step(&self.params.gru_e, &self.h_e, f);
        self.h_s = gru_step(&self.params.gru_s, &self.h_s, f);
        self.steps += 1;
        classify(self.params, &self.h_e)
    }

    /// Actor distribution from the current policy state.
    pub fn actor_dist(&self, seen: &[bool]) -> Tensor {
        act(self.params, &self.h_s, seen)
    }

    pub fn value_est(&self) -> f64 {
        value(self.params, &self.h_s)
    }

    pub fn feature(&self, view: usize) -> &Tensor {
        &self.feats[view]
    }

    pub fn policy_state(&self) -> &Tensor {
        &self.h_s
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}
