//! Stable probability primitives shared by training and evaluation.

use std::cell::Cell;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Probability floor used before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

thread_local! {
    static TEMPERED_EVALS: Cell<u64> = const { Cell::new(0) };
}

/// Number of `tempered_softmax` evaluations on this thread since the last
/// reset. Lets tests assert that code paths which must not smooth
/// predictions never do. Thread-local so concurrent tests cannot interfere.
pub fn tempered_eval_count() -> u64 {
    TEMPERED_EVALS.with(Cell::get)
}

pub fn reset_tempered_eval_count() {
    TEMPERED_EVALS.with(|c| c.set(0));
}

/// Softmax over a vector of logits, computed with max-subtraction so that
/// large logits cannot overflow.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.is_empty() {
        return Err(Error::Dimension("softmax over empty input".into()));
    }
    let m = logits.max();
    let mut out: Vec<f64> = logits.data().iter().map(|z| (z - m).exp()).collect();
    let sum: f64 = out.iter().sum();
    for x in &mut out {
        *x /= sum;
    }
    Ok(Tensor::vector(out))
}

/// Softmax at temperature `h`, i.e. `softmax(logits / h)`. Temperatures above
/// one flatten the distribution toward uniform; `h = 1` is plain softmax.
pub fn tempered_softmax(logits: &Tensor, h: f64) -> Result<Tensor> {
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("temperature must be positive, got {h}")));
    }
    TEMPERED_EVALS.with(|c| c.set(c.get() + 1));
    softmax(&logits.map(|z| z / h))
}

/// Cross-entropy of a probability vector against a one-hot label:
/// `-ln(max(probs[label], 1e-12))`. The floor keeps the result finite when a
/// prediction collapses.
pub fn cross_entropy_onehot(probs: &Tensor, label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::Index(format!(
            "label {} out of range for {} classes",
            label,
            probs.len()
        )));
    }
    Ok(-probs.data()[label].max(PROB_FLOOR).ln())
}
