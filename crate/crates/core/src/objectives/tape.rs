//! Differentiable builders for the stage losses. Each mirrors its plain
//! counterpart in the parent module operation for operation, so a tape value
//! equals the plain value bitwise; tests hold both paths to that standard.

use crate::error::Result;
use crate::numcore::{tempered_softmax, Graph, Tensor, VarId};
use crate::objectives::PpoConfig;

/// Cross-entropy and smoothing terms for one step, with the smoothing target
/// fixed to `target` (no gradient flows into it).
pub fn stage1_terms_with_target(
    g: &mut Graph,
    logits: VarId,
    label: usize,
    target: Option<&Tensor>,
) -> (VarId, Option<VarId>) {
    let probs = g.softmax(logits);
    let ce = g.cross_entropy(probs, label);
    let smoothing = target.map(|t| {
        let t = g.constant(t);
        let diff = g.sub(probs, t);
        let sq = g.mul(diff, diff);
        g.sum(sq)
    });
    (ce, smoothing)
}

/// Like [`stage1_terms_with_target`], deriving the target by tempering the
/// current logits. The target is a detached snapshot: it contributes a pull
/// toward the smoother distribution at this evaluation point, never a
/// gradient path of its own.
pub fn stage1_terms(
    g: &mut Graph,
    logits: VarId,
    label: usize,
    temperature: Option<f64>,
) -> Result<(VarId, Option<VarId>)> {
    let target = match temperature {
        Some(h) => Some(tempered_softmax(g.value(logits), h)?),
        None => None,
    };
    Ok(stage1_terms_with_target(g, logits, label, target.as_ref()))
}

/// Batch means of per-step loss terms.
pub struct Stage1Tape {
    pub ce: VarId,
    pub smoothing: Option<VarId>,
    /// The scalar to minimize.
    pub total: VarId,
}

pub fn combine_stage1_terms(
    g: &mut Graph,
    ce_terms: &[VarId],
    smoothing_terms: Option<&[VarId]>,
) -> Stage1Tape {
    let stacked = g.stack(ce_terms);
    let ce = g.mean(stacked);
    match smoothing_terms {
        None => Stage1Tape { ce, smoothing: None, total: ce },
        Some(terms) => {
            assert_eq!(terms.len(), ce_terms.len(), "loss term counts differ");
            let stacked = g.stack(terms);
            let smoothing = g.mean(stacked);
            let total = g.add(ce, smoothing);
            Stage1Tape { ce, smoothing: Some(smoothing), total }
        }
    }
}

/// `min(ratio Â, clip(ratio) Â)` for one transition. `new_lp` is the
/// log-probability of the recorded action under the current policy; the old
/// log-probability and the advantage are rollout-time constants.
pub fn clipped_term(
    g: &mut Graph,
    new_lp: VarId,
    old_log_prob: f64,
    advantage: f64,
    clip: f64,
) -> VarId {
    let old = g.scalar(old_log_prob);
    let d = g.sub(new_lp, old);
    let ratio = g.exp(d);
    let unclipped = g.scale(ratio, advantage);
    let bounded = g.clamp(ratio, 1.0 - clip, 1.0 + clip);
    let clipped = g.scale(bounded, advantage);
    g.min(unclipped, clipped)
}

/// Squared error of the value head against the stored return.
pub fn value_term(g: &mut Graph, value: VarId, target: f64) -> VarId {
    let shape = g.value(value).shape().to_vec();
    let t = Tensor::from_vec(shape, vec![target]).expect("value node holds a single number");
    let t = g.constant(&t);
    let d = g.sub(value, t);
    g.mul(d, d)
}

/// Component means plus the combined scalar to maximize.
pub struct PpoTape {
    pub clip: VarId,
    pub value: VarId,
    pub entropy: VarId,
    pub objective: VarId,
}

pub fn combine_ppo_terms(
    g: &mut Graph,
    clip_terms: &[VarId],
    value_terms: &[VarId],
    entropy_terms: &[VarId],
    cfg: &PpoConfig,
) -> PpoTape {
    assert!(
        !clip_terms.is_empty()
            && clip_terms.len() == value_terms.len()
            && clip_terms.len() == entropy_terms.len(),
        "transition term counts differ"
    );
    let stacked = g.stack(clip_terms);
    let clip = g.mean(stacked);
    let stacked = g.stack(value_terms);
    let value = g.mean(stacked);
    let stacked = g.stack(entropy_terms);
    let entropy = g.mean(stacked);
    let value_scaled = g.scale(value, cfg.value_coef);
    let entropy_scaled = g.scale(entropy, cfg.entropy_coef);
    let partial = g.sub(clip, value_scaled);
    let objective = g.add(partial, entropy_scaled);
    PpoTape { clip, value, entropy, objective }
}
