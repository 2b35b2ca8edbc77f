//! Losses and rewards.
//!
//! Stage I minimizes cross-entropy plus a squared distance between the
//! prediction and its own tempered softmax (a detached target, so the pull is
//! toward smoother distributions, never away from them). Stage II maximizes a
//! clipped surrogate objective over view-selection transitions, with a value
//! penalty and an entropy bonus. Everything here is a plain function over
//! concrete numbers; the differentiable mirrors live in [`tape`].

pub mod tape;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{softmax, tempered_softmax, Tensor};

/// Classifier output at one step of one sample's trajectory.
#[derive(Clone, Debug)]
pub struct StepPrediction {
    pub step: usize,
    pub logits: Tensor,
    pub probs: Tensor,
    /// Smoothing target, present only while the smoothing term is active.
    pub tempered: Option<Tensor>,
    pub label: usize,
}

impl StepPrediction {
    pub fn new(step: usize, logits: Tensor, label: usize, temperature: Option<f64>) -> Result<Self> {
        if label >= logits.len() {
            return Err(Error::Index(format!(
                "label {label} out of range for {} classes",
                logits.len()
            )));
        }
        let probs = softmax(&logits)?;
        let tempered = match temperature {
            Some(h) => Some(tempered_softmax(&logits, h)?),
            None => None,
        };
        Ok(StepPrediction { step, logits, probs, tempered, label })
    }
}

/// One selector decision: the view chosen at step `t` (2-based; the first
/// view is random, so no decision exists at `t = 1`), recorded under the
/// policy that acted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitionRecord {
    pub step: usize,
    pub action: usize,
    pub log_prob: f64,
    pub reward: f64,
    pub value_est: f64,
    pub advantage: f64,
    pub value_target: f64,
}

impl TransitionRecord {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0 - 1e-9..=1.0 + 1e-9).contains(&self.reward) {
            return Err(Error::Contract(format!(
                "reward {} outside [-1, 1] at step {}",
                self.reward, self.step
            )));
        }
        if self.log_prob > 1e-9 {
            return Err(Error::Contract(format!(
                "log-probability {} is positive at step {}",
                self.log_prob, self.step
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub gamma: f64,
    pub update_epochs: usize,
    pub minibatch: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            gamma: 0.0,
            update_epochs: 4,
            minibatch: 32,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::Parameter(format!("clip must lie in (0, 1), got {}", self.clip)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Parameter(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        for (name, x) in [("value_coef", self.value_coef), ("entropy_coef", self.entropy_coef)] {
            if !x.is_finite() || x < 0.0 {
                return Err(Error::Parameter(format!("{name} must be finite and nonnegative")));
            }
        }
        if self.update_epochs == 0 || self.minibatch == 0 {
            return Err(Error::Parameter("update_epochs and minibatch must be positive".into()));
        }
        Ok(())
    }
}

/// Cross-entropy and smoothing components, each already averaged over the
/// batch-step count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage1Loss {
    pub ce: f64,
    pub smoothing: f64,
}

impl Stage1Loss {
    pub fn total(&self) -> f64 {
        self.ce + self.smoothing
    }
}

fn check_distribution(p: &Tensor, what: &str) -> Result<()> {
    let sum: f64 = p.data().iter().sum();
    if !p.all_finite() || (sum - 1.0).abs() > 1e-6 || p.data().iter().any(|x| *x < 0.0) {
        return Err(Error::Contract(format!("{what} is not a probability distribution")));
    }
    Ok(())
}

/// Average loss over a flat batch of per-step predictions. The smoothing
/// target is a fixed copy of the tempered distribution; when disabled the
/// tempered branch is not consulted at all.
pub fn stage1_loss(preds: &[StepPrediction], smoothing_on: bool) -> Result<Stage1Loss> {
    if preds.is_empty() {
        return Err(Error::Contract("stage 1 loss over an empty batch".into()));
    }
    let n = preds.len() as f64;
    let mut ce = 0.0;
    let mut smoothing = 0.0;
    for p in preds {
        check_distribution(&p.probs, "prediction")?;
        ce += crate::numcore::cross_entropy_onehot(&p.probs, p.label)?;
        if smoothing_on {
            let target = p.tempered.as_ref().ok_or_else(|| {
                Error::Contract(format!("step {} carries no smoothing target", p.step))
            })?;
            check_distribution(target, "smoothing target")?;
            let d: f64 = p
                .probs
                .data()
                .iter()
                .zip(target.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            smoothing += d;
        }
    }
    Ok(Stage1Loss { ce: ce / n, smoothing: smoothing / n })
}

/// Change in the target class's probability after seeing one more view.
pub fn reward(probs_t: &Tensor, probs_prev: &Tensor, label: usize) -> f64 {
    probs_t.data()[label] - probs_prev.data()[label]
}

/// Discounted sum of the rewards from the current step on.
pub fn discounted_return(rewards_from_t: &[f64], gamma: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Parameter(format!("gamma must lie in [0, 1), got {gamma}")));
    }
    if rewards_from_t.is_empty() {
        return Err(Error::Parameter("return over an empty reward sequence".into()));
    }
    let mut ret = rewards_from_t[0];
    let mut weight = gamma;
    for r in &rewards_from_t[1..] {
        ret += weight * r;
        weight *= gamma;
    }
    Ok(ret)
}

/// `Â = -V(s) + r_t + γ r_{t+1} + ...`; at γ = 0 exactly `r_t - V(s)`.
pub fn advantage(v_est: f64, rewards_from_t: &[f64], gamma: f64) -> Result<f64> {
    Ok(discounted_return(rewards_from_t, gamma)? - v_est)
}

/// Shannon entropy in nats, with `0 ln 0 = 0` so masked slots are inert.
pub fn entropy(dist: &Tensor) -> f64 {
    dist.data()
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.ln())
        .sum()
}

/// Component means of the surrogate objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PpoComponents {
    pub clip: f64,
    pub value: f64,
    pub entropy: f64,
}

/// Scalar Stage II objective to MAXIMIZE, plus its components. All three
/// components are means over the transition batch: the clipped surrogate
/// `min(ratio Â, clip(ratio) Â)`, the squared value error against the stored
/// return, and the action-distribution entropy.
pub fn ppo_objective(
    transitions: &[TransitionRecord],
    new_log_probs: &[f64],
    new_values: &[f64],
    new_entropies: &[f64],
    cfg: &PpoConfig,
) -> Result<(f64, PpoComponents)> {
    cfg.validate()?;
    if transitions.is_empty() {
        return Err(Error::Contract("surrogate objective over an empty batch".into()));
    }
    if new_log_probs.len() != transitions.len()
        || new_values.len() != transitions.len()
        || new_entropies.len() != transitions.len()
    {
        return Err(Error::Contract(format!(
            "{} transitions against {}/{}/{} new evaluations",
            transitions.len(),
            new_log_probs.len(),
            new_values.len(),
            new_entropies.len()
        )));
    }
    let n = transitions.len() as f64;
    let mut clip_sum = 0.0;
    let mut value_sum = 0.0;
    let mut entropy_sum = 0.0;
    for ((tr, new_lp), (new_v, new_h)) in transitions
        .iter()
        .zip(new_log_probs)
        .zip(new_values.iter().zip(new_entropies))
    {
        let ratio = (new_lp - tr.log_prob).exp();
        let unclipped = ratio * tr.advantage;
        let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * tr.advantage;
        clip_sum += unclipped.min(clipped);
        let d = new_v - tr.value_target;
        value_sum += d * d;
        entropy_sum += new_h;
    }
    let components = PpoComponents {
        clip: clip_sum / n,
        value: value_sum / n,
        entropy: entropy_sum / n,
    };
    let objective = components.clip - cfg.value_coef * components.value
        + cfg.entropy_coef * components.entropy;
    Ok((objective, components))
}
