//! Trajectory collection: runs the current policy over the training set and
//! records everything the surrogate objective needs to replay each decision.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::{episode_reset, episode_step, Dataset, MultiViewSample};
use crate::error::Result;
use crate::nets::{act, classify, extract, gru_step, ModelParams};
use crate::numcore::Tensor;
use crate::objectives::{discounted_return, reward, TransitionRecord};

/// Per-sample view features, extracted once. Valid only while the extractor
/// stays fixed; selection training freezes it, so one cache serves a stage.
pub struct FeatureCache {
    feats: Vec<Vec<Tensor>>,
}

impl FeatureCache {
    pub fn new(params: &ModelParams, data: &Dataset) -> Self {
        let feats = data
            .samples
            .iter()
            .map(|s| s.views.iter().map(|x| extract(params, x)).collect())
            .collect();
        FeatureCache { feats }
    }

    pub fn views(&self, sample_idx: usize) -> &[Tensor] {
        &self.feats[sample_idx]
    }
}

/// One recorded episode: the view order actually taken plus one transition
/// record per decision (steps 2 through T).
#[derive(Clone, Debug)]
pub struct EpisodeRollout {
    pub sample_idx: usize,
    pub label: usize,
    pub views: Vec<usize>,
    pub transitions: Vec<TransitionRecord>,
}

/// Draws an index from a probability vector by cumulative scan. Entries with
/// probability zero are never drawn; rounding shortfall falls back to the
/// last positive entry.
pub(crate) fn sample_categorical(dist: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = None;
    for (i, p) in dist.iter().enumerate() {
        if *p > 0.0 {
            acc += p;
            last = Some(i);
            if u < acc {
                return i;
            }
        }
    }
    last.expect("distribution has at least one positive entry")
}

/// A trajectory with no policy: uniform over unseen views, or over all views
/// when duplicates are allowed.
pub fn random_trajectory(views: usize, allow_duplicates: bool, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if allow_duplicates {
        (0..views).map(|_| rng.gen_range(0..views)).collect()
    } else {
        let mut order: Vec<usize> = (0..views).collect();
        order.shuffle(rng);
        order
    }
}

/// Runs the stochastic policy over one sample and returns the visited order.
/// The first view is uniform; later views are sampled from the actor.
pub fn actor_trajectory(
    params: &ModelParams,
    sample: &MultiViewSample,
    allow_duplicates: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let v_count = sample.views.len();
    let hidden = params.config.hidden_dim;
    let feats: Vec<Tensor> = sample.views.iter().map(|x| extract(params, x)).collect();
    let no_mask = vec![false; v_count];
    let mut ep = episode_reset(sample, rng);
    let mut h_s = gru_step(&params.gru_s, &Tensor::zeros(&[hidden]), &feats[ep.current_view()]);
    for _ in 2..=v_count {
        let mask = if allow_duplicates { &no_mask } else { &ep.seen };
        let dist = act(params, &h_s, mask);
        let action = sample_categorical(dist.data(), rng);
        episode_step(&mut ep, action, allow_duplicates)?;
        h_s = gru_step(&params.gru_s, &h_s, &feats[action]);
    }
    Ok(ep.visited)
}

/// Collects one stochastic episode per training sample under the current
/// policy, with rewards taken from the classifier's confidence deltas.
pub fn collect_rollouts(
    params: &ModelParams,
    data: &Dataset,
    cache: &FeatureCache,
    gamma: f64,
    allow_duplicates: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<EpisodeRollout>> {
    let hidden = params.config.hidden_dim;
    let mut out = Vec::with_capacity(data.samples.len());
    for (sample_idx, sample) in data.samples.iter().enumerate() {
        let feats = cache.views(sample_idx);
        let v_count = sample.views.len();
        let no_mask = vec![false; v_count];
        let mut ep = episode_reset(sample, rng);

        let zero = Tensor::zeros(&[hidden]);
        ep.hidden_e = Some(gru_step(&params.gru_e, &zero, &feats[ep.current_view()]));
        ep.hidden_s = Some(gru_step(&params.gru_s, &zero, &feats[ep.current_view()]));
        let (_, mut probs_prev) = classify(params, ep.hidden_e.as_ref().unwrap());

        let decisions = v_count - 1;
        let mut actions = Vec::with_capacity(decisions);
        let mut log_probs = Vec::with_capacity(decisions);
        let mut values = Vec::with_capacity(decisions);
        let mut rewards = Vec::with_capacity(decisions);
        for _ in 2..=v_count {
            let h_s = ep.hidden_s.as_ref().unwrap();
            let mask = if allow_duplicates { &no_mask } else { &ep.seen };
            let dist = act(params, h_s, mask);
            let action = sample_categorical(dist.data(), rng);
            log_probs.push(dist.data()[action].ln());
            values.push(crate::nets::value(params, h_s));
            actions.push(action);
            episode_step(&mut ep, action, allow_duplicates)?;

            let h_e = ep.hidden_e.take().unwrap();
            ep.hidden_e = Some(gru_step(&params.gru_e, &h_e, &feats[action]));
            let h_s = ep.hidden_s.take().unwrap();
            ep.hidden_s = Some(gru_step(&params.gru_s, &h_s, &feats[action]));

            let (_, probs) = classify(params, ep.hidden_e.as_ref().unwrap());
            rewards.push(reward(&probs, &probs_prev, sample.label));
            probs_prev = probs;
        }

        let mut transitions = Vec::with_capacity(decisions);
        for k in 0..decisions {
            let ret = discounted_return(&rewards[k..], gamma)?;
            let tr = TransitionRecord {
                step: k + 2,
                action: actions[k],
                log_prob: log_probs[k],
                reward: rewards[k],
                value_est: values[k],
                advantage: ret - values[k],
                value_target: ret,
            };
            tr.validate()?;
            transitions.push(tr);
        }
        out.push(EpisodeRollout {
            sample_idx,
            label: sample.label,
            views: ep.visited,
            transitions,
        });
    }
    Ok(out)
}
