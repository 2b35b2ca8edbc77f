//! The stage trainers. Each takes the model, a dataset, and the run config,
//! consumes the shared generator in a fixed order, and appends one log row
//! per epoch. A non-finite loss aborts the run rather than training on junk.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::Dataset;
use crate::error::{Error, Result};
use crate::nets::{
    masked_softmax, register, tape_affine, tape_extract, tape_gru_step, tape_zero_state,
    Component, ModelParams, ModelVars,
};
use crate::numcore::{cosine_lr, optim_step, Graph, OptimState, Tensor, VarId};
use crate::objectives::tape::{
    clipped_term, combine_ppo_terms, combine_stage1_terms, stage1_terms, value_term,
};
use crate::objectives::discounted_return;
use crate::pipeline::config::TrainConfig;
use crate::pipeline::rollout::{
    actor_trajectory, collect_rollouts, random_trajectory, sample_categorical, FeatureCache,
};

pub const SGD_MOMENTUM: f64 = 0.9;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;

/// One epoch of one stage in the training log. Component columns hold `None`
/// where a stage has no such term; stage 0 marks the joint end-to-end mode.
#[derive(Clone, Debug)]
pub struct LogRow {
    pub stage: u8,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub ce: Option<f64>,
    pub smoothing: Option<f64>,
    pub clip: Option<f64>,
    pub value: Option<f64>,
    pub entropy: Option<f64>,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// Writes the epoch log as CSV.
pub fn write_training_log(path: &std::path::Path, rows: &[LogRow]) -> Result<()> {
    let mut out = String::from("stage,epoch,lr,loss,ce,smoothing,clip,value,entropy\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{},{},{},{},{}\n",
            r.stage,
            r.epoch,
            r.lr,
            r.loss,
            fmt_opt(r.ce),
            fmt_opt(r.smoothing),
            fmt_opt(r.clip),
            fmt_opt(r.value),
            fmt_opt(r.entropy),
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

enum OptimKind {
    Sgd,
    Adam,
}

/// A set of parameter slots that share an optimizer and a base rate. Indices
/// point into the canonical [`ModelParams::tensors`] order.
struct ParamGroup {
    indices: Vec<usize>,
    base_lr: f64,
    state: OptimState,
}

fn build_groups(
    params: &ModelParams,
    rates: &[(&[Component], f64)],
    kind: OptimKind,
) -> Vec<ParamGroup> {
    let named = params.tensors();
    rates.iter()
        .map(|(components, lr)| {
            let indices: Vec<usize> = named
                .iter()
                .enumerate()
                .filter(|(_, (name, _))| components.contains(&Component::of(name)))
                .map(|(i, _)| i)
                .collect();
            let tensors: Vec<Tensor> = indices.iter().map(|i| named[*i].1.clone()).collect();
            let state = match kind {
                OptimKind::Sgd => OptimState::sgd_momentum(&tensors, SGD_MOMENTUM),
                OptimKind::Adam => OptimState::adam(&tensors, ADAM_BETA1, ADAM_BETA2),
            };
            ParamGroup { indices, base_lr: *lr, state }
        })
        .collect()
}

/// Applies one optimizer step per group at its cosine-scheduled rate.
/// Parameters outside every group are untouched by construction.
fn step_groups(
    groups: &mut [ParamGroup],
    params: &mut ModelParams,
    grads: &[Tensor],
    epoch: usize,
    total_epochs: usize,
) -> Result<()> {
    for group in groups.iter_mut() {
        if group.indices.is_empty() {
            continue;
        }
        let lr = cosine_lr(epoch, total_epochs, group.base_lr)?;
        let mut slots = params.tensors_mut();
        let mut ps: Vec<Tensor> = group.indices.iter().map(|i| slots[*i].1.clone()).collect();
        let gs: Vec<Tensor> = group.indices.iter().map(|i| grads[*i].clone()).collect();
        optim_step(&mut group.state, &mut ps, &gs, lr)?;
        for (slot, p) in group.indices.iter().zip(ps) {
            *slots[*slot].1 = p;
        }
    }
    Ok(())
}

fn gather_grads(g: &Graph, vars: &ModelVars) -> Vec<Tensor> {
    vars.ordered().iter().map(|v| g.grad_or_zeros(*v)).collect()
}

/// Folds one trajectory through the recognition path on the tape and pushes
/// a loss term per step.
fn recognition_terms(
    g: &mut Graph,
    vars: &ModelVars,
    sample: &crate::env::MultiViewSample,
    trajectory: &[usize],
    hidden_dim: usize,
    temperature: Option<f64>,
    ce_terms: &mut Vec<VarId>,
    smoothing_terms: &mut Vec<VarId>,
) -> Result<()> {
    let mut h = tape_zero_state(g, hidden_dim);
    for &v in trajectory {
        let x = g.constant(&sample.views[v]);
        let f = tape_extract(g, &vars.extractor, x);
        h = tape_gru_step(g, &vars.gru_e, h, f);
        let logits = tape_affine(g, &vars.classifier, h);
        let (ce, smoothing) = stage1_terms(g, logits, sample.label, temperature)?;
        ce_terms.push(ce);
        if let Some(s) = smoothing {
            smoothing_terms.push(s);
        }
    }
    Ok(())
}

/// Stage 1: supervised recognition over random trajectories, with prefix
/// losses at every step. Trains the extractor, the recognition aggregator,
/// and the classifier; the selection heads never appear on the tape.
pub fn train_stage1(
    params: &mut ModelParams,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    log: &mut Vec<LogRow>,
) -> Result<()> {
    let temperature = (!cfg.disable_smoothing).then_some(cfg.temperature);
    let groups = build_groups(
        params,
        &[
            (&[Component::Extractor], cfg.stage1_lr_extractor),
            (&[Component::GruE, Component::Classifier], cfg.stage1_lr),
        ],
        OptimKind::Sgd,
    );
    run_recognition_stage(
        params,
        data,
        cfg,
        1,
        cfg.stage1_epochs,
        cfg.stage1_lr,
        temperature,
        TrajectorySource::Random,
        groups,
        rng,
        log,
    )
}

/// Stage 3: the stage 1 procedure rerun over trajectories chosen by the
/// frozen policy (sampled, not greedy), without the smoothing term, at one
/// uniform rate. Under random selection the trajectories stay random.
pub fn train_stage3(
    params: &mut ModelParams,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    log: &mut Vec<LogRow>,
) -> Result<()> {
    let source = if cfg.random_selection {
        TrajectorySource::Random
    } else {
        TrajectorySource::Actor
    };
    let groups = build_groups(
        params,
        &[(
            &[Component::Extractor, Component::GruE, Component::Classifier],
            cfg.stage3_lr,
        )],
        OptimKind::Sgd,
    );
    run_recognition_stage(
        params,
        data,
        cfg,
        3,
        cfg.stage3_epochs,
        cfg.stage3_lr,
        None,
        source,
        groups,
        rng,
        log,
    )
}

enum TrajectorySource {
    Random,
    Actor,
}

#[allow(clippy::too_many_arguments)]
fn run_recognition_stage(
    params: &mut ModelParams,
    data: &Dataset,
    cfg: &TrainConfig,
    stage: u8,
    epochs: usize,
    head_lr: f64,
    temperature: Option<f64>,
    source: TrajectorySource,
    mut groups: Vec<ParamGroup>,
    rng: &mut ChaCha8Rng,
    log: &mut Vec<LogRow>,
) -> Result<()> {
    let n = data.samples.len();
    let hidden = params.config.hidden_dim;
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut ce_sum = 0.0;
        let mut smoothing_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let vars = register(&mut g, params);
            let mut ce_terms = Vec::new();
            let mut smoothing_terms = Vec::new();
            for &i in batch {
                let sample = &data.samples[i];
                let trajectory = match source {
                    TrajectorySource::Random => {
                        random_trajectory(data.views, cfg.allow_duplicates, rng)
                    }
                    TrajectorySource::Actor => {
                        actor_trajectory(params, sample, cfg.allow_duplicates, rng)?
                    }
                };
                recognition_terms(
                    &mut g,
                    &vars,
                    sample,
                    &trajectory,
                    hidden,
                    temperature,
                    &mut ce_terms,
                    &mut smoothing_terms,
                )?;
            }
            let tape = combine_stage1_terms(
                &mut g,
                &ce_terms,
                temperature.is_some().then_some(smoothing_terms.as_slice()),
            );
            let loss = g.value(tape.total).item();
            if !loss.is_finite() {
                return Err(Error::Divergence { stage, epoch });
            }
            let w = batch.len() as f64;
            loss_sum += loss * w;
            ce_sum += g.value(tape.ce).item() * w;
            if let Some(s) = tape.smoothing {
                smoothing_sum += g.value(s).item() * w;
            }
            g.backward(tape.total)?;
            let grads = gather_grads(&g, &vars);
            step_groups(&mut groups, params, &grads, epoch, epochs)?;
        }
        log.push(LogRow {
            stage,
            epoch,
            lr: cosine_lr(epoch, epochs, head_lr)?,
            loss: loss_sum / n as f64,
            ce: Some(ce_sum / n as f64),
            smoothing: temperature.map(|_| smoothing_sum / n as f64),
            clip: None,
            value: None,
            entropy: None,
        });
    }
    Ok(())
}

/// Stage 2: clipped-surrogate training of the selection heads against the
/// frozen recognition path. Each epoch collects one stochastic episode per
/// sample, then replays them for several update passes in shuffled
/// minibatches of episodes; rewards and advantages stay fixed within the
/// epoch, and the recorded trajectories are refolded on the tape because the
/// selection aggregator itself is training.
pub fn train_stage2(
    params: &mut ModelParams,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    log: &mut Vec<LogRow>,
) -> Result<()> {
    let ppo = cfg.ppo();
    let epochs = cfg.stage2_epochs;
    let views = params.config.views;
    let hidden = params.config.hidden_dim;
    let cache = FeatureCache::new(params, data);
    let mut groups = build_groups(
        params,
        &[(
            &[Component::GruS, Component::Actor, Component::Value],
            cfg.stage2_lr,
        )],
        OptimKind::Adam,
    );
    for epoch in 0..epochs {
        let rollouts = collect_rollouts(params, data, &cache, ppo.gamma, cfg.allow_duplicates, rng)?;
        let mut weight = 0.0;
        let mut obj_sum = 0.0;
        let mut clip_sum = 0.0;
        let mut value_sum = 0.0;
        let mut entropy_sum = 0.0;
        for _pass in 0..ppo.update_epochs {
            let mut order: Vec<usize> = (0..rollouts.len()).collect();
            order.shuffle(rng);
            for chunk in order.chunks(ppo.minibatch) {
                let mut g = Graph::new();
                let vars = register(&mut g, params);
                let mut clip_terms = Vec::new();
                let mut value_terms = Vec::new();
                let mut entropy_terms = Vec::new();
                let no_mask = vec![false; views];
                for &ei in chunk {
                    let ep = &rollouts[ei];
                    let feats = cache.views(ep.sample_idx);
                    let mut h = tape_zero_state(&mut g, hidden);
                    let mut seen = vec![false; views];
                    let x0 = g.constant(&feats[ep.views[0]]);
                    h = tape_gru_step(&mut g, &vars.gru_s, h, x0);
                    seen[ep.views[0]] = true;
                    for tr in &ep.transitions {
                        let logits = tape_affine(&mut g, &vars.actor, h);
                        let mask: &[bool] = if cfg.allow_duplicates { &no_mask } else { &seen };
                        let lp = g.masked_log_prob(logits, mask, tr.action);
                        clip_terms.push(clipped_term(&mut g, lp, tr.log_prob, tr.advantage, ppo.clip));
                        let v_node = tape_affine(&mut g, &vars.value_head, h);
                        value_terms.push(value_term(&mut g, v_node, tr.value_target));
                        entropy_terms.push(g.masked_entropy(logits, mask));
                        let x = g.constant(&feats[tr.action]);
                        h = tape_gru_step(&mut g, &vars.gru_s, h, x);
                        seen[tr.action] = true;
                    }
                }
                let tape = combine_ppo_terms(&mut g, &clip_terms, &value_terms, &entropy_terms, &ppo);
                let objective = g.value(tape.objective).item();
                if !objective.is_finite() {
                    return Err(Error::Divergence { stage: 2, epoch });
                }
                let loss = g.scale(tape.objective, -1.0);
                g.backward(loss)?;
                let grads = gather_grads(&g, &vars);
                step_groups(&mut groups, params, &grads, epoch, epochs)?;
                let w = clip_terms.len() as f64;
                weight += w;
                obj_sum += objective * w;
                clip_sum += g.value(tape.clip).item() * w;
                value_sum += g.value(tape.value).item() * w;
                entropy_sum += g.value(tape.entropy).item() * w;
            }
        }
        log.push(LogRow {
            stage: 2,
            epoch,
            lr: cosine_lr(epoch, epochs, cfg.stage2_lr)?,
            loss: -obj_sum / weight,
            ce: None,
            smoothing: None,
            clip: Some(clip_sum / weight),
            value: Some(value_sum / weight),
            entropy: Some(entropy_sum / weight),
        });
    }
    Ok(())
}

/// Joint mode: every batch folds sampled-policy episodes once and optimizes
/// recognition and selection terms together; ratios start at one because the
/// reference log-probabilities are the current ones. Recognition components
/// keep their stage 1 optimizer and rates, selection components their stage
/// 2 optimizer, both on one cosine schedule over `stage1_epochs`.
pub fn train_end_to_end(
    params: &mut ModelParams,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    log: &mut Vec<LogRow>,
) -> Result<()> {
    let ppo = cfg.ppo();
    let epochs = cfg.stage1_epochs;
    let n = data.samples.len();
    let views = params.config.views;
    let hidden = params.config.hidden_dim;
    let temperature = (!cfg.disable_smoothing).then_some(cfg.temperature);
    let mut rec_groups = build_groups(
        params,
        &[
            (&[Component::Extractor], cfg.stage1_lr_extractor),
            (&[Component::GruE, Component::Classifier], cfg.stage1_lr),
        ],
        OptimKind::Sgd,
    );
    let mut sel_groups = build_groups(
        params,
        &[(
            &[Component::GruS, Component::Actor, Component::Value],
            cfg.stage2_lr,
        )],
        OptimKind::Adam,
    );
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut ce_sum = 0.0;
        let mut smoothing_sum = 0.0;
        let mut clip_sum = 0.0;
        let mut value_sum = 0.0;
        let mut entropy_sum = 0.0;
        let mut transition_weight = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let vars = register(&mut g, params);
            let mut ce_terms = Vec::new();
            let mut smoothing_terms = Vec::new();
            let mut clip_terms = Vec::new();
            let mut value_terms = Vec::new();
            let mut entropy_terms = Vec::new();
            let no_mask = vec![false; views];
            for &i in batch {
                let sample = &data.samples[i];
                if cfg.random_selection {
                    let trajectory = random_trajectory(views, cfg.allow_duplicates, rng);
                    recognition_terms(
                        &mut g,
                        &vars,
                        sample,
                        &trajectory,
                        hidden,
                        temperature,
                        &mut ce_terms,
                        &mut smoothing_terms,
                    )?;
                    continue;
                }

                let first = rng.gen_range(0..views);
                let mut seen = vec![false; views];
                seen[first] = true;
                let mut feat_nodes: Vec<Option<VarId>> = vec![None; views];
                let feat = |g: &mut Graph, v: usize, nodes: &mut Vec<Option<VarId>>| {
                    if let Some(f) = nodes[v] {
                        return f;
                    }
                    let x = g.constant(&sample.views[v]);
                    let f = tape_extract(g, &vars.extractor, x);
                    nodes[v] = Some(f);
                    f
                };

                let mut h_e = tape_zero_state(&mut g, hidden);
                let mut h_s = tape_zero_state(&mut g, hidden);
                let f0 = feat(&mut g, first, &mut feat_nodes);
                h_e = tape_gru_step(&mut g, &vars.gru_e, h_e, f0);
                h_s = tape_gru_step(&mut g, &vars.gru_s, h_s, f0);
                let logits = tape_affine(&mut g, &vars.classifier, h_e);
                let (ce, smoothing) = stage1_terms(&mut g, logits, sample.label, temperature)?;
                ce_terms.push(ce);
                if let Some(s) = smoothing {
                    smoothing_terms.push(s);
                }
                let mut prev_conf =
                    crate::numcore::softmax(g.value(logits))?.data()[sample.label];

                let decisions = views - 1;
                let mut lp_nodes = Vec::with_capacity(decisions);
                let mut old_lps = Vec::with_capacity(decisions);
                let mut value_nodes = Vec::with_capacity(decisions);
                let mut value_ests = Vec::with_capacity(decisions);
                let mut rewards = Vec::with_capacity(decisions);
                for _t in 2..=views {
                    let actor_logits = tape_affine(&mut g, &vars.actor, h_s);
                    let mask: Vec<bool> = if cfg.allow_duplicates {
                        no_mask.clone()
                    } else {
                        seen.clone()
                    };
                    let dist = masked_softmax(g.value(actor_logits), &mask);
                    let action = sample_categorical(dist.data(), rng);
                    let lp = g.masked_log_prob(actor_logits, &mask, action);
                    lp_nodes.push(lp);
                    old_lps.push(g.value(lp).item());
                    entropy_terms.push(g.masked_entropy(actor_logits, &mask));
                    let v_node = tape_affine(&mut g, &vars.value_head, h_s);
                    value_nodes.push(v_node);
                    value_ests.push(g.value(v_node).item());
                    seen[action] = true;

                    let f = feat(&mut g, action, &mut feat_nodes);
                    h_e = tape_gru_step(&mut g, &vars.gru_e, h_e, f);
                    h_s = tape_gru_step(&mut g, &vars.gru_s, h_s, f);
                    let logits = tape_affine(&mut g, &vars.classifier, h_e);
                    let (ce, smoothing) = stage1_terms(&mut g, logits, sample.label, temperature)?;
                    ce_terms.push(ce);
                    if let Some(s) = smoothing {
                        smoothing_terms.push(s);
                    }
                    let conf = crate::numcore::softmax(g.value(logits))?.data()[sample.label];
                    rewards.push(conf - prev_conf);
                    prev_conf = conf;
                }
                for k in 0..decisions {
                    let ret = discounted_return(&rewards[k..], ppo.gamma)?;
                    clip_terms.push(clipped_term(
                        &mut g,
                        lp_nodes[k],
                        old_lps[k],
                        ret - value_ests[k],
                        ppo.clip,
                    ));
                    value_terms.push(value_term(&mut g, value_nodes[k], ret));
                }
            }

            let s_tape = combine_stage1_terms(
                &mut g,
                &ce_terms,
                temperature.is_some().then_some(smoothing_terms.as_slice()),
            );
            let total = if clip_terms.is_empty() {
                s_tape.total
            } else {
                let p_tape =
                    combine_ppo_terms(&mut g, &clip_terms, &value_terms, &entropy_terms, &ppo);
                clip_sum += g.value(p_tape.clip).item() * clip_terms.len() as f64;
                value_sum += g.value(p_tape.value).item() * clip_terms.len() as f64;
                entropy_sum += g.value(p_tape.entropy).item() * clip_terms.len() as f64;
                transition_weight += clip_terms.len() as f64;
                let neg = g.scale(p_tape.objective, -1.0);
                g.add(s_tape.total, neg)
            };
            let loss = g.value(total).item();
            if !loss.is_finite() {
                return Err(Error::Divergence { stage: 0, epoch });
            }
            let w = batch.len() as f64;
            loss_sum += loss * w;
            ce_sum += g.value(s_tape.ce).item() * w;
            if let Some(s) = s_tape.smoothing {
                smoothing_sum += g.value(s).item() * w;
            }
            g.backward(total)?;
            let grads = gather_grads(&g, &vars);
            step_groups(&mut rec_groups, params, &grads, epoch, epochs)?;
            step_groups(&mut sel_groups, params, &grads, epoch, epochs)?;
        }
        let has_sel = transition_weight > 0.0;
        log.push(LogRow {
            stage: 0,
            epoch,
            lr: cosine_lr(epoch, epochs, cfg.stage1_lr)?,
            loss: loss_sum / n as f64,
            ce: Some(ce_sum / n as f64),
            smoothing: temperature.map(|_| smoothing_sum / n as f64),
            clip: has_sel.then(|| clip_sum / transition_weight),
            value: has_sel.then(|| value_sum / transition_weight),
            entropy: has_sel.then(|| entropy_sum / transition_weight),
        });
    }
    Ok(())
}
