//! Episode execution under the evaluation policies.
//!
//! Every mode shares one protocol: a per-sample generator drawn from the
//! seed and the sample index picks the first view uniformly, then the mode
//! chooses the rest. Greedy modes consume no further randomness, so paired
//! comparisons across modes share first views exactly.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{Dataset, MultiViewSample};
use crate::error::{Error, Result};
use crate::eval::metrics::AccuracyCurve;
use crate::nets::{classify, extract, gru_step, ModelParams, ModelRunner};
use crate::numcore::Tensor;

/// How the next view gets chosen during evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyMode {
    /// Greedy argmax of the actor over unseen views.
    Active,
    /// Uniform over unseen views.
    Random,
    /// Greedy argmax of the actor with no mask; revisits allowed.
    Duplicates,
    /// Random order, but each step predicts with the mean of the single-view
    /// probability vectors gathered so far instead of the recurrent fold.
    Ensemble,
}

impl PolicyMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyMode::Active => "active",
            PolicyMode::Random => "random",
            PolicyMode::Duplicates => "duplicates",
            PolicyMode::Ensemble => "ensemble",
        }
    }
}

impl std::fmt::Display for PolicyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One evaluated episode: the views taken and, per step, whether the argmax
/// prediction was correct and how confident it was (max class probability).
#[derive(Clone, Debug)]
pub struct Trace {
    pub views: Vec<usize>,
    pub correct: Vec<bool>,
    pub confidence: Vec<f64>,
}

/// The evaluation generator for one (seed, sample) pair: stream-separated so
/// sample order never couples draws.
pub fn sample_rng(seed: u64, sample_idx: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample_idx as u64);
    rng
}

/// First occurrence of the maximum; ties resolve to the lowest index.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn run_trace(
    params: &ModelParams,
    sample: &MultiViewSample,
    mode: PolicyMode,
    rng: &mut ChaCha8Rng,
) -> Trace {
    let first = rng.gen_range(0..sample.views.len());
    run_trace_from(params, sample, mode, first, rng)
}

/// Runs one episode with a fixed first view. The exhaustive-bound tests use
/// this to evaluate a policy from every possible start.
pub fn run_trace_from(
    params: &ModelParams,
    sample: &MultiViewSample,
    mode: PolicyMode,
    first: usize,
    rng: &mut ChaCha8Rng,
) -> Trace {
    match mode {
        PolicyMode::Ensemble => ensemble_trace(params, sample, first, rng),
        _ => fold_trace(params, sample, mode, first, rng),
    }
}

fn push_outcome(probs: &[f64], label: usize, trace: &mut Trace) {
    let pick = argmax(probs);
    trace.correct.push(pick == label);
    trace.confidence.push(probs[pick]);
}

fn fold_trace(
    params: &ModelParams,
    sample: &MultiViewSample,
    mode: PolicyMode,
    first: usize,
    rng: &mut ChaCha8Rng,
) -> Trace {
    let v_count = sample.views.len();
    let mut runner = ModelRunner::new(params, &sample.views);
    let mut trace = Trace {
        views: vec![first],
        correct: Vec::with_capacity(v_count),
        confidence: Vec::with_capacity(v_count),
    };
    let mut seen = vec![false; v_count];
    seen[first] = true;
    let no_mask = vec![false; v_count];
    let (_, probs) = runner.step(first);
    push_outcome(probs.data(), sample.label, &mut trace);
    for _ in 2..=v_count {
        let next = match mode {
            PolicyMode::Active => argmax(runner.actor_dist(&seen).data()),
            PolicyMode::Duplicates => argmax(runner.actor_dist(&no_mask).data()),
            PolicyMode::Random => {
                let unseen: Vec<usize> = (0..v_count).filter(|v| !seen[*v]).collect();
                unseen[rng.gen_range(0..unseen.len())]
            }
            PolicyMode::Ensemble => unreachable!("ensemble episodes run separately"),
        };
        seen[next] = true;
        trace.views.push(next);
        let (_, probs) = runner.step(next);
        push_outcome(probs.data(), sample.label, &mut trace);
    }
    trace
}

fn ensemble_trace(
    params: &ModelParams,
    sample: &MultiViewSample,
    first: usize,
    rng: &mut ChaCha8Rng,
) -> Trace {
    let v_count = sample.views.len();
    let hidden = params.config.hidden_dim;
    let zero = Tensor::zeros(&[hidden]);
    let singles: Vec<Tensor> = sample
        .views
        .iter()
        .map(|x| {
            let f = extract(params, x);
            let h = gru_step(&params.gru_e, &zero, &f);
            classify(params, &h).1
        })
        .collect();
    let classes = params.config.classes;
    let mut trace = Trace {
        views: Vec::with_capacity(v_count),
        correct: Vec::with_capacity(v_count),
        confidence: Vec::with_capacity(v_count),
    };
    let mut seen = vec![false; v_count];
    let mut sum = vec![0.0; classes];
    let mut next = first;
    for t in 1..=v_count {
        seen[next] = true;
        trace.views.push(next);
        for (s, p) in sum.iter_mut().zip(singles[next].data()) {
            *s += p;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / t as f64).collect();
        push_outcome(&mean, sample.label, &mut trace);
        if t < v_count {
            let unseen: Vec<usize> = (0..v_count).filter(|v| !seen[*v]).collect();
            next = unseen[rng.gen_range(0..unseen.len())];
        }
    }
    trace
}

/// Checkpoint and dataset must describe the same problem shape.
pub fn check_compat(params: &ModelParams, data: &Dataset) -> Result<()> {
    let c = &params.config;
    if c.classes != data.classes || c.views != data.views || c.feature_dim != data.feature_dim {
        return Err(Error::Alignment(format!(
            "model expects {} classes / {} views / {} features, dataset has {} / {} / {}",
            c.classes, c.views, c.feature_dim, data.classes, data.views, data.feature_dim
        )));
    }
    Ok(())
}

/// Per-step accuracy under a mode: per seed, every sample runs one episode
/// with its own generator; the per-seed curves then aggregate to mean and
/// spread.
pub fn step_accuracies(
    params: &ModelParams,
    data: &Dataset,
    mode: PolicyMode,
    seeds: &[u64],
) -> Result<AccuracyCurve> {
    check_compat(params, data)?;
    if seeds.is_empty() {
        return Err(Error::Parameter("at least one evaluation seed required".into()));
    }
    if data.samples.is_empty() {
        return Err(Error::Contract("empty dataset".into()));
    }
    let steps = data.views;
    let n = data.samples.len() as f64;
    let mut curves = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut hits = vec![0.0; steps];
        for (idx, sample) in data.samples.iter().enumerate() {
            let mut rng = sample_rng(seed, idx);
            let trace = run_trace(params, sample, mode, &mut rng);
            for (slot, c) in hits.iter_mut().zip(&trace.correct) {
                if *c {
                    *slot += 1.0;
                }
            }
        }
        curves.push(hits.into_iter().map(|h| h / n).collect());
    }
    AccuracyCurve::from_seed_curves(&curves)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_synthetic, SynthConfig};
    use crate::nets::ModelConfig;

    fn synth() -> (Dataset, Dataset) {
        let cfg = SynthConfig {
            classes: 4,
            groups: 2,
            views: 5,
            feature_dim: 6,
            train_per_class: 2,
            test_per_class: 6,
            ..SynthConfig::default()
        };
        generate_synthetic(&cfg).unwrap()
    }

    fn model_config() -> ModelConfig {
        ModelConfig { feature_dim: 6, hidden_dim: 8, classes: 4, views: 5, mlp_width: 10 }
    }

    fn random_params(seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelParams::init(model_config(), &mut rng).unwrap()
    }

    fn zero_params() -> ModelParams {
        let mut params = random_params(0);
        for (_, t) in params.tensors_mut() {
            for x in t.data_mut() {
                *x = 0.0;
            }
        }
        params
    }

    #[test]
    fn zero_model_predicts_the_first_class_everywhere() {
        let (_, test) = synth();
        let params = zero_params();
        for mode in [
            PolicyMode::Active,
            PolicyMode::Random,
            PolicyMode::Duplicates,
            PolicyMode::Ensemble,
        ] {
            let curve = step_accuracies(&params, &test, mode, &[0, 1]).unwrap();
            for (a, s) in curve.mean.iter().zip(&curve.std) {
                assert_eq!(*a, 0.25, "balanced labels, argmax ties to class 0 ({mode})");
                assert_eq!(*s, 0.0);
            }
        }
    }

    #[test]
    fn traces_cover_every_step_with_valid_views() {
        let (_, test) = synth();
        let params = random_params(3);
        for mode in [
            PolicyMode::Active,
            PolicyMode::Random,
            PolicyMode::Duplicates,
            PolicyMode::Ensemble,
        ] {
            for (idx, sample) in test.samples.iter().enumerate() {
                let mut rng = sample_rng(7, idx);
                let trace = run_trace(&params, sample, mode, &mut rng);
                assert_eq!(trace.views.len(), 5);
                assert_eq!(trace.correct.len(), 5);
                assert_eq!(trace.confidence.len(), 5);
                assert!(trace.views.iter().all(|v| *v < 5));
                assert!(trace.confidence.iter().all(|c| (0.0..=1.0).contains(c)));
                if mode != PolicyMode::Duplicates {
                    let mut sorted = trace.views.clone();
                    sorted.sort_unstable();
                    assert_eq!(sorted, vec![0, 1, 2, 3, 4], "{mode} must not revisit");
                }
            }
        }
    }

    #[test]
    fn greedy_modes_share_the_first_view_and_are_deterministic() {
        let (_, test) = synth();
        let params = random_params(4);
        for (idx, sample) in test.samples.iter().enumerate() {
            let mut a = sample_rng(5, idx);
            let mut b = sample_rng(5, idx);
            let ta = run_trace(&params, sample, PolicyMode::Active, &mut a);
            let tb = run_trace(&params, sample, PolicyMode::Duplicates, &mut b);
            assert_eq!(ta.views[0], tb.views[0], "same seed, same first view");
            let mut a2 = sample_rng(5, idx);
            let ta2 = run_trace(&params, sample, PolicyMode::Active, &mut a2);
            assert_eq!(ta.views, ta2.views);
            for (x, y) in ta.confidence.iter().zip(&ta2.confidence) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn forced_first_view_is_respected() {
        let (_, test) = synth();
        let params = random_params(5);
        let sample = &test.samples[0];
        for first in 0..5 {
            let mut rng = sample_rng(0, 0);
            let trace = run_trace_from(&params, sample, PolicyMode::Active, first, &mut rng);
            assert_eq!(trace.views[0], first);
        }
    }

    #[test]
    fn ensemble_step_one_matches_the_fold_on_the_same_first_view() {
        let (_, test) = synth();
        let params = random_params(6);
        for (idx, sample) in test.samples.iter().enumerate() {
            let first = idx % 5;
            let mut ra = sample_rng(1, idx);
            let mut rb = sample_rng(1, idx);
            let fold = run_trace_from(&params, sample, PolicyMode::Active, first, &mut ra);
            let ens = run_trace_from(&params, sample, PolicyMode::Ensemble, first, &mut rb);
            assert_eq!(fold.correct[0], ens.correct[0]);
            assert_eq!(fold.confidence[0].to_bits(), ens.confidence[0].to_bits());
        }
    }

    #[test]
    fn averaging_identical_views_never_changes_the_ensemble_answer() {
        let params = random_params(8);
        let view = Tensor::vector(vec![0.3, -0.2, 0.9, 0.0, 1.1, -0.4]);
        let sample = MultiViewSample {
            id: "twin".into(),
            label: 2,
            views: vec![view; 5],
        };
        let mut rng = sample_rng(0, 0);
        let trace = run_trace(&params, &sample, PolicyMode::Ensemble, &mut rng);
        for t in 1..5 {
            assert_eq!(trace.correct[t], trace.correct[0]);
            assert!((trace.confidence[t] - trace.confidence[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_an_alignment_error() {
        let (_, test) = synth();
        let mut bad = model_config();
        bad.classes = 7;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = ModelParams::init(bad, &mut rng).unwrap();
        assert!(matches!(
            step_accuracies(&params, &test, PolicyMode::Active, &[0]),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn seed_list_must_be_nonempty() {
        let (_, test) = synth();
        let params = random_params(1);
        assert!(matches!(
            step_accuracies(&params, &test, PolicyMode::Active, &[]),
            Err(Error::Parameter(_))
        ));
    }
}
