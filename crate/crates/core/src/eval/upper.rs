//! Exhaustive-trajectory upper bound: a sample counts correct at length t if
//! any ordered, duplicate-free trajectory of t views ends on a correct
//! argmax. Brute-force enumeration over the prefix tree, carrying the
//! recognition state down each branch; the search stops early once every
//! depth has been satisfied for the sample.

use crate::env::{Dataset, MultiViewSample};
use crate::error::{Error, Result};
use crate::eval::traces::{argmax, check_compat};
use crate::nets::{classify, extract, gru_step, ModelParams};
use crate::numcore::Tensor;

fn search(
    params: &ModelParams,
    feats: &[Tensor],
    label: usize,
    h: &Tensor,
    seen: &mut [bool],
    depth: usize,
    found: &mut [bool],
) -> bool {
    for v in 0..feats.len() {
        if seen[v] {
            continue;
        }
        let h_next = gru_step(&params.gru_e, h, &feats[v]);
        if !found[depth] {
            let (_, probs) = classify(params, &h_next);
            if argmax(probs.data()) == label {
                found[depth] = true;
                if found.iter().all(|f| *f) {
                    return true;
                }
            }
        }
        if depth + 1 < found.len() {
            seen[v] = true;
            let done = search(params, feats, label, &h_next, seen, depth + 1, found);
            seen[v] = false;
            if done {
                return true;
            }
        }
    }
    false
}

/// Per-depth success flags for one sample, lengths 1 through `max_t`.
pub fn upper_bound_flags(
    params: &ModelParams,
    sample: &MultiViewSample,
    max_t: usize,
) -> Vec<bool> {
    let feats: Vec<Tensor> = sample.views.iter().map(|x| extract(params, x)).collect();
    let mut seen = vec![false; feats.len()];
    let mut found = vec![false; max_t];
    let zero = Tensor::zeros(&[params.config.hidden_dim]);
    search(params, &feats, sample.label, &zero, &mut seen, 0, &mut found);
    found
}

fn validate_t(t: usize, views: usize) -> Result<()> {
    if t == 0 || t > views {
        return Err(Error::Parameter(format!(
            "trajectory length {t} outside 1..={views}"
        )));
    }
    Ok(())
}

/// Fraction of samples with at least one correct length-`t` trajectory.
pub fn upper_bound(params: &ModelParams, data: &Dataset, t: usize) -> Result<f64> {
    check_compat(params, data)?;
    validate_t(t, data.views)?;
    let hits = data
        .samples
        .iter()
        .filter(|s| upper_bound_flags(params, s, t)[t - 1])
        .count();
    Ok(hits as f64 / data.samples.len() as f64)
}

/// The whole curve in one enumeration pass per sample.
pub fn upper_bound_curve(params: &ModelParams, data: &Dataset) -> Result<Vec<f64>> {
    check_compat(params, data)?;
    let steps = data.views;
    let mut hits = vec![0.0; steps];
    for sample in &data.samples {
        let found = upper_bound_flags(params, sample, steps);
        for (slot, f) in hits.iter_mut().zip(&found) {
            if *f {
                *slot += 1.0;
            }
        }
    }
    let n = data.samples.len() as f64;
    Ok(hits.into_iter().map(|h| h / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::env::{generate_synthetic, SynthConfig};
    use crate::eval::traces::{run_trace_from, PolicyMode};
    use crate::nets::{ModelConfig, ModelRunner};

    fn setup() -> (ModelParams, Dataset) {
        let cfg = SynthConfig {
            classes: 4,
            groups: 2,
            views: 4,
            feature_dim: 6,
            train_per_class: 1,
            test_per_class: 4,
            ..SynthConfig::default()
        };
        let (_, test) = generate_synthetic(&cfg).unwrap();
        let model = ModelConfig { feature_dim: 6, hidden_dim: 8, classes: 4, views: 4, mlp_width: 10 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        (ModelParams::init(model, &mut rng).unwrap(), test)
    }

    fn all_trajectories(views: usize, t: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut current = Vec::new();
        fn go(views: usize, t: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if current.len() == t {
                out.push(current.clone());
                return;
            }
            for v in 0..views {
                if !current.contains(&v) {
                    current.push(v);
                    go(views, t, current, out);
                    current.pop();
                }
            }
        }
        go(views, t, &mut current, &mut out);
        out
    }

    #[test]
    fn enumeration_counts_match_the_falling_factorial() {
        assert_eq!(all_trajectories(4, 1).len(), 4);
        assert_eq!(all_trajectories(4, 2).len(), 12);
        assert_eq!(all_trajectories(4, 3).len(), 24);
        assert_eq!(all_trajectories(4, 4).len(), 24);
        assert_eq!(all_trajectories(7, 7).len(), 5040);
    }

    #[test]
    fn pruned_search_agrees_with_explicit_enumeration() {
        let (params, test) = setup();
        for sample in &test.samples {
            let flags = upper_bound_flags(&params, sample, 4);
            for t in 1..=4 {
                let mut any = false;
                for traj in all_trajectories(4, t) {
                    let mut runner = ModelRunner::new(&params, &sample.views);
                    let mut probs = None;
                    for &v in &traj {
                        probs = Some(runner.step(v).1);
                    }
                    if argmax(probs.unwrap().data()) == sample.label {
                        any = true;
                        break;
                    }
                }
                assert_eq!(flags[t - 1], any, "sample {} at t = {t}", sample.id);
            }
        }
    }

    #[test]
    fn length_one_bound_means_some_single_view_is_enough() {
        let (params, test) = setup();
        for sample in &test.samples {
            let flags = upper_bound_flags(&params, sample, 1);
            let mut any = false;
            for v in 0..4 {
                let mut runner = ModelRunner::new(&params, &sample.views);
                let (_, probs) = runner.step(v);
                if argmax(probs.data()) == sample.label {
                    any = true;
                }
            }
            assert_eq!(flags[0], any);
        }
    }

    #[test]
    fn bound_dominates_policies_started_from_every_first_view() {
        let (params, test) = setup();
        for (idx, sample) in test.samples.iter().enumerate() {
            let flags = upper_bound_flags(&params, sample, 4);
            for first in 0..4 {
                for mode in [PolicyMode::Active, PolicyMode::Random] {
                    let mut rng = crate::eval::traces::sample_rng(3, idx);
                    let trace = run_trace_from(&params, sample, mode, first, &mut rng);
                    for (t, correct) in trace.correct.iter().enumerate() {
                        if *correct {
                            assert!(flags[t], "policy beat the bound at t = {}", t + 1);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn curve_matches_per_length_queries() {
        let (params, test) = setup();
        let curve = upper_bound_curve(&params, &test).unwrap();
        assert_eq!(curve.len(), 4);
        for t in 1..=4 {
            let single = upper_bound(&params, &test, t).unwrap();
            assert_eq!(curve[t - 1].to_bits(), single.to_bits());
        }
    }

    #[test]
    fn out_of_range_lengths_are_rejected() {
        let (params, test) = setup();
        assert!(matches!(upper_bound(&params, &test, 0), Err(Error::Parameter(_))));
        assert!(matches!(upper_bound(&params, &test, 5), Err(Error::Parameter(_))));
    }
}
