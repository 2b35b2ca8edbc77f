//! Dynamic exit: per-step confidence thresholds under a mean-step budget.
//!
//! Thresholds come from a calibration split. A single scalar q in (0, 1)
//! parameterizes the family: at each step the threshold is the (1-q)
//! empirical quantile of the confidences of still-running calibration
//! samples, so roughly a q fraction exits per step. Bisection on q matches
//! the calibration mean exit step to the requested budget; thresholds above
//! one mark steps where nothing may exit.

use crate::env::Dataset;
use crate::error::{Error, Result};
use crate::eval::traces::{check_compat, run_trace, sample_rng, PolicyMode, Trace};
use crate::nets::ModelParams;

/// Threshold per step; inference stops at the first step whose confidence
/// reaches it. The final threshold is zero, forcing an exit.
#[derive(Clone, Debug, PartialEq)]
pub struct ExitPolicy {
    pub thresholds: Vec<f64>,
}

/// A threshold strictly above any probability, closing a step to exits.
pub const NEVER_EXIT: f64 = 2.0;

impl ExitPolicy {
    pub fn validate(&self) -> Result<()> {
        let Some(last) = self.thresholds.last() else {
            return Err(Error::Contract("empty exit policy".into()));
        };
        if *last != 0.0 {
            return Err(Error::Contract(format!(
                "final threshold must be 0 to force an exit, got {last}"
            )));
        }
        for t in &self.thresholds {
            if !t.is_finite() || *t < 0.0 {
                return Err(Error::Contract(format!("threshold {t} out of range")));
            }
        }
        Ok(())
    }

    /// The step (1-indexed) where this trace stops.
    pub fn exit_step(&self, trace: &Trace) -> usize {
        for (i, (conf, theta)) in trace.confidence.iter().zip(&self.thresholds).enumerate() {
            if conf >= theta {
                return i + 1;
            }
        }
        self.thresholds.len()
    }
}

/// Thresholds for one q over a calibration confidence matrix, plus the mean
/// exit step those thresholds produce on the same matrix.
pub(crate) fn thresholds_for(q: f64, confs: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let steps = confs[0].len();
    let n = confs.len();
    let mut running: Vec<usize> = (0..n).collect();
    let mut thresholds = vec![0.0; steps];
    let mut step_sum = 0.0;
    for t in 0..steps {
        if t == steps - 1 {
            thresholds[t] = 0.0;
            step_sum += (running.len() * (t + 1)) as f64;
            break;
        }
        if running.is_empty() {
            thresholds[t] = NEVER_EXIT;
            continue;
        }
        let mut cs: Vec<f64> = running.iter().map(|&i| confs[i][t]).collect();
        cs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let k = (((1.0 - q) * cs.len() as f64).floor() as usize).min(cs.len() - 1);
        let theta = cs[k];
        thresholds[t] = theta;
        let mut staying = Vec::with_capacity(running.len());
        for &i in &running {
            if confs[i][t] >= theta {
                step_sum += (t + 1) as f64;
            } else {
                staying.push(i);
            }
        }
        running = staying;
    }
    (thresholds, step_sum / n as f64)
}

/// Bisection on q toward a target mean step; returns the best thresholds
/// found and their calibration mean, which sits within 0.1 of the target
/// whenever the confidence distribution allows it.
pub(crate) fn solve_q(confs: &[Vec<f64>], target: f64) -> (Vec<f64>, f64) {
    let mut lo = 1e-9;
    let mut hi = 1.0 - 1e-9;
    let (mut best_thresholds, mut best_mean) = thresholds_for(0.5, confs);
    for _ in 0..200 {
        let q = 0.5 * (lo + hi);
        let (thresholds, mean) = thresholds_for(q, confs);
        if (mean - target).abs() < (best_mean - target).abs() {
            best_thresholds = thresholds;
            best_mean = mean;
        }
        if (best_mean - target).abs() <= 0.1 {
            break;
        }
        if mean > target {
            lo = q;
        } else {
            hi = q;
        }
    }
    (best_thresholds, best_mean)
}

/// Builds an exit policy whose calibration-set mean exit step approaches
/// `target_mean_step`. Returns the policy and the mean actually achieved on
/// the calibration split.
pub fn calibrate_exit(
    params: &ModelParams,
    data: &Dataset,
    target_mean_step: f64,
    seed: u64,
) -> Result<(ExitPolicy, f64)> {
    check_compat(params, data)?;
    let steps = data.views;
    if !target_mean_step.is_finite()
        || target_mean_step < 1.0
        || target_mean_step > steps as f64
    {
        return Err(Error::Parameter(format!(
            "target mean step {target_mean_step} outside 1..={steps}"
        )));
    }
    if data.samples.is_empty() {
        return Err(Error::Contract("empty calibration split".into()));
    }
    if target_mean_step == 1.0 {
        let policy = ExitPolicy { thresholds: vec![0.0; steps] };
        return Ok((policy, 1.0));
    }
    if target_mean_step == steps as f64 {
        let mut thresholds = vec![NEVER_EXIT; steps];
        thresholds[steps - 1] = 0.0;
        let policy = ExitPolicy { thresholds };
        return Ok((policy, steps as f64));
    }
    let confs: Vec<Vec<f64>> = data
        .samples
        .iter()
        .enumerate()
        .map(|(idx, sample)| {
            let mut rng = sample_rng(seed, idx);
            run_trace(params, sample, PolicyMode::Active, &mut rng).confidence
        })
        .collect();
    let (thresholds, mean) = solve_q(&confs, target_mean_step);
    let policy = ExitPolicy { thresholds };
    policy.validate()?;
    Ok((policy, mean))
}

/// Accuracy at the exit step, the mean exit step, and the fraction exiting
/// at each step, all averaged over the given seeds.
#[derive(Clone, Debug)]
pub struct ExitOutcome {
    pub accuracy: f64,
    pub mean_step: f64,
    pub histogram: Vec<f64>,
}

pub fn exit_eval(
    params: &ModelParams,
    data: &Dataset,
    policy: &ExitPolicy,
    seeds: &[u64],
) -> Result<ExitOutcome> {
    check_compat(params, data)?;
    policy.validate()?;
    if policy.thresholds.len() != data.views {
        return Err(Error::Contract(format!(
            "policy covers {} steps but episodes run {}",
            policy.thresholds.len(),
            data.views
        )));
    }
    if seeds.is_empty() {
        return Err(Error::Parameter("at least one evaluation seed required".into()));
    }
    let n = data.samples.len() as f64;
    let s = seeds.len() as f64;
    let mut accuracy = 0.0;
    let mut mean_step = 0.0;
    let mut histogram = vec![0.0; data.views];
    for &seed in seeds {
        let mut hits = 0.0;
        let mut step_sum = 0.0;
        for (idx, sample) in data.samples.iter().enumerate() {
            let mut rng = sample_rng(seed, idx);
            let trace = run_trace(params, sample, PolicyMode::Active, &mut rng);
            let step = policy.exit_step(&trace);
            if trace.correct[step - 1] {
                hits += 1.0;
            }
            step_sum += step as f64;
            histogram[step - 1] += 1.0;
        }
        // Same reduction order as the curve aggregation, so a policy that
        // always exits at step k reports the step-k curve accuracy bit for
        // bit.
        accuracy += hits / n / s;
        mean_step += step_sum / n;
    }
    for h in &mut histogram {
        *h /= n * s;
    }
    Ok(ExitOutcome { accuracy, mean_step: mean_step / s, histogram })
}

/// One point of the accuracy-versus-budget curve.
#[derive(Clone, Debug)]
pub struct ExitSweepPoint {
    pub target: f64,
    pub calibration_mean: f64,
    pub mean_step: f64,
    pub accuracy: f64,
}

/// Calibrates on one split and evaluates on another, once per target.
pub fn exit_sweep(
    params: &ModelParams,
    calibration: &Dataset,
    test: &Dataset,
    targets: &[f64],
    calibration_seed: u64,
    eval_seeds: &[u64],
) -> Result<Vec<ExitSweepPoint>> {
    let mut out = Vec::with_capacity(targets.len());
    for &target in targets {
        let (policy, calibration_mean) =
            calibrate_exit(params, calibration, target, calibration_seed)?;
        let outcome = exit_eval(params, test, &policy, eval_seeds)?;
        out.push(ExitSweepPoint {
            target,
            calibration_mean,
            mean_step: outcome.mean_step,
            accuracy: outcome.accuracy,
        });
    }
    Ok(out)
}
