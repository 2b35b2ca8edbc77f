//! Step-indexed accuracy curves and the three scalar summaries.

use crate::error::{Error, Result};

/// Per-step accuracy averaged over samples, with spread over seeds.
#[derive(Clone, Debug)]
pub struct AccuracyCurve {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub seeds: usize,
}

impl AccuracyCurve {
    /// Aggregates one per-step curve per seed. Standard deviation uses the
    /// n-1 denominator; a single seed reports zero spread.
    pub fn from_seed_curves(curves: &[Vec<f64>]) -> Result<AccuracyCurve> {
        let Some(first) = curves.first() else {
            return Err(Error::Contract("no seed curves to aggregate".into()));
        };
        let steps = first.len();
        if steps == 0 {
            return Err(Error::Contract("empty accuracy curve".into()));
        }
        for c in curves {
            if c.len() != steps {
                return Err(Error::Contract(format!(
                    "seed curves disagree on length: {} vs {steps}",
                    c.len()
                )));
            }
            for a in c {
                if !(0.0..=1.0).contains(a) {
                    return Err(Error::Contract(format!("accuracy {a} outside [0, 1]")));
                }
            }
        }
        let n = curves.len() as f64;
        let mut mean = vec![0.0; steps];
        for c in curves {
            for (m, a) in mean.iter_mut().zip(c) {
                *m += a / n;
            }
        }
        let std = if curves.len() < 2 {
            vec![0.0; steps]
        } else {
            (0..steps)
                .map(|t| {
                    let var = curves
                        .iter()
                        .map(|c| (c[t] - mean[t]).powi(2))
                        .sum::<f64>()
                        / (n - 1.0);
                    var.sqrt()
                })
                .collect()
        };
        Ok(AccuracyCurve { mean, std, seeds: curves.len() })
    }

    pub fn steps(&self) -> usize {
        self.mean.len()
    }
}

/// The early-step emphasis weights: zero at step 1, then halving geometric
/// mass normalized to sum to one.
pub fn default_weights(t: usize) -> Result<Vec<f64>> {
    if t < 2 {
        return Err(Error::Parameter(format!(
            "weights need at least two steps, got {t}"
        )));
    }
    let denom = 1.0 - 2f64.powi(-((t - 1) as i32));
    let mut w = vec![0.0; t];
    for (step, slot) in w.iter_mut().enumerate().skip(1) {
        *slot = 2f64.powi(-(step as i32)) / denom;
    }
    Ok(w)
}

/// The three Table 1 style summaries of one curve.
#[derive(Clone, Copy, Debug)]
pub struct Metrics {
    pub m_acc: f64,
    pub w_m_acc: f64,
    pub step2_acc: f64,
}

pub fn metrics(curve: &AccuracyCurve, weights: &[f64]) -> Result<Metrics> {
    let a = &curve.mean;
    if a.len() != weights.len() {
        return Err(Error::Contract(format!(
            "curve has {} steps but {} weights given",
            a.len(),
            weights.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Contract("curve shorter than two steps".into()));
    }
    let m_acc = a.iter().sum::<f64>() / a.len() as f64;
    let w_m_acc = a.iter().zip(weights).map(|(x, w)| x * w).sum();
    Ok(Metrics { m_acc, w_m_acc, step2_acc: a[1] })
}
