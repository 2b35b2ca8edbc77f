//! Per-view discriminativeness: how well each single view separates the
//! classes, measured by independent small probe classifiers. The headline
//! outputs are the per-(view, class) accuracy matrix, each class's spread
//! between its best and worst view, and whether different classes disagree
//! about which view is best.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::Dataset;
use crate::error::{Error, Result};
use crate::eval::traces::argmax;
use crate::numcore::{cosine_lr, optim_step, Graph, OptimState, Tensor};
use crate::pipeline::SGD_MOMENTUM;

const PROBE_HIDDEN: usize = 32;
const PROBE_EPOCHS: usize = 30;
const PROBE_BATCH: usize = 32;
const PROBE_LR: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct ViewAnalysis {
    /// `matrix[view][class]` is the probe-for-`view` accuracy on `class`.
    pub matrix: Vec<Vec<f64>>,
    /// Per class: best-view accuracy minus worst-view accuracy.
    pub class_gaps: Vec<f64>,
    pub mean_gap: f64,
    /// True when at least two classes disagree on which view serves them
    /// best (ties resolve to the lowest view index).
    pub ranking_inconsistent: bool,
}

struct Probe {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

fn uniform_init(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (cols as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data).expect("probe weight shape")
}

fn probe_logits(p: &Probe, x: &Tensor) -> Tensor {
    let h = p.w1.matvec(x).add(&p.b1).map(f64::tanh);
    p.w2.matvec(&h).add(&p.b2)
}

fn train_probe(train: &Dataset, view: usize, rng: &mut ChaCha8Rng) -> Result<Probe> {
    let mut probe = Probe {
        w1: uniform_init(PROBE_HIDDEN, train.feature_dim, rng),
        b1: Tensor::zeros(&[PROBE_HIDDEN]),
        w2: uniform_init(train.classes, PROBE_HIDDEN, rng),
        b2: Tensor::zeros(&[train.classes]),
    };
    let tensors = [
        probe.w1.clone(),
        probe.b1.clone(),
        probe.w2.clone(),
        probe.b2.clone(),
    ];
    let mut state = OptimState::sgd_momentum(&tensors, SGD_MOMENTUM);
    let n = train.samples.len();
    for epoch in 0..PROBE_EPOCHS {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        for batch in order.chunks(PROBE_BATCH) {
            let mut g = Graph::new();
            let w1 = g.leaf(&probe.w1);
            let b1 = g.leaf(&probe.b1);
            let w2 = g.leaf(&probe.w2);
            let b2 = g.leaf(&probe.b2);
            let mut terms = Vec::with_capacity(batch.len());
            for &i in batch {
                let sample = &train.samples[i];
                let x = g.constant(&sample.views[view]);
                let pre = g.matvec(w1, x);
                let pre = g.add(pre, b1);
                let h = g.tanh(pre);
                let out = g.matvec(w2, h);
                let logits = g.add(out, b2);
                let probs = g.softmax(logits);
                terms.push(g.cross_entropy(probs, sample.label));
            }
            let stacked = g.stack(&terms);
            let loss = g.mean(stacked);
            if !g.value(loss).item().is_finite() {
                return Err(Error::Divergence { stage: 0, epoch });
            }
            g.backward(loss)?;
            let grads = [
                g.grad_or_zeros(w1),
                g.grad_or_zeros(b1),
                g.grad_or_zeros(w2),
                g.grad_or_zeros(b2),
            ];
            let mut params = [
                probe.w1.clone(),
                probe.b1.clone(),
                probe.w2.clone(),
                probe.b2.clone(),
            ];
            let lr = cosine_lr(epoch, PROBE_EPOCHS, PROBE_LR)?;
            optim_step(&mut state, &mut params, &grads, lr)?;
            let [w1_new, b1_new, w2_new, b2_new] = params;
            probe.w1 = w1_new;
            probe.b1 = b1_new;
            probe.w2 = w2_new;
            probe.b2 = b2_new;
        }
    }
    Ok(probe)
}

fn per_class_accuracy(probe: &Probe, test: &Dataset, view: usize) -> Vec<f64> {
    let mut hits = vec![0.0; test.classes];
    let mut counts = vec![0.0; test.classes];
    for sample in &test.samples {
        counts[sample.label] += 1.0;
        let logits = probe_logits(probe, &sample.views[view]);
        if argmax(logits.data()) == sample.label {
            hits[sample.label] += 1.0;
        }
    }
    hits.iter()
        .zip(&counts)
        .map(|(h, c)| if *c > 0.0 { h / c } else { 0.0 })
        .collect()
}

/// Trains one probe per view on the train split and scores each on the test
/// split, per class. Deterministic in the seed.
pub fn per_view_analysis(train: &Dataset, test: &Dataset, seed: u64) -> Result<ViewAnalysis> {
    if train.classes != test.classes
        || train.views != test.views
        || train.feature_dim != test.feature_dim
    {
        return Err(Error::Alignment(
            "train and test splits describe different problems".into(),
        ));
    }
    if train.samples.is_empty() || test.samples.is_empty() {
        return Err(Error::Contract("empty split".into()));
    }
    let mut matrix = Vec::with_capacity(train.views);
    for view in 0..train.views {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(view as u64);
        let probe = train_probe(train, view, &mut rng)?;
        matrix.push(per_class_accuracy(&probe, test, view));
    }
    let classes = train.classes;
    let mut class_gaps = Vec::with_capacity(classes);
    let mut best_views = Vec::with_capacity(classes);
    for c in 0..classes {
        let column: Vec<f64> = matrix.iter().map(|row| row[c]).collect();
        let max = column.iter().cloned().fold(f64::MIN, f64::max);
        let min = column.iter().cloned().fold(f64::MAX, f64::min);
        class_gaps.push(max - min);
        best_views.push(argmax(&column));
    }
    let mean_gap = class_gaps.iter().sum::<f64>() / classes as f64;
    let ranking_inconsistent = best_views.windows(2).any(|w| w[0] != w[1]);
    Ok(ViewAnalysis { matrix, class_gaps, mean_gap, ranking_inconsistent })
}
