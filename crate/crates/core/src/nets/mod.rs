//! Model parameters and forward passes.
//!
//! One parameter bundle drives five heads: a feature extractor (identity or a
//! one-hidden-layer tanh MLP), two GRU aggregators with identical structure
//! but individual weights (`gru_e` feeds the classifier, `gru_s` feeds the
//! selection policy), an affine classifier, an affine actor scoring views,
//! and an affine scalar value head.

mod checkpoint;
mod forward;
mod tape;

pub use checkpoint::{read_model, write_model};
pub use forward::{
    act, actor_logits, actor_query_count, aggregate, classify, extract, gru_step,
    masked_softmax, reset_actor_query_count, value, ModelRunner,
};
pub use tape::{
    register, tape_affine, tape_extract, tape_gru_step, tape_zero_state, AffineVars,
    ExtractorVars, GruVars, ModelVars,
};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Structural hyperparameters. `mlp_width = 0` selects the identity
/// extractor; otherwise features pass through a tanh MLP of that width whose
/// output dimension equals the feature dimension, so the GRU input size never
/// changes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub classes: usize,
    pub views: usize,
    pub mlp_width: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Parameter("model dimensions must be positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::Parameter(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.views < 2 {
            return Err(Error::Parameter(format!(
                "need at least 2 views, got {}",
                self.views
            )));
        }
        Ok(())
    }
}

/// Affine map `y = w x + b` with `w: [out, in]`, `b: [out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineParams {
    pub w: Tensor,
    pub b: Tensor,
}

/// Gated recurrent unit. Convention, fixed across the crate:
/// `z = sigmoid(wz x + uz h + bz)`, `r = sigmoid(wr x + ur h + br)`,
/// `n = tanh(wn x + un (r * h) + bn)`, `h' = (1 - z) * h + z * n`,
/// with a zero initial hidden state.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub wz: Tensor,
    pub uz: Tensor,
    pub bz: Tensor,
    pub wr: Tensor,
    pub ur: Tensor,
    pub br: Tensor,
    pub wn: Tensor,
    pub un: Tensor,
    pub bn: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExtractorParams {
    Identity,
    Mlp { hidden: AffineParams, out: AffineParams },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub extractor: ExtractorParams,
    pub gru_e: GruParams,
    pub gru_s: GruParams,
    pub classifier: AffineParams,
    pub actor: AffineParams,
    pub value_head: AffineParams,
}

/// Named components, used for stage-wise freezing and learning-rate groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Extractor,
    GruE,
    GruS,
    Classifier,
    Actor,
    Value,
}

impl Component {
    pub fn of(tensor_name: &str) -> Component {
        match tensor_name.split('.').next().unwrap_or("") {
            "extractor" => Component::Extractor,
            "gru_e" => Component::GruE,
            "gru_s" => Component::GruS,
            "classifier" => Component::Classifier,
            "actor" => Component::Actor,
            "value" => Component::Value,
            other => panic!("unknown component prefix in tensor name {other:?}"),
        }
    }
}

fn uniform_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    // Fan-in scaled uniform init; biases stay zero.
    let bound = 1.0 / (cols as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data).expect("init data sized to shape")
}

fn affine_init(rng: &mut ChaCha8Rng, out_dim: usize, in_dim: usize) -> AffineParams {
    AffineParams {
        w: uniform_init(rng, out_dim, in_dim),
        b: Tensor::zeros(&[out_dim]),
    }
}

fn gru_init(rng: &mut ChaCha8Rng, hidden: usize, input: usize) -> GruParams {
    GruParams {
        wz: uniform_init(rng, hidden, input),
        uz: uniform_init(rng, hidden, hidden),
        bz: Tensor::zeros(&[hidden]),
        wr: uniform_init(rng, hidden, input),
        ur: uniform_init(rng, hidden, hidden),
        br: Tensor::zeros(&[hidden]),
        wn: uniform_init(rng, hidden, input),
        un: uniform_init(rng, hidden, hidden),
        bn: Tensor::zeros(&[hidden]),
    }
}

impl ModelParams {
    /// Fresh parameters. The draw order is fixed, so a given seed always
    /// produces bit-identical weights.
    pub fn init(config: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let d = config.feature_dim;
        let extractor = if config.mlp_width == 0 {
            ExtractorParams::Identity
        } else {
            ExtractorParams::Mlp {
                hidden: affine_init(rng, config.mlp_width, d),
                out: affine_init(rng, d, config.mlp_width),
            }
        };
        Ok(ModelParams {
            extractor,
            gru_e: gru_init(rng, config.hidden_dim, d),
            gru_s: gru_init(rng, config.hidden_dim, d),
            classifier: affine_init(rng, config.classes, config.hidden_dim),
            actor: affine_init(rng, config.views, config.hidden_dim),
            value_head: affine_init(rng, 1, config.hidden_dim),
            config,
        })
    }

    /// Canonically ordered `(name, tensor)` view of every parameter.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        match &self.extractor {
            ExtractorParams::Identity => {}
            ExtractorParams::Mlp { hidden, out: o } => {
                out.push(("extractor.hidden.w".into(), &hidden.w));
                out.push(("extractor.hidden.b".into(), &hidden.b));
                out.push(("extractor.out.w".into(), &o.w));
                out.push(("extractor.out.b".into(), &o.b));
            }
        }
        for (prefix, gru) in [("gru_e", &self.gru_e), ("gru_s", &self.gru_s)] {
            for (suffix, t) in [
                ("wz", &gru.wz),
                ("uz", &gru.uz),
                ("bz", &gru.bz),
                ("wr", &gru.wr),
                ("ur", &gru.ur),
                ("br", &gru.br),
                ("wn", &gru.wn),
                ("un", &gru.un),
                ("bn", &gru.bn),
            ] {
                out.push((format!("{prefix}.{suffix}"), t));
            }
        }
        out.push(("classifier.w".into(), &self.classifier.w));
        out.push(("classifier.b".into(), &self.classifier.b));
        out.push(("actor.w".into(), &self.actor.w));
        out.push(("actor.b".into(), &self.actor.b));
        out.push(("value.w".into(), &self.value_head.w));
        out.push(("value.b".into(), &self.value_head.b));
        out
    }

    /// Mutable counterpart of [`ModelParams::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        match &mut self.extractor {
            ExtractorParams::Identity => {}
            ExtractorParams::Mlp { hidden, out: o } => {
                out.push(("extractor.hidden.w".into(), &mut hidden.w));
                out.push(("extractor.hidden.b".into(), &mut hidden.b));
                out.push(("extractor.out.w".into(), &mut o.w));
                out.push(("extractor.out.b".into(), &mut o.b));
            }
        }
        for (prefix, gru) in [("gru_e", &mut self.gru_e), ("gru_s", &mut self.gru_s)] {
            for (suffix, t) in [
                ("wz", &mut gru.wz),
                ("uz", &mut gru.uz),
                ("bz", &mut gru.bz),
                ("wr", &mut gru.wr),
                ("ur", &mut gru.ur),
                ("br", &mut gru.br),
                ("wn", &mut gru.wn),
                ("un", &mut gru.un),
                ("bn", &mut gru.bn),
            ] {
                out.push((format!("{prefix}.{suffix}"), t));
            }
        }
        out.push(("classifier.w".into(), &mut self.classifier.w));
        out.push(("classifier.b".into(), &mut self.classifier.b));
        out.push(("actor.w".into(), &mut self.actor.w));
        out.push(("actor.b".into(), &mut self.actor.b));
        out.push(("value.w".into(), &mut self.value_head.w));
        out.push(("value.b".into(), &mut self.value_head.b));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn cfg() -> ModelConfig {
        ModelConfig { feature_dim: 5, hidden_dim: 7, classes: 3, views: 4, mlp_width: 6 }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = ModelParams::init(cfg(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = ModelParams::init(cfg(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let c = ModelParams::init(cfg(), &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_respects_fan_in_bounds_and_zero_biases() {
        let p = ModelParams::init(cfg(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for (name, t) in p.tensors() {
            if name.ends_with(".b") || name.ends_with("bz") || name.ends_with("br") || name.ends_with("bn") {
                assert!(t.data().iter().all(|x| *x == 0.0), "{name} not zero");
            } else {
                let fan_in = t.cols() as f64;
                let bound = 1.0 / fan_in.sqrt();
                assert!(
                    t.data().iter().all(|x| x.abs() <= bound),
                    "{name} exceeds fan-in bound"
                );
            }
        }
    }

    #[test]
    fn tensor_listing_is_ordered_and_complete() {
        let p = ModelParams::init(cfg(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), 4 + 18 + 6);
        assert_eq!(names[0], "extractor.hidden.w");
        assert_eq!(names[4], "gru_e.wz");
        assert_eq!(names[13], "gru_s.wz");
        assert_eq!(names[names.len() - 1], "value.b");
        // Mutable listing must agree.
        let mut p2 = p.clone();
        let mut_names: Vec<String> = p2.tensors_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, mut_names);
    }

    #[test]
    fn identity_extractor_has_no_tensors() {
        let mut c = cfg();
        c.mlp_width = 0;
        let p = ModelParams::init(c, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(matches!(p.extractor, ExtractorParams::Identity));
        assert_eq!(p.tensors().len(), 18 + 6);
    }

    #[test]
    fn component_prefixes_resolve() {
        assert_eq!(Component::of("gru_s.un"), Component::GruS);
        assert_eq!(Component::of("extractor.out.w"), Component::Extractor);
        assert_eq!(Component::of("value.b"), Component::Value);
    }

    #[test]
    fn config_validation_rejects_degenerate_sizes() {
        let mut c = cfg();
        c.views = 1;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.classes = 1;
        assert!(c.validate().is_err());
    }
}
