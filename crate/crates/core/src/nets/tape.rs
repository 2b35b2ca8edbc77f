//! Tape-side mirrors of the forward passes. Training builds losses through
//! these so gradients reach every registered parameter. Arithmetic is
//! associated exactly as in [`super::forward`], which makes the two paths
//! bit-identical and lets tests compare them with equality rather than
//! tolerances.

use crate::nets::{ExtractorParams, ModelParams};
use crate::numcore::{Graph, Tensor, VarId};

#[derive(Clone, Copy, Debug)]
pub struct AffineVars {
    pub w: VarId,
    pub b: VarId,
}

#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub wz: VarId,
    pub uz: VarId,
    pub bz: VarId,
    pub wr: VarId,
    pub ur: VarId,
    pub br: VarId,
    pub wn: VarId,
    pub un: VarId,
    pub bn: VarId,
}

#[derive(Clone, Copy, Debug)]
pub enum ExtractorVars {
    Identity,
    Mlp { hidden: AffineVars, out: AffineVars },
}

/// Leaf handles for every model parameter on one tape.
#[derive(Clone, Copy, Debug)]
pub struct ModelVars {
    pub extractor: ExtractorVars,
    pub gru_e: GruVars,
    pub gru_s: GruVars,
    pub classifier: AffineVars,
    pub actor: AffineVars,
    pub value_head: AffineVars,
}

fn take_affine(it: &mut impl Iterator<Item = VarId>) -> AffineVars {
    AffineVars { w: it.next().unwrap(), b: it.next().unwrap() }
}

fn take_gru(it: &mut impl Iterator<Item = VarId>) -> GruVars {
    GruVars {
        wz: it.next().unwrap(),
        uz: it.next().unwrap(),
        bz: it.next().unwrap(),
        wr: it.next().unwrap(),
        ur: it.next().unwrap(),
        br: it.next().unwrap(),
        wn: it.next().unwrap(),
        un: it.next().unwrap(),
        bn: it.next().unwrap(),
    }
}

impl ModelVars {
    /// Rebuilds the structured view from leaves laid out in
    /// [`ModelParams::tensors`] order.
    pub fn from_ordered(vars: &[VarId], mlp: bool) -> ModelVars {
        let expect = if mlp { 28 } else { 24 };
        assert_eq!(vars.len(), expect, "expected {expect} parameter leaves");
        let mut it = vars.iter().copied();
        let extractor = if mlp {
            ExtractorVars::Mlp { hidden: take_affine(&mut it), out: take_affine(&mut it) }
        } else {
            ExtractorVars::Identity
        };
        ModelVars {
            extractor,
            gru_e: take_gru(&mut it),
            gru_s: take_gru(&mut it),
            classifier: take_affine(&mut it),
            actor: take_affine(&mut it),
            value_head: take_affine(&mut it),
        }
    }

    /// Leaf handles in [`ModelParams::tensors`] order, for zipping against
    /// gradients or parameter slots.
    pub fn ordered(&self) -> Vec<VarId> {
        let mut out = Vec::new();
        match self.extractor {
            ExtractorVars::Identity => {}
            ExtractorVars::Mlp { hidden, out: o } => {
                out.extend([hidden.w, hidden.b, o.w, o.b]);
            }
        }
        for gru in [&self.gru_e, &self.gru_s] {
            out.extend([
                gru.wz, gru.uz, gru.bz, gru.wr, gru.ur, gru.br, gru.wn, gru.un, gru.bn,
            ]);
        }
        out.extend([
            self.classifier.w,
            self.classifier.b,
            self.actor.w,
            self.actor.b,
            self.value_head.w,
            self.value_head.b,
        ]);
        out
    }
}

/// Registers every parameter tensor as a leaf on `g`.
pub fn register(g: &mut Graph, params: &ModelParams) -> ModelVars {
    let vars: Vec<VarId> = params.tensors().iter().map(|(_, t)| g.leaf(t)).collect();
    ModelVars::from_ordered(&vars, matches!(params.extractor, ExtractorParams::Mlp { .. }))
}

pub fn tape_affine(g: &mut Graph, p: &AffineVars, x: VarId) -> VarId {
    let wx = g.matvec(p.w, x);
    g.add(wx, p.b)
}

pub fn tape_extract(g: &mut Graph, e: &ExtractorVars, x: VarId) -> VarId {
    match e {
        ExtractorVars::Identity => x,
        ExtractorVars::Mlp { hidden, out } => {
            let pre = tape_affine(g, hidden, x);
            let h = g.tanh(pre);
            tape_affine(g, out, h)
        }
    }
}

fn gate_preact(g: &mut Graph, w: VarId, u: VarId, b: VarId, x: VarId, state: VarId) -> VarId {
    let wx = g.matvec(w, x);
    let uh = g.matvec(u, state);
    let s = g.add(wx, uh);
    g.add(s, b)
}

/// One GRU update, `h' = h + z * (n - h)`, matching [`super::gru_step`].
pub fn tape_gru_step(g: &mut Graph, p: &GruVars, h: VarId, x: VarId) -> VarId {
    let z_pre = gate_preact(g, p.wz, p.uz, p.bz, x, h);
    let z = g.sigmoid(z_pre);
    let r_pre = gate_preact(g, p.wr, p.ur, p.br, x, h);
    let r = g.sigmoid(r_pre);
    let rh = g.mul(r, h);
    let n_pre = gate_preact(g, p.wn, p.un, p.bn, x, rh);
    let n = g.tanh(n_pre);
    let diff = g.sub(n, h);
    let delta = g.mul(z, diff);
    g.add(h, delta)
}

/// Starting state for either aggregator on a tape.
pub fn tape_zero_state(g: &mut Graph, hidden_dim: usize) -> VarId {
    g.constant(&Tensor::zeros(&[hidden_dim]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{act, classify, extract, gru_step, value, ModelConfig};
    use crate::numcore::grad_check;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_params(seed: u64, mlp_width: usize) -> ModelParams {
        let cfg = ModelConfig {
            feature_dim: 3,
            hidden_dim: 4,
            classes: 3,
            views: 4,
            mlp_width,
        };
        ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
        Tensor::vector((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn bits_equal(a: &Tensor, b: &Tensor) -> bool {
        a.shape() == b.shape()
            && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
    }

    #[test]
    fn registered_leaves_follow_canonical_order() {
        let p = test_params(1, 5);
        let mut g = Graph::new();
        let vars = register(&mut g, &p);
        let ordered = vars.ordered();
        let named = p.tensors();
        assert_eq!(ordered.len(), named.len());
        for (v, (_, t)) in ordered.iter().zip(&named) {
            assert!(bits_equal(g.value(*v), t));
        }
    }

    #[test]
    fn tape_gru_step_is_bit_identical_to_plain() {
        for seed in 0..10 {
            let p = test_params(seed, 0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let h = rand_vec(&mut rng, 4);
            let x = rand_vec(&mut rng, 3);
            let plain = gru_step(&p.gru_e, &h, &x);
            let mut g = Graph::new();
            let vars = register(&mut g, &p);
            let hv = g.constant(&h);
            let xv = g.constant(&x);
            let out = tape_gru_step(&mut g, &vars.gru_e, hv, xv);
            assert!(bits_equal(g.value(out), &plain), "seed {seed}");
        }
    }

    #[test]
    fn tape_extract_is_bit_identical_to_plain() {
        for seed in 0..10 {
            let p = test_params(seed, 5);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 200);
            let x = rand_vec(&mut rng, 3);
            let plain = extract(&p, &x);
            let mut g = Graph::new();
            let vars = register(&mut g, &p);
            let xv = g.constant(&x);
            let out = tape_extract(&mut g, &vars.extractor, xv);
            assert!(bits_equal(g.value(out), &plain), "seed {seed}");
        }
    }

    #[test]
    fn episode_fold_matches_plain_classify() {
        let p = test_params(3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(300);
        let views: Vec<Tensor> = (0..3).map(|_| rand_vec(&mut rng, 3)).collect();

        let mut g = Graph::new();
        let vars = register(&mut g, &p);
        let mut h = tape_zero_state(&mut g, 4);
        let mut plain_h = Tensor::zeros(&[4]);
        for v in &views {
            let xv = g.constant(v);
            let f = tape_extract(&mut g, &vars.extractor, xv);
            h = tape_gru_step(&mut g, &vars.gru_e, h, f);
            plain_h = gru_step(&p.gru_e, &plain_h, &extract(&p, v));
        }
        let logits = tape_affine(&mut g, &vars.classifier, h);
        let probs = g.softmax(logits);
        let (plain_logits, plain_probs) = classify(&p, &plain_h);
        assert!(bits_equal(g.value(logits), &plain_logits));
        assert!(bits_equal(g.value(probs), &plain_probs));
    }

    #[test]
    fn actor_and_value_heads_agree_with_plain_path() {
        let p = test_params(4, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(400);
        let s = rand_vec(&mut rng, 4);
        let seen = vec![false, true, false, false];

        let mut g = Graph::new();
        let vars = register(&mut g, &p);
        let sv = g.constant(&s);
        let logits = tape_affine(&mut g, &vars.actor, sv);
        let lp = g.masked_log_prob(logits, &seen, 2);
        let dist = act(&p, &s, &seen);
        assert!((g.value(lp).item().exp() - dist.data()[2]).abs() < 1e-12);

        let v = tape_affine(&mut g, &vars.value_head, sv);
        assert_eq!(g.value(v).data()[0].to_bits(), value(&p, &s).to_bits());
    }

    #[test]
    fn whole_model_gradient_passes_central_differences() {
        // Prefix losses at every step, as in training. They also give each
        // recurrent weight a shallow gradient path, keeping every coordinate
        // well above finite-difference noise.
        let p = test_params(7, 5);
        let tensors: Vec<Tensor> = p.tensors().into_iter().map(|(_, t)| t.clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let views: Vec<Tensor> = (0..3).map(|_| rand_vec(&mut rng, 3)).collect();
        let build = |g: &mut Graph, vars: &[VarId]| {
            let mv = ModelVars::from_ordered(vars, true);
            let mut h = tape_zero_state(g, 4);
            let mut terms = Vec::new();
            for v in &views {
                let xv = g.constant(v);
                let f = tape_extract(g, &mv.extractor, xv);
                h = tape_gru_step(g, &mv.gru_e, h, f);
                let logits = tape_affine(g, &mv.classifier, h);
                let probs = g.softmax(logits);
                terms.push(g.cross_entropy(probs, 1));
            }
            let stacked = g.stack(&terms);
            g.mean(stacked)
        };
        let err = grad_check(&build, &tensors, 1e-5);
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn from_ordered_round_trips_through_ordered() {
        let p = test_params(2, 5);
        let mut g = Graph::new();
        let vars = register(&mut g, &p);
        let rebuilt = ModelVars::from_ordered(&vars.ordered(), true);
        assert_eq!(vars.ordered(), rebuilt.ordered());
    }
}
