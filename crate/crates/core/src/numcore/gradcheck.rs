//! Finite-difference verification of tape gradients.

use crate::numcore::{Graph, Tensor, VarId};

/// Relative-error floor: coordinates where both sides are this small compare
/// against the floor instead of each other.
const DENOM_FLOOR: f64 = 1e-8;

/// Compares the tape gradient of `build` against central differences at
/// `params` and returns the maximum relative error over every parameter
/// coordinate: `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
///
/// `build` must construct a scalar loss from the leaf handles it is given and
/// must be deterministic for fixed inputs. A NaN on either side of any
/// comparison is reported as `f64::INFINITY` so callers' tolerance checks
/// fail rather than silently pass.
pub fn grad_check<F>(build: &F, params: &[Tensor], fd_step: f64) -> f64
where
    F: Fn(&mut Graph, &[VarId]) -> VarId,
{
    assert!(fd_step > 0.0, "fd_step must be positive");

    let eval = |tensors: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let leaves: Vec<VarId> = tensors.iter().map(|t| g.leaf(t)).collect();
        let root = build(&mut g, &leaves);
        g.value(root).item()
    };

    let mut g = Graph::new();
    let leaves: Vec<VarId> = params.iter().map(|t| g.leaf(t)).collect();
    let root = build(&mut g, &leaves);
    g.backward(root).expect("grad_check loss must be scalar");
    let analytic: Vec<Tensor> = leaves.iter().map(|l| g.grad_or_zeros(*l)).collect();

    let mut scratch: Vec<Tensor> = params.to_vec();
    let mut worst: f64 = 0.0;
    for (pi, grad) in analytic.iter().enumerate() {
        for ci in 0..grad.len() {
            let original = scratch[pi].data()[ci];

            scratch[pi].data_mut()[ci] = original + fd_step;
            let up = eval(&scratch);
            scratch[pi].data_mut()[ci] = original - fd_step;
            let down = eval(&scratch);
            scratch[pi].data_mut()[ci] = original;

            let numeric = (up - down) / (2.0 * fd_step);
            let a = grad.data()[ci];
            if a.is_nan() || numeric.is_nan() {
                return f64::INFINITY;
            }
            let rel = (a - numeric).abs() / DENOM_FLOOR.max(a.abs() + numeric.abs());
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form_checks_tightly() {
        let build = |g: &mut Graph, leaves: &[VarId]| {
            let sq = g.mul(leaves[0], leaves[0]);
            g.sum(sq)
        };
        let params = [Tensor::vector(vec![0.7, -1.3, 2.1])];
        let err = grad_check(&build, &params, 1e-5);
        assert!(err < 1e-9, "relative error {err}");
    }

    #[test]
    fn composite_activation_chain_checks() {
        // sigmoid(tanh(w . x)) driven to a scalar.
        let x = Tensor::vector(vec![0.4, -0.9, 1.2]);
        let build = move |g: &mut Graph, leaves: &[VarId]| {
            let xc = g.constant(&x);
            let d = g.dot(leaves[0], xc);
            let t = g.tanh(d);
            g.sigmoid(t)
        };
        let params = [Tensor::vector(vec![0.3, 0.8, -0.5])];
        let err = grad_check(&build, &params, 1e-5);
        assert!(err < 1e-7, "relative error {err}");
    }

    #[test]
    fn nan_loss_reports_failure() {
        // exp overflows to infinity and inf - inf is NaN.
        let build = |g: &mut Graph, leaves: &[VarId]| {
            let e = g.exp(leaves[0]);
            let d = g.sub(e, e);
            g.sum(d)
        };
        let params = [Tensor::vector(vec![1000.0])];
        assert_eq!(grad_check(&build, &params, 1e-5), f64::INFINITY);
    }
}
