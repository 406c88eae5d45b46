//! Central finite-difference verification for analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::{GradMap, NdError, Tensor};

/// A named collection of trainable tensors. Implementations must visit
/// tensors in a fixed order.
pub trait Parameters {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));

    fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(&mut |name, _| names.push(name.to_string()));
        names
    }
}

fn add_at<P: Parameters>(params: &mut P, name: &str, idx: usize, delta: f64) {
    params.visit_mut(&mut |n, t| {
        if n == name {
            t.data_mut()[idx] += delta;
        }
    });
}

/// Compare the analytic gradient of `loss_fn` against central finite
/// differences on up to `samples_per_tensor` coordinates of each tensor.
/// Returns the maximum relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<P, F, E>(
    params: &P,
    loss_fn: F,
    eps: f64,
    samples_per_tensor: usize,
    seed: u64,
) -> Result<f64, E>
where
    P: Parameters + Clone,
    F: Fn(&P) -> Result<(f64, GradMap), E>,
    E: From<NdError>,
{
    if eps <= 0.0 {
        return Err(NdError::Contract(format!("finite_diff_check: eps must be positive, got {eps}")).into());
    }
    let (base_loss, grads) = loss_fn(params)?;
    if !base_loss.is_finite() {
        return Err(NdError::NonFinite("loss".into()).into());
    }

    let mut sizes = Vec::new();
    params.visit(&mut |name, t| sizes.push((name.to_string(), t.len())));

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut scratch = params.clone();
    for (name, len) in sizes {
        let take = samples_per_tensor.min(len);
        let coords = sample(&mut rng, len, take);
        for idx in coords {
            add_at(&mut scratch, &name, idx, eps);
            let (plus, _) = loss_fn(&scratch)?;
            add_at(&mut scratch, &name, idx, -2.0 * eps);
            let (minus, _) = loss_fn(&scratch)?;
            add_at(&mut scratch, &name, idx, eps);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(NdError::NonFinite(format!("perturbed loss at {name}[{idx}]")).into());
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads.get(&name).map_or(0.0, |g| g.data()[idx]);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndmath::Graph;

    #[derive(Clone)]
    struct OneTensor {
        x: Tensor,
    }

    impl Parameters for OneTensor {
        fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
            f("x", &self.x);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
            f("x", &mut self.x);
        }
    }

    fn square_loss(p: &OneTensor) -> Result<(f64, GradMap), NdError> {
        let mut g = Graph::new();
        let x = g.param("x", &p.x);
        let sq = g.mul(x, x)?;
        let loss = g.sum(sq);
        let val = g.value(loss).item();
        Ok((val, g.backward(loss)?))
    }

    #[test]
    fn quadratic_at_three() {
        let p = OneTensor {
            x: Tensor::from_vec(vec![3.0]).with_grad(),
        };
        // analytic 6, numeric ~6
        let (_, grads) = square_loss(&p).unwrap();
        assert!((grads["x"].data()[0] - 6.0).abs() < 1e-12);
        let worst: f64 = finite_diff_check(&p, square_loss, 1e-5, 4, 1).unwrap();
        assert!(worst < 1e-6, "rel err {worst}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let p = OneTensor {
            x: Tensor::from_vec(vec![1.0, -2.0]).with_grad(),
        };
        let constant = |p: &OneTensor| -> Result<(f64, GradMap), NdError> {
            let mut g = Graph::new();
            let x = g.param("x", &p.x);
            let z = g.affine(x, 0.0, 4.0);
            let loss = g.sum(z);
            // halve so the value stays scalar-checkable
            let val = g.value(loss).item();
            Ok((val, g.backward(loss)?))
        };
        let worst = finite_diff_check(&p, constant, 1e-5, 2, 1).unwrap();
        assert_eq!(worst, 0.0);
    }

    #[test]
    fn rejects_non_positive_eps() {
        let p = OneTensor {
            x: Tensor::from_vec(vec![1.0]).with_grad(),
        };
        let err = finite_diff_check(&p, square_loss, 0.0, 1, 1).unwrap_err();
        assert!(matches!(err, NdError::Contract(_)));
    }

    #[test]
    fn flags_non_finite_loss() {
        let p = OneTensor {
            x: Tensor::from_vec(vec![1.0]).with_grad(),
        };
        let bad = |_: &OneTensor| -> Result<(f64, GradMap), NdError> {
            Ok((f64::NAN, GradMap::new()))
        };
        let err = finite_diff_check(&p, bad, 1e-5, 1, 1).unwrap_err();
        assert!(matches!(err, NdError::NonFinite(_)));
    }
}
