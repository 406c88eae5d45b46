//! Dense-tensor numeric core with reverse-mode automatic differentiation.
//!
//! Everything is 64-bit floats in row-major flat storage: the models here
//! are desk-scale and gradient checking needs the precision. There is no
//! broadcasting beyond bias-vector addition, which keeps every gradient
//! rule short enough to audit by eye.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{finite_diff_check, Parameters};
pub use graph::{GradMap, Graph, NodeId, DROP_SLOT};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NdError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} does not describe a buffer of length {len}")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("softmax mask has no enabled entries")]
    DegenerateMask,
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("{0}")]
    Contract(String),
}

/// Graph-free elementwise and matrix helpers, sharing the kernels the
/// tape uses.
pub mod ops {
    use super::{graph, NdError, Tensor};

    pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NdError> {
        graph::matmul_value(a, b)
    }

    pub fn softmax_masked(logits: &Tensor, mask: &[bool]) -> Result<Tensor, NdError> {
        graph::softmax_masked_value(logits, mask)
    }

    pub fn sigmoid(x: &Tensor) -> Tensor {
        let data = x.data().iter().map(|&v| graph::sigmoid_scalar(v)).collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    /// Naive triple-loop product, independent of the tape kernel.
    fn matmul_oracle(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for kk in 0..k {
                    acc += a.data()[i * k + kk] * b.data()[kk * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap();
        let c = ops::matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[3.0, 4.0]);
    }

    #[test]
    fn matmul_row_by_column() {
        let a = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap();
        let c = ops::matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let a = Tensor::rand_uniform(&[5, 7], -1.0, 1.0, &mut rng);
        let b = Tensor::rand_uniform(&[7, 3], -1.0, 1.0, &mut rng);
        let c = ops::matmul(&a, &b).unwrap();
        let want = matmul_oracle(&a, &b);
        for (got, want) in c.data().iter().zip(&want) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap();
        let b = Tensor::new(vec![2, 2], vec![0.0; 4]).unwrap();
        let err = ops::matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn softmax_uniform_logits() {
        let t = Tensor::from_vec(vec![0.0, 0.0, 0.0]);
        let s = ops::softmax_masked(&t, &[true, true, true]).unwrap();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_single_enabled_entry() {
        let t = Tensor::from_vec(vec![5.0, 0.0]);
        let s = ops::softmax_masked(&t, &[true, false]).unwrap();
        assert_eq!(s.data(), &[1.0, 0.0]);
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let t = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        let s = ops::softmax_masked(&t, &[true, true, true]).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (got, x) in s.data().iter().zip([1.0f64, 2.0, 3.0]) {
            assert!((got - x.exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_all_false_mask_is_degenerate() {
        let t = Tensor::from_vec(vec![1.0, 2.0]);
        let err = ops::softmax_masked(&t, &[false, false]).unwrap_err();
        assert!(matches!(err, NdError::DegenerateMask));
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let t = Tensor::from_vec(vec![1000.0, 999.0]);
        let s = ops::softmax_masked(&t, &[true, true]).unwrap();
        assert!(s.data().iter().all(|v| v.is_finite()));
        assert!((s.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sigmoid_basics() {
        let s = ops::sigmoid(&Tensor::from_vec(vec![0.0]));
        assert_eq!(s.data()[0], 0.5);
        // symmetry: sigma(x) + sigma(-x) = 1
        let plus = ops::sigmoid(&Tensor::from_vec(vec![1.7]));
        let minus = ops::sigmoid(&Tensor::from_vec(vec![-1.7]));
        assert!((plus.data()[0] + minus.data()[0] - 1.0).abs() < 1e-15);
        // direct formula at x=2
        let two = ops::sigmoid(&Tensor::from_vec(vec![2.0]));
        assert!((two.data()[0] - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-12);
        assert!(two.data()[0] > 0.0 && two.data()[0] < 1.0);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut g = Graph::new();
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 3.0, 4.0, -1.0])
            .unwrap()
            .with_grad();
        let xid = g.param("x", &x);
        let loss = g.sum(xid);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads["x"].data(), &[1.0; 6]);
    }

    #[test]
    fn backward_sigmoid_dot_at_zero_weights() {
        // loss = sigma(w . x) with w = 0 gives dw = 0.25 * x
        let mut g = Graph::new();
        let w = Tensor::from_vec(vec![0.0, 0.0, 0.0]).with_grad();
        let x = Tensor::from_vec(vec![1.0, -2.0, 3.0]);
        let wid = g.param("w", &w);
        let xid = g.leaf(&x);
        let d = g.dot(wid, xid).unwrap();
        let loss = g.sigmoid(d);
        let grads = g.backward(loss).unwrap();
        for (got, xv) in grads["w"].data().iter().zip(x.data()) {
            assert!((got - 0.25 * xv).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = Tensor::from_vec(vec![1.0, 2.0]).with_grad();
        let xid = g.param("x", &x);
        let err = g.backward(xid).unwrap_err();
        assert!(matches!(err, NdError::NonScalarLoss { .. }));
    }

    #[test]
    fn backward_is_deterministic() {
        let build = || {
            let mut g = Graph::new();
            let w = Tensor::new(vec![3, 3], (0..9).map(|i| (i as f64) * 0.1 - 0.4).collect())
                .unwrap()
                .with_grad();
            let x = Tensor::from_vec(vec![0.3, -0.7, 1.1]);
            let wid = g.param("w", &w);
            let xid = g.leaf(&x);
            let h = g.matmul(wid, xid).unwrap();
            let s = g.sigmoid(h);
            let loss = g.sum(s);
            g.backward(loss).unwrap()
        };
        let g1 = build();
        let g2 = build();
        for (a, b) in g1["w"].data().iter().zip(g2["w"].data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn gather_scatter_roundtrip_gradients() {
        let mut g = Graph::new();
        let m = Tensor::new(vec![4, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0])
            .unwrap()
            .with_grad();
        let mid = g.param("m", &m);
        let picked = g.gather_rows(mid, &[1, 1, 3]).unwrap();
        let loss = g.sum(picked);
        let grads = g.backward(loss).unwrap();
        // row 1 gathered twice, row 3 once
        assert_eq!(
            grads["m"].data(),
            &[0.0, 0.0, 2.0, 2.0, 0.0, 0.0, 1.0, 1.0]
        );
    }

    #[test]
    fn scatter_add_accumulates_and_drops() {
        let mut g = Graph::new();
        let v = Tensor::from_vec(vec![0.6, 0.3, 0.1]).with_grad();
        let vid = g.param("v", &v);
        let out = g.scatter_add(vid, &[0, 0, DROP_SLOT], 2).unwrap();
        assert_eq!(g.value(out).data(), &[0.6 + 0.3, 0.0]);
        let s = g.sum(out);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads["v"].data(), &[1.0, 1.0, 0.0]);
    }

    fn finite(mut f: impl FnMut(f64) -> f64, x: f64, eps: f64) -> f64 {
        (f(x + eps) - f(x - eps)) / (2.0 * eps)
    }

    #[test]
    fn composite_graph_matches_central_differences() {
        // loss = sum(softmax(tanh(W x) )) .. pick(0) through several ops
        let w0 = vec![0.2, -0.1, 0.4, 0.7, -0.3, 0.05];
        let x = Tensor::from_vec(vec![0.5, -1.0]);
        let eval = |wdata: &[f64]| -> f64 {
            let mut g = Graph::new();
            let w = Tensor::new(vec![3, 2], wdata.to_vec()).unwrap().with_grad();
            let wid = g.param("w", &w);
            let xid = g.leaf(&x);
            let h = g.matmul(wid, xid).unwrap();
            let t = g.tanh(h);
            let sm = g.softmax_masked(t, &[true, true, true]).unwrap();
            let p = g.pick(sm, 0).unwrap();
            let l = g.ln_clamped(p, 1e-12);
            g.value(l).item()
        };
        // analytic
        let mut g = Graph::new();
        let w = Tensor::new(vec![3, 2], w0.clone()).unwrap().with_grad();
        let wid = g.param("w", &w);
        let xid = g.leaf(&x);
        let h = g.matmul(wid, xid).unwrap();
        let t = g.tanh(h);
        let sm = g.softmax_masked(t, &[true, true, true]).unwrap();
        let p = g.pick(sm, 0).unwrap();
        let l = g.ln_clamped(p, 1e-12);
        let grads = g.backward(l).unwrap();
        for i in 0..w0.len() {
            let num = finite(
                |v| {
                    let mut wd = w0.clone();
                    wd[i] = v;
                    eval(&wd)
                },
                w0[i],
                1e-6,
            );
            let ana = grads["w"].data()[i];
            let denom = ana.abs().max(num.abs()).max(1e-8);
            assert!(
                ((ana - num) / denom).abs() < 1e-6,
                "coord {i}: analytic {ana} vs numeric {num}"
            );
        }
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(lo in proptest::collection::vec(-30.0f64..30.0, 1..24),
                               seed in 0u64..1000) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mask: Vec<bool> = lo.iter().map(|_| rng.random_range(0.0..1.0) < 0.7).collect();
            let t = Tensor::from_vec(lo.clone());
            match ops::softmax_masked(&t, &mask) {
                Ok(s) => {
                    prop_assert!((s.data().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                    for (v, &m) in s.data().iter().zip(&mask) {
                        if !m { prop_assert_eq!(*v, 0.0); }
                    }
                }
                Err(NdError::DegenerateMask) => prop_assert!(mask.iter().all(|&m| !m)),
                Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
            }
        }

        #[test]
        fn matmul_matches_oracle_on_random_shapes(m in 1usize..6, k in 1usize..6, n in 1usize..6, seed in 0u64..100) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let a = Tensor::rand_uniform(&[m, k], -2.0, 2.0, &mut rng);
            let b = Tensor::rand_uniform(&[k, n], -2.0, 2.0, &mut rng);
            let c = ops::matmul(&a, &b).unwrap();
            let want = matmul_oracle(&a, &b);
            for (got, want) in c.data().iter().zip(&want) {
                prop_assert!((got - want).abs() < 1e-12);
            }
        }
    }
}
