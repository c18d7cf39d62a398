//! Minimal dense linear algebra with reverse-mode autodiff and Adam.
//! Every trainable component in the crate is built on this module.

pub mod adam;
pub mod gradcheck;
pub mod matrix;
pub mod tape;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use gradcheck::finite_diff_check;
pub use matrix::{Matrix, Matrix64};
pub use tape::{NodeId, Tape};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: lhs {lhs:?} vs rhs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("data length {len} does not match {rows}x{cols}")]
    BadLength {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("matrix entries must be finite")]
    NonFinite,
    #[error("backward() requires a scalar loss node, got shape {shape:?}")]
    NonScalarLoss { shape: (usize, usize) },
    #[error("parameter/gradient count mismatch: {params} params vs {grads} grads")]
    ParamCountMismatch { params: usize, grads: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

/// Plain (untraced) matrix product.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix, NumericsError> {
    matrix::check_matmul(a.shape(), b.shape())?;
    Ok(matrix::matmul64(&a.to64(), &b.to64()).to32())
}

/// Row-wise softmax with per-row max shift.
pub fn row_softmax(m: &Matrix) -> Matrix {
    matrix::row_softmax64(&m.to64()).to32()
}

/// Elementwise activation.
pub fn activation(kind: Activation, m: &Matrix) -> Matrix {
    let mut v = m.to64();
    match kind {
        Activation::Relu => {
            for x in v.data.iter_mut() {
                if *x <= 0.0 {
                    *x = 0.0;
                }
            }
        }
        Activation::Tanh => {
            for x in v.data.iter_mut() {
                *x = x.tanh();
            }
        }
    }
    v.to32()
}

/// Mean of squared elementwise differences, accumulated in f64.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<f64, NumericsError> {
    if pred.shape() != target.shape() {
        return Err(NumericsError::ShapeMismatch {
            op: "mse",
            lhs: pred.shape(),
            rhs: target.shape(),
        });
    }
    Ok(matrix::mse64(&pred.to64(), &target.to64()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: usize, cols: usize, data: &[f32]) -> Matrix {
        Matrix::new(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let i2 = m(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let b = m(2, 2, &[5.0, 6.0, 7.0, 8.0]);
        assert_eq!(matmul(&i2, &b).unwrap(), b);
    }

    #[test]
    fn matmul_hand_case() {
        let a = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = m(2, 1, &[1.0, 1.0]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        let err = matmul(&a, &b).unwrap_err();
        assert_eq!(
            err,
            NumericsError::ShapeMismatch {
                op: "matmul",
                lhs: (2, 3),
                rhs: (2, 3)
            }
        );
    }

    #[test]
    fn softmax_symmetry_and_shift_invariance() {
        let s = row_softmax(&m(1, 2, &[0.0, 0.0]));
        assert_eq!(s.data(), &[0.5, 0.5]);
        let big = row_softmax(&m(1, 2, &[1000.0, 1000.0]));
        assert_eq!(big.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_hand_case() {
        let s = row_softmax(&m(1, 2, &[(2.0f32).ln(), 0.0]));
        assert!((s.get(0, 0) - 2.0 / 3.0).abs() < 1e-6);
        assert!((s.get(0, 1) - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let base = Matrix::randn(3, 5, 1.0, &mut rng);
            let s = row_softmax(&base);
            for r in 0..3 {
                let sum: f64 = s.row(r).iter().map(|&x| x as f64).sum();
                assert!((sum - 1.0).abs() < 1e-6);
            }
            let shift: f32 = rng.gen_range(-5.0..5.0);
            let shifted_data: Vec<f32> = base.data().iter().map(|x| x + shift).collect();
            let shifted = Matrix::new(3, 5, shifted_data).unwrap();
            let s2 = row_softmax(&shifted);
            for (a, b) in s.data().iter().zip(s2.data()) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn activation_cases() {
        assert_eq!(
            activation(Activation::Relu, &m(1, 2, &[-1.0, 2.0])).data(),
            &[0.0, 2.0]
        );
        assert_eq!(activation(Activation::Tanh, &m(1, 1, &[0.0])).data(), &[0.0]);
        assert_eq!(activation(Activation::Relu, &m(1, 1, &[0.0])).data(), &[0.0]);
    }

    #[test]
    fn mse_cases() {
        let p = m(1, 2, &[0.0, 0.0]);
        let t = m(1, 2, &[1.0, 1.0]);
        assert_eq!(mse_loss(&p, &p).unwrap(), 0.0);
        assert_eq!(mse_loss(&p, &t).unwrap(), 1.0);
        let a = m(1, 2, &[1.0, 2.0]);
        let b = m(1, 2, &[3.0, 5.0]);
        assert_eq!(mse_loss(&a, &b).unwrap(), 6.5);
        assert!(mse_loss(&p, &Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn backward_square() {
        // f(w) = w·w with w scalar 3 → grad 6.
        let mut tape = Tape::new();
        let w = tape.leaf(&m(1, 1, &[3.0]));
        let sq = tape.matmul(w, w).unwrap();
        let grads = tape.backward(sq).unwrap();
        assert!((grads[w].get(0, 0) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn backward_constant_and_unreachable() {
        let mut tape = Tape::new();
        let w = tape.leaf(&m(1, 1, &[2.0]));
        let c = tape.leaf(&m(1, 1, &[5.0]));
        let loss = tape.matmul(c, c).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads[w].get(0, 0), 0.0);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let w = tape.leaf(&Matrix::zeros(2, 2));
        assert!(matches!(
            tape.backward(w),
            Err(NumericsError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn adam_zero_grad_is_noop() {
        let mut params = vec![m(1, 2, &[1.0, -2.0])];
        let grads = vec![Matrix64::zeros(1, 2)];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, &AdamHyper::default()).unwrap();
        assert_eq!(params[0].data(), &[1.0, -2.0]);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn adam_first_step_hand_case() {
        // w=1, g=0.5, lr=1e-3: bias-corrected step moves by ~lr.
        let mut params = vec![m(1, 1, &[1.0])];
        let mut g = Matrix64::zeros(1, 1);
        g.data[0] = 0.5;
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &[g], &mut state, &AdamHyper::default()).unwrap();
        assert!((params[0].get(0, 0) - 0.999).abs() < 1e-6);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut params = vec![m(2, 2, &[0.3, -0.7, 1.1, 0.0])];
            let mut g = Matrix64::zeros(2, 2);
            g.data.copy_from_slice(&[0.1, -0.2, 0.05, 0.4]);
            let mut state = AdamState::new(&params);
            for _ in 0..5 {
                adam_step(&mut params, &[g.clone()], &mut state, &AdamHyper::default()).unwrap();
            }
            params[0].data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn gradcheck_linear_model_is_exact() {
        let params = vec![m(1, 3, &[0.2, -0.4, 0.9])];
        let x = m(3, 1, &[1.0, 2.0, 3.0]);
        let err = finite_diff_check(
            |tape, ids| {
                let xid = tape.leaf(&x);
                tape.matmul(ids[0], xid)
            },
            &params,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-8, "linear gradcheck error {err}");
    }

    #[test]
    fn gradcheck_quadratic() {
        let params = vec![m(1, 1, &[0.7])];
        let err = finite_diff_check(
            |tape, ids| tape.matmul(ids[0], ids[0]),
            &params,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "quadratic gradcheck error {err}");
    }

    // Per-primitive gradient check on random inputs in [-1,1], 100 seeds.
    #[test]
    fn gradcheck_primitives_random() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Matrix::randn(2, 3, 0.5, &mut rng);
            let b = Matrix::randn(3, 2, 0.5, &mut rng);
            let bias = Matrix::randn(1, 2, 0.5, &mut rng);
            let target = Matrix::randn(2, 3, 0.5, &mut rng);
            let params = vec![a, b, bias];
            let err = finite_diff_check(
                |tape, ids| {
                    let prod = tape.matmul(ids[0], ids[1])?;
                    let biased = tape.add_bias(prod, ids[2])?;
                    let t = tape.tanh(biased);
                    let r = tape.relu(t);
                    let sm = tape.row_softmax(r);
                    let st = tape.matmul_t(sm, ids[1])?;
                    let sc = tape.scale(st, 0.7);
                    let tgt = tape.leaf(&target);
                    tape.mse(sc, tgt)
                },
                &params,
                1e-4,
            )
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: primitive gradcheck error {err}");
        }
    }
}
