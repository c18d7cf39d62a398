//! Adam optimizer with bias correction. Parameters are stored as f32; the
//! update itself runs in f64 so repeated runs are bit-for-bit identical.

use super::matrix::{Matrix, Matrix64};
use super::NumericsError;

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper {
            lr,
            ..Default::default()
        }
    }
}

/// First/second moment accumulators, one pair per parameter matrix.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Matrix64>,
    v: Vec<Matrix64>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[Matrix]) -> Self {
        let m = params
            .iter()
            .map(|p| Matrix64::zeros(p.rows(), p.cols()))
            .collect::<Vec<_>>();
        AdamState {
            v: m.clone(),
            m,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

pub fn adam_step(
    params: &mut [Matrix],
    grads: &[Matrix64],
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<(), NumericsError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(NumericsError::ParamCountMismatch {
            params: params.len(),
            grads: grads.len(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        debug_assert_eq!(p.shape(), g.shape());
        for r in 0..p.rows() {
            for c in 0..p.cols() {
                let gi = g.get(r, c);
                let mi = &mut m.data[r * p.cols() + c];
                let vi = &mut v.data[r * p.cols() + c];
                *mi = hyper.beta1 * *mi + (1.0 - hyper.beta1) * gi;
                *vi = hyper.beta2 * *vi + (1.0 - hyper.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                let w = p.get(r, c) as f64 - hyper.lr * mhat / (vhat.sqrt() + hyper.eps);
                p.set(r, c, w as f32);
            }
        }
    }
    Ok(())
}
