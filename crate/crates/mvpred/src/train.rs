//! Shared minibatch training loop: seeded shuffling, gradient accumulation,
//! Adam updates and early stopping on validation MSE.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::{adam_step, AdamHyper, AdamState, Matrix, Matrix64, NodeId, Tape};

#[derive(Clone, Copy, Debug)]
pub struct LoopConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Early-stop patience; ignored when there is no validation closure.
    pub patience: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: Vec<Matrix>,
    /// Mean training loss per epoch.
    pub train_history: Vec<f64>,
    /// Validation MSE per epoch (empty when no validation set).
    pub val_history: Vec<f64>,
    pub best_epoch: usize,
}

/// Runs Adam over per-sample loss graphs.
///
/// `build_loss` constructs the full loss graph for one sample index on a
/// fresh tape, with the parameter leaves provided in order. The epoch RNG is
/// passed in so callers can draw per-epoch randomness (e.g. modality masks)
/// deterministically. `val_mse` evaluates candidate parameters; `None`
/// disables early stopping and trains to the fixed epoch count.
pub fn train_loop<F, V>(
    mut params: Vec<Matrix>,
    n_samples: usize,
    build_loss: F,
    val_mse: Option<V>,
    cfg: &LoopConfig,
) -> Result<TrainOutcome>
where
    F: Fn(&mut Tape, &[NodeId], usize, &mut ChaCha8Rng) -> Result<NodeId>,
    V: Fn(&[Matrix]) -> Result<f64>,
{
    let mut state = AdamState::new(&params);
    let hyper = AdamHyper::with_lr(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut train_history = Vec::with_capacity(cfg.epochs);
    let mut val_history = Vec::new();
    let mut best: Option<(f64, usize, Vec<Matrix>)> = None;

    let mut order: Vec<usize> = (0..n_samples).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Option<Vec<Matrix64>> = None;
            for &idx in batch {
                let mut tape = Tape::new();
                let ids: Vec<NodeId> = params.iter().map(|p| tape.leaf(p)).collect();
                let loss = build_loss(&mut tape, &ids, idx, &mut rng)?;
                epoch_loss += tape.scalar(loss);
                let grads = tape.backward(loss)?;
                match &mut acc {
                    None => acc = Some(ids.iter().map(|&id| grads[id].clone()).collect()),
                    Some(acc) => {
                        for (a, &id) in acc.iter_mut().zip(&ids) {
                            a.add_assign(&grads[id]);
                        }
                    }
                }
            }
            if let Some(mut acc) = acc {
                let inv = 1.0 / batch.len() as f64;
                for g in acc.iter_mut() {
                    g.scale_assign(inv);
                }
                adam_step(&mut params, &acc, &mut state, &hyper)?;
            }
        }
        train_history.push(epoch_loss / n_samples.max(1) as f64);

        if let Some(val) = &val_mse {
            let v = val(&params)?;
            val_history.push(v);
            let improved = best.as_ref().map_or(true, |(b, _, _)| v < *b);
            if improved {
                best = Some((v, epoch, params.clone()));
            } else if epoch - best.as_ref().unwrap().1 >= cfg.patience {
                break;
            }
        }
    }

    let (params, best_epoch) = match best {
        Some((_, e, p)) => (p, e),
        None => {
            let last = train_history.len().saturating_sub(1);
            (params, last)
        }
    };
    Ok(TrainOutcome {
        params,
        train_history,
        val_history,
        best_epoch,
    })
}
