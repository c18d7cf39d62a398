//! Metadata-capture branch: random modality masking plus semi-supervised
//! training. The resulting model predicts popularity from any partial
//! modality subset and reconstructs missing modality embeddings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::dataset::{TargetTransform, VideoRecord};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, NodeId, Tape};
use crate::runtime::par_map;
use crate::train::{train_loop, LoopConfig, TrainOutcome};

const N_PARAMS: usize = 21;

/// Per-modality visibility. Already-missing modalities count as masked.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskPattern {
    pub visible: [bool; 3],
}

impl MaskPattern {
    pub fn all_visible() -> Self {
        MaskPattern {
            visible: [true; 3],
        }
    }

    pub fn n_visible(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }
}

/// Independently masks each available modality with probability `p`; if all
/// would end up masked, one uniformly-chosen available modality is unmasked.
pub fn mask_modalities(
    record: &VideoRecord,
    p: f64,
    rng: &mut ChaCha8Rng,
) -> Result<MaskPattern> {
    let avail = record.availability();
    if !avail.iter().any(|&a| a) {
        return Err(Error::usage(format!(
            "record '{}' has no available modality to mask",
            record.video_id
        )));
    }
    let mut visible = [false; 3];
    for m in 0..3 {
        if avail[m] {
            visible[m] = rng.gen::<f64>() >= p;
        }
    }
    if !visible.iter().any(|&v| v) {
        let candidates: Vec<usize> = (0..3).filter(|&m| avail[m]).collect();
        let pick = candidates[rng.gen_range(0..candidates.len())];
        visible[pick] = true;
    }
    Ok(MaskPattern { visible })
}

/// Completion branch parameters; matrix order is fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct CompletionParams {
    /// Per-modality encoders d_m → d (weight + bias).
    pub enc_w: [Matrix; 3],
    pub enc_b: [Matrix; 3],
    /// Learned mask tokens, one per modality.
    pub mask_tok: [Matrix; 3],
    /// Fusion layer d → d with tanh.
    pub w_f: Matrix,
    pub b_f: Matrix,
    /// Per-modality reconstruction decoders d → d_m.
    pub dec_w: [Matrix; 3],
    pub dec_b: [Matrix; 3],
    /// Prediction head d → h → 1.
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub model_dim: usize,
    pub target_mean: f32,
    pub target_std: f32,
}

fn xavier(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let std = (2.0 / (rows + cols) as f32).sqrt();
    Matrix::randn(rows, cols, std, rng)
}

impl CompletionParams {
    pub fn init(dims: [usize; 3], d: usize, h: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CompletionParams {
            enc_w: [
                xavier(dims[0], d, &mut rng),
                xavier(dims[1], d, &mut rng),
                xavier(dims[2], d, &mut rng),
            ],
            enc_b: [Matrix::zeros(1, d), Matrix::zeros(1, d), Matrix::zeros(1, d)],
            mask_tok: [
                Matrix::randn(1, d, 0.1, &mut rng),
                Matrix::randn(1, d, 0.1, &mut rng),
                Matrix::randn(1, d, 0.1, &mut rng),
            ],
            w_f: xavier(d, d, &mut rng),
            b_f: Matrix::zeros(1, d),
            dec_w: [
                xavier(d, dims[0], &mut rng),
                xavier(d, dims[1], &mut rng),
                xavier(d, dims[2], &mut rng),
            ],
            dec_b: [
                Matrix::zeros(1, dims[0]),
                Matrix::zeros(1, dims[1]),
                Matrix::zeros(1, dims[2]),
            ],
            w1: xavier(d, h, &mut rng),
            b1: Matrix::zeros(1, h),
            w2: xavier(h, 1, &mut rng),
            b2: Matrix::zeros(1, 1),
            model_dim: d,
            target_mean: 0.0,
            target_std: 1.0,
        }
    }

    pub fn matrices(&self) -> Vec<&Matrix> {
        let mut v: Vec<&Matrix> = Vec::with_capacity(N_PARAMS);
        v.extend(self.enc_w.iter());
        v.extend(self.enc_b.iter());
        v.extend(self.mask_tok.iter());
        v.push(&self.w_f);
        v.push(&self.b_f);
        v.extend(self.dec_w.iter());
        v.extend(self.dec_b.iter());
        v.extend([&self.w1, &self.b1, &self.w2, &self.b2]);
        v
    }

    pub fn to_vec(&self) -> Vec<Matrix> {
        self.matrices().into_iter().cloned().collect()
    }

    pub fn with_matrices(&self, ms: Vec<Matrix>) -> Self {
        assert_eq!(ms.len(), N_PARAMS);
        let mut it = ms.into_iter();
        let mut next = || it.next().unwrap();
        CompletionParams {
            enc_w: [next(), next(), next()],
            enc_b: [next(), next(), next()],
            mask_tok: [next(), next(), next()],
            w_f: next(),
            b_f: next(),
            dec_w: [next(), next(), next()],
            dec_b: [next(), next(), next()],
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
            ..self.clone()
        }
    }
}

// Parameter slots in the fixed matrix order.
const ENC_W: usize = 0;
const ENC_B: usize = 3;
const MASK: usize = 6;
const W_F: usize = 9;
const B_F: usize = 10;
const DEC_W: usize = 11;
const DEC_B: usize = 14;
const W1: usize = 17;
const B1: usize = 18;
const W2: usize = 19;
const B2: usize = 20;

/// Visible modalities are encoded; masked ones contribute their mask token.
/// Mean over the three slots, then the tanh fusion layer.
pub fn encode_incomplete(
    tape: &mut Tape,
    ids: &[NodeId],
    inputs: &[Option<Matrix>; 3],
    pattern: &MaskPattern,
) -> Result<NodeId> {
    let mut acc: Option<NodeId> = None;
    for m in 0..3 {
        let slot = if pattern.visible[m] {
            let x = inputs[m].as_ref().ok_or_else(|| {
                Error::usage(format!("modality {m} marked visible but embedding is missing"))
            })?;
            let xid = tape.leaf(x);
            let lin = tape.matmul(xid, ids[ENC_W + m])?;
            tape.add_bias(lin, ids[ENC_B + m])?
        } else {
            ids[MASK + m]
        };
        acc = Some(match acc {
            None => slot,
            Some(a) => tape.add(a, slot)?,
        });
    }
    let mean = tape.scale(acc.expect("three slots"), 1.0 / 3.0);
    let lin = tape.matmul(mean, ids[W_F])?;
    let lin = tape.add_bias(lin, ids[B_F])?;
    Ok(tape.tanh(lin))
}

/// Decoder output for one modality.
pub fn reconstruct(tape: &mut Tape, ids: &[NodeId], fused: NodeId, modality: usize) -> Result<NodeId> {
    let lin = tape.matmul(fused, ids[DEC_W + modality])?;
    Ok(tape.add_bias(lin, ids[DEC_B + modality])?)
}

/// Prediction head over the fused representation (standardized space).
pub fn prediction_head(tape: &mut Tape, ids: &[NodeId], fused: NodeId) -> Result<NodeId> {
    let lin1 = tape.matmul(fused, ids[W1])?;
    let lin1 = tape.add_bias(lin1, ids[B1])?;
    let h1 = tape.tanh(lin1);
    let lin2 = tape.matmul(h1, ids[W2])?;
    Ok(tape.add_bias(lin2, ids[B2])?)
}

/// Per-sample loss: supervised MSE (labeled samples) plus λ times the mean
/// reconstruction MSE over masked-but-truly-present modalities.
pub fn sample_loss(
    tape: &mut Tape,
    ids: &[NodeId],
    inputs: &[Option<Matrix>; 3],
    pattern: &MaskPattern,
    target_std: Option<f64>,
    lambda: f64,
) -> Result<NodeId> {
    let fused = encode_incomplete(tape, ids, inputs, pattern)?;

    let mut terms: Vec<NodeId> = Vec::new();
    if let Some(t) = target_std {
        let pred = prediction_head(tape, ids, fused)?;
        let tgt = tape.leaf(&Matrix::from_row(&[t as f32]));
        terms.push(tape.mse(pred, tgt)?);
    }

    if lambda > 0.0 {
        let mut recon_terms: Vec<NodeId> = Vec::new();
        for m in 0..3 {
            if !pattern.visible[m] {
                if let Some(truth) = &inputs[m] {
                    let rec = reconstruct(tape, ids, fused, m)?;
                    let tr = tape.leaf(truth);
                    recon_terms.push(tape.mse(rec, tr)?);
                }
            }
        }
        if !recon_terms.is_empty() {
            let mut sum = recon_terms[0];
            for &t in &recon_terms[1..] {
                sum = tape.add(sum, t)?;
            }
            let mean = tape.scale(sum, 1.0 / recon_terms.len() as f64);
            terms.push(tape.scale(mean, lambda));
        }
    }

    match terms.len() {
        0 => {
            // nothing to learn from this draw; a zero-valued leaf keeps the
            // loop uniform with zero gradients
            let z = tape.leaf(&Matrix::zeros(1, 1));
            Ok(tape.scale(z, 0.0))
        }
        1 => Ok(terms[0]),
        _ => {
            let mut sum = terms[0];
            for &t in &terms[1..] {
                sum = tape.add(sum, t)?;
            }
            Ok(sum)
        }
    }
}

fn record_inputs(record: &VideoRecord) -> [Option<Matrix>; 3] {
    let mut out: [Option<Matrix>; 3] = [None, None, None];
    for (m, e) in record.embeddings().iter().enumerate() {
        if let Some(e) = e {
            out[m] = Some(Matrix::from_row(e));
        }
    }
    out
}

fn predict_std(params: &[Matrix], inputs: &[Option<Matrix>; 3], pattern: &MaskPattern) -> Result<f64> {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.iter().map(|p| tape.leaf(p)).collect();
    let fused = encode_incomplete(&mut tape, &ids, inputs, pattern)?;
    let pred = prediction_head(&mut tape, &ids, fused)?;
    Ok(tape.scalar(pred))
}

/// Prediction in transformed target space for a record under a visibility
/// pattern. Masked or missing modalities use the learned mask tokens.
pub fn predict_from_incomplete(
    record: &VideoRecord,
    pattern: &MaskPattern,
    params: &CompletionParams,
) -> Result<f64> {
    let avail = record.availability();
    let effective = MaskPattern {
        visible: [
            pattern.visible[0] && avail[0],
            pattern.visible[1] && avail[1],
            pattern.visible[2] && avail[2],
        ],
    };
    if effective.n_visible() == 0 {
        return Err(Error::usage(format!(
            "record '{}': no visible modality under the requested pattern",
            record.video_id
        )));
    }
    let inputs = record_inputs(record);
    let std = predict_std(&params.to_vec(), &inputs, &effective)?;
    Ok(std * params.target_std as f64 + params.target_mean as f64)
}

/// Mean reconstruction MSE over a record set: for each record, each present
/// modality is masked in turn and reconstructed from the remaining ones.
pub fn reconstruction_mse(records: &[VideoRecord], params: &CompletionParams) -> Result<f64> {
    let ps = params.to_vec();
    let per_record = par_map(records, |r| -> Result<(f64, usize)> {
        let inputs = record_inputs(r);
        let avail = r.availability();
        let mut acc = 0.0;
        let mut n = 0usize;
        for m in 0..3 {
            if !avail[m] || r.n_available() < 2 {
                continue;
            }
            let mut visible = avail;
            visible[m] = false;
            let pattern = MaskPattern { visible };
            let mut tape = Tape::new();
            let ids: Vec<NodeId> = ps.iter().map(|p| tape.leaf(p)).collect();
            let fused = encode_incomplete(&mut tape, &ids, &inputs, &pattern)?;
            let rec = reconstruct(&mut tape, &ids, fused, m)?;
            let truth = tape.leaf(inputs[m].as_ref().unwrap());
            let l = tape.mse(rec, truth)?;
            acc += tape.scalar(l);
            n += 1;
        }
        Ok((acc, n))
    });
    let mut total = 0.0;
    let mut count = 0usize;
    for r in per_record {
        let (a, n) = r?;
        total += a;
        count += n;
    }
    if count == 0 {
        return Err(Error::usage("no reconstructable modalities in record set"));
    }
    Ok(total / count as f64)
}

fn target_stats(records: &[VideoRecord], tf: TargetTransform, metric: usize) -> (f32, f32) {
    let vals: Vec<f64> = records
        .iter()
        .filter_map(|r| r.targets.as_ref())
        .map(|t| tf.forward(t)[metric])
        .collect();
    let n = vals.len().max(1) as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean as f32, var.sqrt().max(1e-6) as f32)
}

/// Semi-supervised training: supervised masked prediction on the labeled set
/// plus reconstruction consistency over labeled AND unlabeled samples. Fresh
/// random masks every epoch; early-stopped on labeled val MSE.
#[allow(clippy::too_many_arguments)]
pub fn train_semisupervised(
    labeled_train: &[VideoRecord],
    labeled_val: &[VideoRecord],
    unlabeled: &[VideoRecord],
    dims: [usize; 3],
    tf: TargetTransform,
    cfg: &RunConfig,
    metric: usize,
    seed: u64,
) -> Result<(CompletionParams, TrainOutcome)> {
    if labeled_train.is_empty() {
        return Err(Error::usage("completion training requires labeled records"));
    }
    let (mean, std) = target_stats(labeled_train, tf, metric);
    let base = CompletionParams {
        target_mean: mean,
        target_std: std,
        ..CompletionParams::init(dims, cfg.model_dim, cfg.hidden, seed)
    };

    struct S {
        inputs: [Option<Matrix>; 3],
        avail: [bool; 3],
        target_std: Option<f64>,
        id: String,
    }
    let mut samples: Vec<S> = Vec::with_capacity(labeled_train.len() + unlabeled.len());
    for r in labeled_train.iter() {
        let t = r
            .targets
            .as_ref()
            .ok_or_else(|| Error::usage(format!("record '{}' unlabeled in labeled set", r.video_id)))?;
        samples.push(S {
            inputs: record_inputs(r),
            avail: r.availability(),
            target_std: Some((tf.forward(t)[metric] - mean as f64) / std as f64),
            id: r.video_id.clone(),
        });
    }
    for r in unlabeled.iter() {
        samples.push(S {
            inputs: record_inputs(r),
            avail: r.availability(),
            target_std: None,
            id: r.video_id.clone(),
        });
    }

    let p = cfg.mask_p;
    let lambda = cfg.lambda;
    let loop_cfg = LoopConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        patience: cfg.patience,
        seed,
    };

    let val: Vec<([Option<Matrix>; 3], [bool; 3], f64)> = labeled_val
        .iter()
        .filter_map(|r| {
            r.targets.as_ref().map(|t| {
                (
                    record_inputs(r),
                    r.availability(),
                    (tf.forward(t)[metric] - mean as f64) / std as f64,
                )
            })
        })
        .collect();
    let val_closure = if val.is_empty() {
        None
    } else {
        Some(move |ps: &[Matrix]| -> Result<f64> {
            let errs = par_map(&val, |(inputs, avail, tgt)| -> Result<f64> {
                let pattern = MaskPattern { visible: *avail };
                let p = predict_std(ps, inputs, &pattern)?;
                Ok((p - tgt) * (p - tgt))
            });
            let mut acc = 0.0;
            for e in &errs {
                match e {
                    Ok(v) => acc += v,
                    Err(err) => return Err(Error::usage(err.to_string())),
                }
            }
            Ok(acc / errs.len() as f64)
        })
    };

    let outcome = train_loop(
        base.to_vec(),
        samples.len(),
        |tape, ids, idx, rng| {
            let s = &samples[idx];
            // fresh mask draw for this sample this epoch
            let mut visible = [false; 3];
            if s.avail.iter().any(|&a| a) {
                for m in 0..3 {
                    if s.avail[m] {
                        visible[m] = rng.gen::<f64>() >= p;
                    }
                }
                if !visible.iter().any(|&v| v) {
                    let candidates: Vec<usize> = (0..3).filter(|&m| s.avail[m]).collect();
                    visible[candidates[rng.gen_range(0..candidates.len())]] = true;
                }
            } else {
                return Err(Error::usage(format!("record '{}' has no modality", s.id)));
            }
            let pattern = MaskPattern { visible };
            sample_loss(tape, ids, &s.inputs, &pattern, s.target_std, lambda)
        },
        val_closure,
        &loop_cfg,
    )?;
    let params = base.with_matrices(outcome.params.clone());
    Ok((params, outcome))
}
