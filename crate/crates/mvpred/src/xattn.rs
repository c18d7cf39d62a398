//! Retrieval branch: encode the target video, cross-attend over retrieved
//! neighbors (embeddings plus their known popularity), regress one
//! transformed target value. One independent instance per metric.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::dataset::VideoRecord;
use crate::error::{Error, Result};
use crate::memorybank::{MemoryBank, Query, RetrievalResult};
use crate::numerics::{Matrix, NodeId, Tape};
use crate::runtime::par_map;
use crate::train::{train_loop, LoopConfig, TrainOutcome};

const N_PARAMS: usize = 13;

/// Cross-attention branch parameters. Matrix order is fixed and shared by
/// the forward graph, the optimizer and the bundle format.
#[derive(Clone, Debug, PartialEq)]
pub struct XAttnParams {
    /// Per-modality input projections d_m → d.
    pub w_in: [Matrix; 3],
    /// Learned absence vectors, one per modality.
    pub absent: [Matrix; 3],
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub model_dim: usize,
    /// Standardization of the transformed target, fitted on train data.
    pub target_mean: f32,
    pub target_std: f32,
}

fn xavier(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let std = (2.0 / (rows + cols) as f32).sqrt();
    Matrix::randn(rows, cols, std, rng)
}

impl XAttnParams {
    pub fn init(dims: [usize; 3], d: usize, h: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d_f: usize = dims.iter().sum();
        XAttnParams {
            w_in: [
                xavier(dims[0], d, &mut rng),
                xavier(dims[1], d, &mut rng),
                xavier(dims[2], d, &mut rng),
            ],
            absent: [
                Matrix::randn(1, d, 0.1, &mut rng),
                Matrix::randn(1, d, 0.1, &mut rng),
                Matrix::randn(1, d, 0.1, &mut rng),
            ],
            w_q: xavier(d, d, &mut rng),
            w_k: xavier(d_f, d, &mut rng),
            w_v: xavier(d_f + 2, d, &mut rng),
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
        v.extend(self.w_in.iter());
        v.extend(self.absent.iter());
        v.extend([&self.w_q, &self.w_k, &self.w_v, &self.w1, &self.b1, &self.w2, &self.b2]);
        v
    }

    pub fn to_vec(&self) -> Vec<Matrix> {
        self.matrices().into_iter().cloned().collect()
    }

    pub fn with_matrices(&self, ms: Vec<Matrix>) -> Self {
        assert_eq!(ms.len(), N_PARAMS);
        let mut it = ms.into_iter();
        let mut next = || it.next().unwrap();
        XAttnParams {
            w_in: [next(), next(), next()],
            absent: [next(), next(), next()],
            w_q: next(),
            w_k: next(),
            w_v: next(),
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
            ..self.clone()
        }
    }
}

/// Precomputed per-record forward inputs: modality rows, neighbor key and
/// value feature matrices, and the standardized target (when labeled).
#[derive(Clone, Debug)]
pub struct XAttnSample {
    pub mod_inputs: [Option<Matrix>; 3],
    pub key_feats: Matrix,
    pub val_feats: Matrix,
    pub mean_score: f64,
    pub n_neighbors: usize,
    pub target_std: Option<f64>,
}

/// Fused neighbor feature: the three normalized modality embeddings
/// concatenated, zeros where a modality is absent.
fn fused_embedding(bank: &MemoryBank, idx: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(bank.dims().iter().sum());
    for m in 0..3 {
        out.extend_from_slice(bank.embedding(idx, m));
    }
    out
}

pub fn build_sample(
    record: &VideoRecord,
    bank: &MemoryBank,
    retrieval: &RetrievalResult,
    metric: usize,
    target_mean: f32,
    target_std: f32,
) -> Result<XAttnSample> {
    if retrieval.neighbors.is_empty() {
        return Err(Error::usage(format!(
            "no retrievable neighbors for record '{}'",
            record.video_id
        )));
    }
    let d_f: usize = bank.dims().iter().sum();
    let n = retrieval.neighbors.len();
    let mut key = Matrix::zeros(n, d_f);
    let mut val = Matrix::zeros(n, d_f + 2);
    for (r, nb) in retrieval.neighbors.iter().enumerate() {
        let fused = fused_embedding(bank, nb.index);
        for (c, &x) in fused.iter().enumerate() {
            key.set(r, c, x);
            val.set(r, c, x);
        }
        let t = bank.target_row(nb.index)[metric];
        val.set(r, d_f, (t - target_mean) / target_std);
        val.set(r, d_f + 1, nb.score as f32);
    }
    let mut mod_inputs: [Option<Matrix>; 3] = [None, None, None];
    for (m, e) in record.embeddings().iter().enumerate() {
        if let Some(e) = e {
            mod_inputs[m] = Some(Matrix::from_row(e));
        }
    }
    if mod_inputs.iter().all(|e| e.is_none()) {
        return Err(Error::usage(format!(
            "record '{}' has no available modality",
            record.video_id
        )));
    }
    let target_std_space = record.targets.as_ref().map(|t| {
        let v = bank.transform().forward(t)[metric];
        (v - target_mean as f64) / target_std as f64
    });
    Ok(XAttnSample {
        mod_inputs,
        key_feats: key,
        val_feats: val,
        mean_score: retrieval.mean_score(),
        n_neighbors: n,
        target_std: target_std_space,
    })
}

/// Query encoding: sum of projected available modalities plus learned
/// absence vectors for the missing ones, then tanh.
pub fn encode_target(
    tape: &mut Tape,
    ids: &[NodeId],
    sample: &XAttnSample,
) -> Result<NodeId> {
    let mut acc: Option<NodeId> = None;
    for m in 0..3 {
        let term = match &sample.mod_inputs[m] {
            Some(x) => {
                let xid = tape.leaf(x);
                tape.matmul(xid, ids[m])?
            }
            None => ids[3 + m],
        };
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    Ok(tape.tanh(acc.expect("three modalities")))
}

/// Keys and values from neighbor features.
pub fn encode_neighbors(
    tape: &mut Tape,
    ids: &[NodeId],
    sample: &XAttnSample,
) -> Result<(NodeId, NodeId)> {
    let kf = tape.leaf(&sample.key_feats);
    let vf = tape.leaf(&sample.val_feats);
    let k = tape.matmul(kf, ids[7])?;
    let v = tape.matmul(vf, ids[8])?;
    Ok((k, v))
}

/// Single-head scaled dot-product attention: softmax(qKᵀ/√d)·V.
/// Returns (context, attention-weights) nodes.
pub fn cross_attention(
    tape: &mut Tape,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    d: usize,
) -> Result<(NodeId, NodeId)> {
    let logits = tape.matmul_t(q, k)?;
    let scaled = tape.scale(logits, 1.0 / (d as f64).sqrt());
    let attn = tape.row_softmax(scaled);
    let ctx = tape.matmul(attn, v)?;
    Ok((ctx, attn))
}

pub struct ForwardNodes {
    pub pred: NodeId,
    pub attn: NodeId,
}

/// Full branch forward: prediction in standardized target space.
pub fn forward(
    tape: &mut Tape,
    ids: &[NodeId],
    sample: &XAttnSample,
    d: usize,
) -> Result<ForwardNodes> {
    let t = encode_target(tape, ids, sample)?;
    let q = tape.matmul(t, ids[6])?;
    let (k, v) = encode_neighbors(tape, ids, sample)?;
    let (ctx, attn) = cross_attention(tape, q, k, v, d)?;
    let head_in = tape.add(ctx, t)?;
    let lin1 = tape.matmul(head_in, ids[9])?;
    let lin1 = tape.add_bias(lin1, ids[10])?;
    let h1 = tape.tanh(lin1);
    let lin2 = tape.matmul(h1, ids[11])?;
    let pred = tape.add_bias(lin2, ids[12])?;
    Ok(ForwardNodes { pred, attn })
}

fn predict_sample(params: &[Matrix], sample: &XAttnSample, d: usize) -> Result<f64> {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.iter().map(|p| tape.leaf(p)).collect();
    let nodes = forward(&mut tape, &ids, sample, d)?;
    Ok(tape.scalar(nodes.pred))
}

/// Branch prediction in transformed target space (leave-one-out retrieval:
/// the record's own id is always excluded from its neighbor set).
pub fn predict(
    record: &VideoRecord,
    bank: &MemoryBank,
    params: &XAttnParams,
    k: usize,
    metric: usize,
) -> Result<f64> {
    let query = Query::from_record(record)?;
    let retrieval = bank.retrieve(&query, k, Some(&record.video_id))?;
    predict_with_retrieval(record, bank, &retrieval, params, metric)
}

/// Same as [`predict`] with an already-computed retrieval result.
pub fn predict_with_retrieval(
    record: &VideoRecord,
    bank: &MemoryBank,
    retrieval: &RetrievalResult,
    params: &XAttnParams,
    metric: usize,
) -> Result<f64> {
    let sample = build_sample(record, bank, retrieval, metric, params.target_mean, params.target_std)?;
    let std_pred = predict_sample(&params.to_vec(), &sample, params.model_dim)?;
    Ok(std_pred * params.target_std as f64 + params.target_mean as f64)
}

pub fn target_stats(records: &[VideoRecord], bank: &MemoryBank, metric: usize) -> (f32, f32) {
    let vals: Vec<f64> = records
        .iter()
        .filter_map(|r| r.targets.as_ref())
        .map(|t| bank.transform().forward(t)[metric])
        .collect();
    let n = vals.len().max(1) as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean as f32, var.sqrt().max(1e-6) as f32)
}

/// Precompute leave-one-out retrievals for a record set against a bank.
pub fn retrievals_for(
    records: &[VideoRecord],
    bank: &MemoryBank,
    k: usize,
) -> Result<Vec<RetrievalResult>> {
    par_map(records, |r| {
        let q = Query::from_record(r)?;
        bank.retrieve(&q, k, Some(&r.video_id))
    })
    .into_iter()
    .collect()
}

/// Trains one per-metric instance with Adam; early stops on val MSE and
/// returns the parameters from the best epoch.
pub fn train(
    train_records: &[VideoRecord],
    val_records: &[VideoRecord],
    bank: &MemoryBank,
    cfg: &RunConfig,
    metric: usize,
    seed: u64,
) -> Result<(XAttnParams, TrainOutcome)> {
    if train_records.is_empty() {
        return Err(Error::usage("xattn train set is empty"));
    }
    let (mean, std) = target_stats(train_records, bank, metric);
    let base = XAttnParams {
        target_mean: mean,
        target_std: std,
        ..XAttnParams::init(bank.dims(), cfg.model_dim, cfg.hidden, seed)
    };

    let train_ret = retrievals_for(train_records, bank, cfg.k)?;
    let samples: Vec<XAttnSample> = train_records
        .iter()
        .zip(&train_ret)
        .map(|(r, ret)| build_sample(r, bank, ret, metric, mean, std))
        .collect::<Result<_>>()?;
    for s in &samples {
        if s.target_std.is_none() {
            return Err(Error::usage("xattn training requires labeled records"));
        }
    }

    let val_ret = retrievals_for(val_records, bank, cfg.k)?;
    let val_samples: Vec<XAttnSample> = val_records
        .iter()
        .zip(&val_ret)
        .map(|(r, ret)| build_sample(r, bank, ret, metric, mean, std))
        .collect::<Result<_>>()?;

    let d = cfg.model_dim;
    let loop_cfg = LoopConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        patience: cfg.patience,
        seed,
    };
    let val_closure = if val_samples.is_empty() {
        None
    } else {
        let vs = val_samples;
        Some(move |ps: &[Matrix]| -> Result<f64> {
            let errs = par_map(&vs, |s| -> Result<f64> {
                let p = predict_sample(ps, s, d)?;
                let t = s.target_std.expect("labeled val");
                Ok((p - t) * (p - t))
            });
            let mut acc = 0.0;
            let mut n = 0usize;
            for e in errs {
                acc += e?;
                n += 1;
            }
            Ok(acc / n as f64)
        })
    };

    let outcome = train_loop(
        base.to_vec(),
        samples.len(),
        |tape, ids, idx, _rng| {
            let s = &samples[idx];
            let nodes = forward(tape, ids, s, d)?;
            let tgt = tape.leaf(&Matrix::from_row(&[s.target_std.unwrap() as f32]));
            Ok(tape.mse(nodes.pred, tgt)?)
        },
        val_closure,
        &loop_cfg,
    )?;
    let params = base.with_matrices(outcome.params.clone());
    Ok((params, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{PopularityTargets, TargetTransform};
    use crate::numerics::finite_diff_check;

    fn bank_records(n: usize) -> Vec<VideoRecord> {
        (0..n)
            .map(|i| VideoRecord {
                video_id: format!("b{i:02}"),
                author_id: "a".into(),
                playable: true,
                visual: Some(vec![1.0, i as f32 * 0.1, 0.0, 0.3]),
                acoustic: Some(vec![0.5, 1.0, i as f32 * 0.05, 0.0]),
                textual: Some(vec![0.2, 0.0, 1.0, i as f32 * 0.2]),
                targets: Some(PopularityTargets {
                    hearts: 100 + i as u64 * 13,
                    shares: 10 + i as u64,
                    comments: 5 + i as u64 * 2,
                    plays: 1000 + i as u64 * 77,
                }),
            })
            .collect()
    }

    fn setup() -> (MemoryBank, Vec<VideoRecord>) {
        let recs = bank_records(6);
        let bank = MemoryBank::build(&recs, [4, 4, 4], TargetTransform::Log1p).unwrap();
        (bank, recs)
    }

    #[test]
    fn encode_target_deterministic_and_uses_absence() {
        let (bank, recs) = setup();
        let params = XAttnParams::init(bank.dims(), 8, 8, 1);
        let query = Query::from_record(&recs[0]).unwrap();
        let ret = bank.retrieve(&query, 3, Some(&recs[0].video_id)).unwrap();

        let mut partial = recs[0].clone();
        partial.acoustic = None;
        partial.textual = None;
        let s = build_sample(&partial, &bank, &ret, 0, 0.0, 1.0).unwrap();

        let run = |params: &XAttnParams| {
            let mut tape = Tape::new();
            let ps = params.to_vec();
            let ids: Vec<NodeId> = ps.iter().map(|p| tape.leaf(p)).collect();
            let t = encode_target(&mut tape, &ids, &s).unwrap();
            tape.value(t).data.clone()
        };
        assert_eq!(run(&params), run(&params));

        // with only visual present, the textual projection cannot matter
        let mut perturbed = params.clone();
        perturbed.w_in[2] = Matrix::zeros(4, 8);
        assert_eq!(run(&params), run(&perturbed));
        // but the textual absence vector does
        let mut perturbed = params.clone();
        perturbed.absent[2] = Matrix::zeros(1, 8);
        assert_ne!(run(&params), run(&perturbed));
    }

    #[test]
    fn attention_singleton_and_identical_keys() {
        let mut tape = Tape::new();
        let q = tape.leaf(&Matrix::from_row(&[1.0, 0.0]));
        let k1 = tape.leaf(&Matrix::from_row(&[0.4, 0.4]));
        let v1 = tape.leaf(&Matrix::new(1, 2, vec![3.0, -1.0]).unwrap());
        let (ctx, attn) = cross_attention(&mut tape, q, k1, v1, 2).unwrap();
        assert_eq!(tape.value(ctx).data, vec![3.0, -1.0]);
        assert_eq!(tape.value(attn).data, vec![1.0]);

        let mut tape = Tape::new();
        let q = tape.leaf(&Matrix::from_row(&[1.0, 0.0]));
        let k = tape.leaf(&Matrix::new(2, 2, vec![0.4, 0.4, 0.4, 0.4]).unwrap());
        let v = tape.leaf(&Matrix::new(2, 2, vec![2.0, 0.0, 4.0, 2.0]).unwrap());
        let (ctx, attn) = cross_attention(&mut tape, q, k, v, 2).unwrap();
        assert_eq!(tape.value(attn).data, vec![0.5, 0.5]);
        assert_eq!(tape.value(ctx).data, vec![3.0, 1.0]);
    }

    #[test]
    fn attention_hand_logits() {
        // q·k1 = 2, q·k2 = 0, d = 4 → logits (1, 0)
        let mut tape = Tape::new();
        let q = tape.leaf(&Matrix::from_row(&[2.0, 0.0, 0.0, 0.0]));
        let k = tape
            .leaf(&Matrix::new(2, 4, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap());
        let v = tape.leaf(&Matrix::new(2, 4, vec![1.0; 8]).unwrap());
        let (_, attn) = cross_attention(&mut tape, q, k, v, 4).unwrap();
        let e = std::f64::consts::E;
        let w = tape.value(attn);
        assert!((w.data[0] - e / (e + 1.0)).abs() < 1e-9);
        assert!((w.data[1] - 1.0 / (e + 1.0)).abs() < 1e-9);
    }

    #[test]
    fn attention_weights_sum_to_one_and_permutation_invariance() {
        let (bank, recs) = setup();
        let params = XAttnParams::init(bank.dims(), 8, 8, 2);
        let query = Query::from_record(&recs[0]).unwrap();
        let ret = bank.retrieve(&query, 4, Some(&recs[0].video_id)).unwrap();
        let s = build_sample(&recs[0], &bank, &ret, 0, 4.0, 1.0).unwrap();

        let mut tape = Tape::new();
        let ps = params.to_vec();
        let ids: Vec<NodeId> = ps.iter().map(|p| tape.leaf(p)).collect();
        let nodes = forward(&mut tape, &ids, &s, 8).unwrap();
        let wsum: f64 = tape.value(nodes.attn).data.iter().sum();
        assert!((wsum - 1.0).abs() < 1e-6);
        let pred = tape.scalar(nodes.pred);

        // permute the neighbor rows: the prediction must not move
        let mut rev = ret.clone();
        rev.neighbors.reverse();
        let s2 = build_sample(&recs[0], &bank, &rev, 0, 4.0, 1.0).unwrap();
        let p2 = predict_sample(&ps, &s2, 8).unwrap();
        assert!((pred - p2).abs() < 1e-9);
    }

    #[test]
    fn neighbor_target_enters_values_linearly() {
        let (bank, recs) = setup();
        let query = Query::from_record(&recs[0]).unwrap();
        let ret = bank.retrieve(&query, 2, Some(&recs[0].video_id)).unwrap();
        let s1 = build_sample(&recs[0], &bank, &ret, 0, 0.0, 1.0).unwrap();
        // doubling the standardized target value doubles that column
        let s2 = build_sample(&recs[0], &bank, &ret, 0, 0.0, 0.5).unwrap();
        let d_f: usize = bank.dims().iter().sum();
        for r in 0..s1.val_feats.rows() {
            assert!((s2.val_feats.get(r, d_f) - 2.0 * s1.val_feats.get(r, d_f)).abs() < 1e-5);
        }
    }

    #[test]
    fn full_graph_gradient_check() {
        let (bank, recs) = setup();
        let params = XAttnParams::init(bank.dims(), 8, 8, 3);
        let query = Query::from_record(&recs[1]).unwrap();
        let ret = bank.retrieve(&query, 3, Some(&recs[1].video_id)).unwrap();
        let mut partial = recs[1].clone();
        partial.acoustic = None; // exercise the absence path
        let s = build_sample(&partial, &bank, &ret, 2, 2.0, 1.5).unwrap();
        let tgt = s.target_std.unwrap() as f32;
        let err = finite_diff_check(
            |tape, ids| {
                let nodes = forward(tape, ids, &s, 8).map_err(to_numerics)?;
                let t = tape.leaf(&Matrix::from_row(&[tgt]));
                tape.mse(nodes.pred, t)
            },
            &params.to_vec(),
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-4, "xattn gradcheck error {err}");
    }

    fn to_numerics(e: crate::error::Error) -> crate::numerics::NumericsError {
        match e {
            crate::error::Error::Numerics(n) => n,
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn leave_one_out_excludes_self() {
        let (bank, recs) = setup();
        let query = Query::from_record(&recs[0]).unwrap();
        let ret = bank.retrieve(&query, 10, Some(&recs[0].video_id)).unwrap();
        assert!(ret.neighbors.iter().all(|n| bank.id(n.index) != "b00"));
    }

    #[test]
    fn predict_is_deterministic() {
        let (bank, recs) = setup();
        let mut params = XAttnParams::init(bank.dims(), 8, 8, 4);
        params.target_mean = 4.0;
        params.target_std = 1.0;
        let p1 = predict(&recs[2], &bank, &params, 3, 1).unwrap();
        let p2 = predict(&recs[2], &bank, &params, 3, 1).unwrap();
        assert_eq!(p1, p2);
        assert!(p1.is_finite());
    }
}
