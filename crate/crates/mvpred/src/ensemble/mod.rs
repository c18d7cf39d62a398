//! Synthesis network fusing the two branches, the per-author C/R/E training
//! regime, and prediction export. Bundle persistence lives in [`bundle`].
//!
//! Naming follows the training regime: C is the global model trained on all
//! authors, R the per-author models, E the per-author selection of whichever
//! validated better.

pub mod bundle;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::completion::{self, CompletionParams, MaskPattern};
use crate::config::RunConfig;
use crate::dataset::{split, TargetTransform, VideoRecord, N_METRICS};
use crate::error::{Error, Result};
use crate::fsutil::atomic_write;
use crate::memorybank::{MemoryBank, Query};
use crate::numerics::{Matrix, NodeId, Tape};
use crate::runtime::{derive_seed, par_map, tag};
use crate::train::{train_loop, LoopConfig, TrainOutcome};
use crate::xattn::{self, XAttnParams};

pub const N_FEATURES: usize = 4;

/// 2-layer perceptron over (xattn prediction, completion prediction, mean
/// neighbor similarity, log neighbor count), with input/target
/// standardization fitted on its training features.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisParams {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub feat_mean: [f32; N_FEATURES],
    pub feat_std: [f32; N_FEATURES],
    pub target_mean: f32,
    pub target_std: f32,
}

impl SynthesisParams {
    pub fn init(hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xavier = |r: usize, c: usize, rng: &mut ChaCha8Rng| {
            Matrix::randn(r, c, (2.0 / (r + c) as f32).sqrt(), rng)
        };
        SynthesisParams {
            w1: xavier(N_FEATURES, hidden, &mut rng),
            b1: Matrix::zeros(1, hidden),
            w2: xavier(hidden, 1, &mut rng),
            b2: Matrix::zeros(1, 1),
            feat_mean: [0.0; N_FEATURES],
            feat_std: [1.0; N_FEATURES],
            target_mean: 0.0,
            target_std: 1.0,
        }
    }

    pub fn to_vec(&self) -> Vec<Matrix> {
        vec![self.w1.clone(), self.b1.clone(), self.w2.clone(), self.b2.clone()]
    }

    pub fn with_matrices(&self, ms: Vec<Matrix>) -> Self {
        assert_eq!(ms.len(), 4);
        let mut it = ms.into_iter();
        SynthesisParams {
            w1: it.next().unwrap(),
            b1: it.next().unwrap(),
            w2: it.next().unwrap(),
            b2: it.next().unwrap(),
            ..self.clone()
        }
    }

    fn standardize(&self, feats: &[f64; N_FEATURES]) -> Matrix {
        let row: Vec<f32> = (0..N_FEATURES)
            .map(|i| ((feats[i] as f32) - self.feat_mean[i]) / self.feat_std[i])
            .collect();
        Matrix::from_row(&row)
    }
}

/// Forward graph of the synthesis perceptron (standardized spaces).
pub fn synthesis_forward(tape: &mut Tape, ids: &[NodeId], x: NodeId) -> Result<NodeId> {
    let lin1 = tape.matmul(x, ids[0])?;
    let lin1 = tape.add_bias(lin1, ids[1])?;
    let h = tape.tanh(lin1);
    let lin2 = tape.matmul(h, ids[2])?;
    Ok(tape.add_bias(lin2, ids[3])?)
}

/// Synthesis prediction in transformed target space.
pub fn predict_synthesis(params: &SynthesisParams, feats: &[f64; N_FEATURES]) -> Result<f64> {
    let ps = params.to_vec();
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = ps.iter().map(|p| tape.leaf(p)).collect();
    let x = tape.leaf(&params.standardize(feats));
    let out = synthesis_forward(&mut tape, &ids, x)?;
    Ok(tape.scalar(out) * params.target_std as f64 + params.target_mean as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    C,
    R,
}

/// The selection rule: R only on a strict improvement, ties go to C.
pub fn select_variant(c_mse: f64, r_mse: Option<f64>) -> Variant {
    match r_mse {
        Some(rv) if rv < c_mse => Variant::R,
        _ => Variant::C,
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RecordedVal {
    pub c_mse: f64,
    pub r_mse: Option<f64>,
}

/// One metric's branch models for one variant.
#[derive(Clone, Debug)]
pub struct BranchModels {
    pub xattn: XAttnParams,
    pub completion: CompletionParams,
    pub synthesis: SynthesisParams,
}

/// Per-metric C/R/E structures.
#[derive(Clone, Debug)]
pub struct MetricEnsemble {
    pub c: BranchModels,
    pub r: BTreeMap<String, BranchModels>,
    /// E: per-author choice between C and R (absent authors route to C).
    pub selection: BTreeMap<String, Variant>,
    /// Raw-space validation MSEs backing the selection.
    pub recorded: BTreeMap<String, RecordedVal>,
}

#[derive(Clone, Debug)]
pub struct TrainedEnsemble {
    pub config: RunConfig,
    pub dims: [usize; 3],
    pub c_bank: MemoryBank,
    pub r_banks: BTreeMap<String, MemoryBank>,
    pub metrics: Vec<MetricEnsemble>,
    /// Video ids of the internal validation split (for inspection).
    pub val_ids: Vec<String>,
}

impl TrainedEnsemble {
    pub fn transform(&self) -> TargetTransform {
        self.config.transform
    }

    pub fn has_author_model(&self, author: &str) -> bool {
        self.r_banks.contains_key(author)
            && self.metrics.iter().all(|m| m.r.contains_key(author))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub video_id: String,
    pub targets: crate::dataset::PopularityTargets,
}

/// Loss-history bookkeeping for one trained component.
#[derive(Clone, Debug, Serialize)]
pub struct ComponentLog {
    pub metric: String,
    pub variant: String,
    pub component: String,
    pub train_history: Vec<f64>,
    pub val_history: Vec<f64>,
    pub best_epoch: usize,
}

pub type TrainingLog = Vec<ComponentLog>;

/// Out-of-fold branch outputs for one training record.
#[derive(Clone, Debug)]
pub struct OofOutput {
    pub video_id: String,
    pub features: [f64; N_FEATURES],
}

/// Branch predictions plus retrieval-confidence features for one record.
pub fn branch_features(
    record: &VideoRecord,
    bank: &MemoryBank,
    xp: &XAttnParams,
    cp: &CompletionParams,
    k: usize,
    metric: usize,
) -> Result<[f64; N_FEATURES]> {
    let query = Query::from_record(record)?;
    let retrieval = bank.retrieve(&query, k, Some(&record.video_id))?;
    let x_pred = xattn::predict_with_retrieval(record, bank, &retrieval, xp, metric)?;
    let c_pred = completion::predict_from_incomplete(record, &MaskPattern::all_visible(), cp)?;
    Ok([
        x_pred,
        c_pred,
        retrieval.mean_score(),
        ((1 + retrieval.neighbors.len()) as f64).ln(),
    ])
}

fn train_fold_branches(
    fold_train: &[VideoRecord],
    val: &[VideoRecord],
    dims: [usize; 3],
    cfg: &RunConfig,
    metric: usize,
    seed: u64,
) -> Result<(MemoryBank, XAttnParams, CompletionParams)> {
    let bank = MemoryBank::build(fold_train, dims, cfg.transform)?;
    let (xp, _) = xattn::train(fold_train, val, &bank, cfg, metric, derive_seed(seed, &[2]))?;
    let (cp, _) = completion::train_semisupervised(
        fold_train,
        val,
        &[],
        dims,
        cfg.transform,
        cfg,
        metric,
        derive_seed(seed, &[3]),
    )?;
    Ok((bank, xp, cp))
}

/// 2-fold author-stratified cross-fitting: each fold's branch models are
/// trained on the other fold (early-stopped on the held-out validation set),
/// so no record's own target can influence its branch predictions. Outputs
/// are aligned to the input record order.
pub fn crossfit_module_outputs(
    train: &[VideoRecord],
    val: &[VideoRecord],
    dims: [usize; 3],
    cfg: &RunConfig,
    metric: usize,
    seed: u64,
) -> Result<Vec<OofOutput>> {
    if train.len() < 2 {
        return Err(Error::usage("cross-fitting needs at least 2 records"));
    }
    let parts = split(train, 0.5, derive_seed(seed, &[10]))?;
    let folds = [parts.train, parts.val];
    if folds.iter().any(|f| f.is_empty()) {
        return Err(Error::usage("cross-fitting produced an empty fold"));
    }

    let mut by_id: BTreeMap<&str, [f64; N_FEATURES]> = BTreeMap::new();
    for fi in 0..2 {
        let predict_fold = &folds[fi];
        let train_fold = &folds[1 - fi];
        let (bank, xp, cp) =
            train_fold_branches(train_fold, val, dims, cfg, metric, derive_seed(seed, &[20 + fi as u64]))?;
        let feats = par_map(predict_fold, |r| branch_features(r, &bank, &xp, &cp, cfg.k, metric));
        for (r, f) in predict_fold.iter().zip(feats) {
            by_id.insert(&r.video_id, f?);
        }
    }

    train
        .iter()
        .map(|r| {
            by_id
                .get(r.video_id.as_str())
                .map(|f| OofOutput {
                    video_id: r.video_id.clone(),
                    features: *f,
                })
                .ok_or_else(|| Error::usage(format!("record '{}' missing from folds", r.video_id)))
        })
        .collect()
}

/// Trains the synthesis net on aligned (features, transformed targets);
/// early-stopped on the provided validation pairs.
pub fn train_synthesis(
    feats: &[[f64; N_FEATURES]],
    targets: &[f64],
    val_feats: &[[f64; N_FEATURES]],
    val_targets: &[f64],
    cfg: &RunConfig,
    seed: u64,
) -> Result<(SynthesisParams, TrainOutcome)> {
    if feats.len() != targets.len() || feats.is_empty() {
        return Err(Error::usage("synthesis inputs misaligned or empty"));
    }
    let n = feats.len() as f64;
    let mut feat_mean = [0.0f32; N_FEATURES];
    let mut feat_std = [1.0f32; N_FEATURES];
    for i in 0..N_FEATURES {
        let m = feats.iter().map(|f| f[i]).sum::<f64>() / n;
        let v = feats.iter().map(|f| (f[i] - m) * (f[i] - m)).sum::<f64>() / n;
        feat_mean[i] = m as f32;
        feat_std[i] = (v.sqrt().max(1e-6)) as f32;
    }
    let t_mean = targets.iter().sum::<f64>() / n;
    let t_var = targets.iter().map(|t| (t - t_mean) * (t - t_mean)).sum::<f64>() / n;
    let base = SynthesisParams {
        feat_mean,
        feat_std,
        target_mean: t_mean as f32,
        target_std: (t_var.sqrt().max(1e-6)) as f32,
        ..SynthesisParams::init(cfg.hidden, seed)
    };

    let xs: Vec<Matrix> = feats.iter().map(|f| base.standardize(f)).collect();
    let ts: Vec<f32> = targets
        .iter()
        .map(|t| ((t - base.target_mean as f64) / base.target_std as f64) as f32)
        .collect();
    let val_xs: Vec<Matrix> = val_feats.iter().map(|f| base.standardize(f)).collect();
    let val_ts: Vec<f64> = val_targets
        .iter()
        .map(|t| (t - base.target_mean as f64) / base.target_std as f64)
        .collect();

    let loop_cfg = LoopConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        patience: cfg.patience,
        seed,
    };
    let val_closure = if val_xs.is_empty() {
        None
    } else {
        Some(move |ps: &[Matrix]| -> Result<f64> {
            let mut acc = 0.0;
            for (x, t) in val_xs.iter().zip(&val_ts) {
                let mut tape = Tape::new();
                let ids: Vec<NodeId> = ps.iter().map(|p| tape.leaf(p)).collect();
                let xid = tape.leaf(x);
                let out = synthesis_forward(&mut tape, &ids, xid)?;
                let d = tape.scalar(out) - t;
                acc += d * d;
            }
            Ok(acc / val_xs.len() as f64)
        })
    };

    let outcome = train_loop(
        base.to_vec(),
        xs.len(),
        |tape, ids, idx, _| {
            let x = tape.leaf(&xs[idx]);
            let out = synthesis_forward(tape, ids, x)?;
            let tgt = tape.leaf(&Matrix::from_row(&[ts[idx]]));
            Ok(tape.mse(out, tgt)?)
        },
        val_closure,
        &loop_cfg,
    )?;
    let params = base.with_matrices(outcome.params.clone());
    Ok((params, outcome))
}

/// Trains one variant's branch models plus its synthesis net for one metric.
fn train_branch_set(
    train: &[VideoRecord],
    val: &[VideoRecord],
    bank: &MemoryBank,
    unlabeled: &[VideoRecord],
    cfg: &RunConfig,
    metric: usize,
    seed: u64,
    variant_name: &str,
    log: &mut TrainingLog,
) -> Result<BranchModels> {
    let dims = bank.dims();
    let tf = bank.transform();

    // out-of-fold branch features for leakage-free synthesis training
    let oof = crossfit_module_outputs(train, val, dims, cfg, metric, derive_seed(seed, &[100]))?;

    // final branch models on the full variant train set
    let (xp, x_out) = xattn::train(train, val, bank, cfg, metric, derive_seed(seed, &[101]))?;
    let (cp, c_out) = completion::train_semisupervised(
        train,
        val,
        unlabeled,
        dims,
        tf,
        cfg,
        metric,
        derive_seed(seed, &[102]),
    )?;

    let feats: Vec<[f64; N_FEATURES]> = oof.iter().map(|o| o.features).collect();
    let targets: Vec<f64> = train
        .iter()
        .map(|r| tf.forward(r.targets.as_ref().expect("labeled"))[metric])
        .collect();
    let val_feat_results = par_map(val, |r| branch_features(r, bank, &xp, &cp, cfg.k, metric));
    let mut val_feats = Vec::with_capacity(val.len());
    for f in val_feat_results {
        val_feats.push(f?);
    }
    let val_targets: Vec<f64> = val
        .iter()
        .map(|r| tf.forward(r.targets.as_ref().expect("labeled"))[metric])
        .collect();

    let (sp, s_out) = train_synthesis(
        &feats,
        &targets,
        &val_feats,
        &val_targets,
        cfg,
        derive_seed(seed, &[103]),
    )?;

    let metric_name = crate::dataset::METRIC_NAMES[metric];
    for (component, out) in [("xattn", &x_out), ("completion", &c_out), ("synthesis", &s_out)] {
        log.push(ComponentLog {
            metric: metric_name.to_string(),
            variant: variant_name.to_string(),
            component: component.to_string(),
            train_history: out.train_history.clone(),
            val_history: out.val_history.clone(),
            best_epoch: out.best_epoch,
        });
    }

    Ok(BranchModels {
        xattn: xp,
        completion: cp,
        synthesis: sp,
    })
}

fn predict_metric(
    record: &VideoRecord,
    bank: &MemoryBank,
    models: &BranchModels,
    k: usize,
    metric: usize,
) -> Result<f64> {
    let feats = branch_features(record, bank, &models.xattn, &models.completion, k, metric)?;
    predict_synthesis(&models.synthesis, &feats)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VariantSel {
    /// The global model C.
    Global,
    /// The author's R model (error when absent).
    PerAuthor,
    /// E routing: selected variant per author, C for unknown authors.
    Selected,
}

/// Full prediction for one record through a forced or E-selected variant.
pub fn predict_for_variant(
    record: &VideoRecord,
    ens: &TrainedEnsemble,
    sel: VariantSel,
) -> Result<crate::dataset::PopularityTargets> {
    if record.n_available() == 0 {
        return Err(Error::usage(format!(
            "record '{}' has no available modality",
            record.video_id
        )));
    }
    let tf = ens.transform();
    let mut counts = [0u64; N_METRICS];
    for metric in 0..N_METRICS {
        let me = &ens.metrics[metric];
        let use_r = match sel {
            VariantSel::Global => false,
            VariantSel::PerAuthor => {
                if !me.r.contains_key(&record.author_id) {
                    return Err(Error::usage(format!(
                        "no per-author model for '{}'",
                        record.author_id
                    )));
                }
                true
            }
            VariantSel::Selected => {
                matches!(me.selection.get(&record.author_id), Some(Variant::R))
                    && me.r.contains_key(&record.author_id)
            }
        };
        let log_pred = if use_r {
            let models = &me.r[&record.author_id];
            let bank = &ens.r_banks[&record.author_id];
            predict_metric(record, bank, models, ens.config.k, metric)?
        } else {
            predict_metric(record, &ens.c_bank, &me.c, ens.config.k, metric)?
        };
        counts[metric] = tf.inverse_one(log_pred);
    }
    Ok(crate::dataset::PopularityTargets::from_array(counts))
}

/// E-routed prediction with nonnegative integer counts.
pub fn predict_final(record: &VideoRecord, ens: &TrainedEnsemble) -> Result<PredictionRow> {
    Ok(PredictionRow {
        video_id: record.video_id.clone(),
        targets: predict_for_variant(record, ens, VariantSel::Selected)?,
    })
}

/// The C/R/E regime: global model C on all train data, per-author models R
/// where enough records exist, and the per-author selection E by recorded
/// validation MSE (ties go to C).
pub fn train_variants(
    train: &[VideoRecord],
    val: &[VideoRecord],
    unlabeled: &[VideoRecord],
    dims: [usize; 3],
    cfg: &RunConfig,
) -> Result<(TrainedEnsemble, TrainingLog)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::usage("train set is empty"));
    }
    let c_bank = MemoryBank::build(train, dims, cfg.transform)?;

    // authors eligible for R models
    let mut authors: Vec<String> = train.iter().map(|r| r.author_id.clone()).collect();
    authors.sort();
    authors.dedup();
    let mut r_banks = BTreeMap::new();
    let mut author_data: BTreeMap<String, (Vec<VideoRecord>, Vec<VideoRecord>)> = BTreeMap::new();
    for a in &authors {
        let a_train: Vec<VideoRecord> =
            train.iter().filter(|r| &r.author_id == a).cloned().collect();
        if a_train.len() < cfg.min_author_samples {
            continue;
        }
        let a_val: Vec<VideoRecord> = val.iter().filter(|r| &r.author_id == a).cloned().collect();
        r_banks.insert(a.clone(), MemoryBank::build(&a_train, dims, cfg.transform)?);
        author_data.insert(a.clone(), (a_train, a_val));
    }

    // (metric, variant) training tasks, parallel with derived seeds
    struct Task<'a> {
        metric: usize,
        variant: String, // "C" or author id
        train: &'a [VideoRecord],
        val: &'a [VideoRecord],
        bank: &'a MemoryBank,
        unlabeled: &'a [VideoRecord],
    }
    let mut tasks = Vec::new();
    for metric in 0..N_METRICS {
        tasks.push(Task {
            metric,
            variant: "C".to_string(),
            train,
            val,
            bank: &c_bank,
            unlabeled,
        });
        for (a, (a_train, a_val)) in &author_data {
            tasks.push(Task {
                metric,
                variant: a.clone(),
                train: a_train,
                val: a_val,
                bank: &r_banks[a],
                unlabeled,
            });
        }
    }

    let results = par_map(&tasks, |t| -> Result<(TrainingLog, BranchModels)> {
        let seed = derive_seed(cfg.seed, &[tag(&t.variant), t.metric as u64]);
        let mut log = TrainingLog::new();
        let models = train_branch_set(
            t.train, t.val, t.bank, t.unlabeled, cfg, t.metric, seed, &t.variant, &mut log,
        )?;
        Ok((log, models))
    });

    let mut log = TrainingLog::new();
    let mut metrics: Vec<MetricEnsemble> = Vec::new();
    let mut iter = results.into_iter();
    for _metric in 0..N_METRICS {
        let (c_log, c_models) = iter.next().expect("task result")?;
        log.extend(c_log);
        let mut r = BTreeMap::new();
        for a in author_data.keys() {
            let (a_log, a_models) = iter.next().expect("task result")?;
            log.extend(a_log);
            r.insert(a.clone(), a_models);
        }
        metrics.push(MetricEnsemble {
            c: c_models,
            r,
            selection: BTreeMap::new(),
            recorded: BTreeMap::new(),
        });
    }

    let mut ens = TrainedEnsemble {
        config: cfg.clone(),
        dims,
        c_bank,
        r_banks,
        metrics,
        val_ids: val.iter().map(|r| r.video_id.clone()).collect(),
    };

    // recorded per-author raw-space validation MSEs and the E selection
    for metric in 0..N_METRICS {
        let mut recorded = BTreeMap::new();
        let mut selection = BTreeMap::new();
        for a in &authors {
            let a_val: Vec<&VideoRecord> = val.iter().filter(|r| &r.author_id == a).collect();
            if a_val.is_empty() {
                selection.insert(a.clone(), Variant::C);
                continue;
            }
            let mse_of = |use_r: bool| -> Result<f64> {
                let errs = par_map(&a_val, |r| -> Result<f64> {
                    let me = &ens.metrics[metric];
                    let (bank, models) = if use_r {
                        (&ens.r_banks[a], &me.r[a])
                    } else {
                        (&ens.c_bank, &me.c)
                    };
                    let log_pred = predict_metric(r, bank, models, ens.config.k, metric)?;
                    let pred = ens.transform().inverse_one(log_pred) as f64;
                    let truth = r.targets.as_ref().unwrap().as_array()[metric] as f64;
                    Ok((pred - truth) * (pred - truth))
                });
                let mut acc = 0.0;
                for e in &errs {
                    match e {
                        Ok(v) => acc += v,
                        Err(err) => return Err(Error::usage(err.to_string())),
                    }
                }
                Ok(acc / a_val.len() as f64)
            };
            let c_mse = mse_of(false)?;
            let has_r = ens.metrics[metric].r.contains_key(a);
            let r_mse = if has_r { Some(mse_of(true)?) } else { None };
            recorded.insert(a.clone(), RecordedVal { c_mse, r_mse });
            selection.insert(a.clone(), select_variant(c_mse, r_mse));
        }
        ens.metrics[metric].recorded = recorded;
        ens.metrics[metric].selection = selection;
    }

    Ok((ens, log))
}

/// Comma-separated predictions file with the fixed header.
pub fn write_predictions(rows: &[PredictionRow], path: &std::path::Path) -> Result<()> {
    let mut out = String::from("video_id,hearts,shares,comments,plays\n");
    for r in rows {
        let t = &r.targets;
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.video_id, t.hearts, t.shares, t.comments, t.plays
        ));
    }
    atomic_write(path, out.as_bytes())
}
