//! Binary model bundle: magic + version, a JSON metadata document, then
//! named little-endian f32 matrix blocks. Loading a bundle reproduces the
//! trained ensemble bit-for-bit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::TargetTransform;
use crate::ensemble::{
    BranchModels, MetricEnsemble, RecordedVal, SynthesisParams, TrainedEnsemble, Variant,
    N_FEATURES,
};
use crate::error::{Error, Result};
use crate::fsutil::atomic_write;
use crate::memorybank::{BankParts, MemoryBank};
use crate::numerics::Matrix;
use crate::{completion::CompletionParams, xattn::XAttnParams};

const MAGIC: [u8; 4] = *b"MVPB";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct BankMeta {
    ids: Vec<String>,
    authors: Vec<String>,
    avail: Vec<[bool; 3]>,
}

#[derive(Serialize, Deserialize)]
struct HeadMeta {
    model_dim: usize,
    target_mean: f32,
    target_std: f32,
}

#[derive(Serialize, Deserialize)]
struct SynMeta {
    feat_mean: [f32; N_FEATURES],
    feat_std: [f32; N_FEATURES],
    target_mean: f32,
    target_std: f32,
}

#[derive(Serialize, Deserialize)]
struct BranchMeta {
    xattn: HeadMeta,
    completion: HeadMeta,
    synthesis: SynMeta,
}

#[derive(Serialize, Deserialize)]
struct MetricMeta {
    c: BranchMeta,
    r: BTreeMap<String, BranchMeta>,
    selection: BTreeMap<String, Variant>,
    recorded: BTreeMap<String, RecordedVal>,
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    config: RunConfig,
    dims: [usize; 3],
    transform: TargetTransform,
    val_ids: Vec<String>,
    c_bank: BankMeta,
    r_banks: BTreeMap<String, BankMeta>,
    metrics: Vec<MetricMeta>,
}

fn bank_meta(bank: &MemoryBank) -> BankMeta {
    let p = bank.to_parts();
    BankMeta {
        ids: p.ids,
        authors: p.authors,
        avail: p.avail,
    }
}

fn branch_meta(b: &BranchModels) -> BranchMeta {
    BranchMeta {
        xattn: HeadMeta {
            model_dim: b.xattn.model_dim,
            target_mean: b.xattn.target_mean,
            target_std: b.xattn.target_std,
        },
        completion: HeadMeta {
            model_dim: b.completion.model_dim,
            target_mean: b.completion.target_mean,
            target_std: b.completion.target_std,
        },
        synthesis: SynMeta {
            feat_mean: b.synthesis.feat_mean,
            feat_std: b.synthesis.feat_std,
            target_mean: b.synthesis.target_mean,
            target_std: b.synthesis.target_std,
        },
    }
}

fn push_bank_blocks(blocks: &mut Vec<(String, Matrix)>, prefix: &str, bank: &MemoryBank) {
    let p = bank.to_parts();
    for (m, e) in p.emb.iter().enumerate() {
        blocks.push((format!("{prefix}/emb{m}"), e.clone()));
    }
    blocks.push((format!("{prefix}/targets"), p.targets));
}

fn push_model_blocks(blocks: &mut Vec<(String, Matrix)>, prefix: &str, b: &BranchModels) {
    for (i, m) in b.xattn.to_vec().into_iter().enumerate() {
        blocks.push((format!("{prefix}/xattn/{i}"), m));
    }
    for (i, m) in b.completion.to_vec().into_iter().enumerate() {
        blocks.push((format!("{prefix}/comp/{i}"), m));
    }
    for (i, m) in b.synthesis.to_vec().into_iter().enumerate() {
        blocks.push((format!("{prefix}/syn/{i}"), m));
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Serializes the ensemble into the bundle byte format.
pub fn encode_bundle(ens: &TrainedEnsemble) -> Result<Vec<u8>> {
    let meta = BundleMeta {
        config: ens.config.clone(),
        dims: ens.dims,
        transform: ens.transform(),
        val_ids: ens.val_ids.clone(),
        c_bank: bank_meta(&ens.c_bank),
        r_banks: ens
            .r_banks
            .iter()
            .map(|(a, b)| (a.clone(), bank_meta(b)))
            .collect(),
        metrics: ens
            .metrics
            .iter()
            .map(|m| MetricMeta {
                c: branch_meta(&m.c),
                r: m.r.iter().map(|(a, b)| (a.clone(), branch_meta(b))).collect(),
                selection: m.selection.clone(),
                recorded: m.recorded.clone(),
            })
            .collect(),
    };
    let meta_json =
        serde_json::to_vec(&meta).map_err(|e| Error::data(format!("bundle metadata: {e}")))?;

    let mut blocks: Vec<(String, Matrix)> = Vec::new();
    push_bank_blocks(&mut blocks, "bank/C", &ens.c_bank);
    for (a, b) in &ens.r_banks {
        push_bank_blocks(&mut blocks, &format!("bank/R/{a}"), b);
    }
    for (mi, m) in ens.metrics.iter().enumerate() {
        push_model_blocks(&mut blocks, &format!("m{mi}/C"), &m.c);
        for (a, b) in &m.r {
            push_model_blocks(&mut blocks, &format!("m{mi}/R/{a}"), b);
        }
    }

    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, VERSION);
    put_u64(&mut out, meta_json.len() as u64);
    out.extend_from_slice(&meta_json);
    put_u64(&mut out, blocks.len() as u64);
    for (name, mat) in &blocks {
        put_u64(&mut out, name.len() as u64);
        out.extend_from_slice(name.as_bytes());
        let (r, c) = mat.shape();
        put_u64(&mut out, r as u64);
        put_u64(&mut out, c as u64);
        for &v in mat.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_bundle(ens: &TrainedEnsemble, path: &Path) -> Result<()> {
    atomic_write(path, &encode_bundle(ens)?)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::data(format!(
                "bundle truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn take_block(blocks: &mut BTreeMap<String, Matrix>, name: &str) -> Result<Matrix> {
    blocks
        .remove(name)
        .ok_or_else(|| Error::data(format!("bundle missing matrix block '{name}'")))
}

fn load_bank(
    blocks: &mut BTreeMap<String, Matrix>,
    prefix: &str,
    meta: BankMeta,
    dims: [usize; 3],
    transform: TargetTransform,
) -> Result<MemoryBank> {
    let emb = [
        take_block(blocks, &format!("{prefix}/emb0"))?,
        take_block(blocks, &format!("{prefix}/emb1"))?,
        take_block(blocks, &format!("{prefix}/emb2"))?,
    ];
    let targets = take_block(blocks, &format!("{prefix}/targets"))?;
    MemoryBank::from_parts(BankParts {
        ids: meta.ids,
        authors: meta.authors,
        emb,
        avail: meta.avail,
        targets,
        dims,
        transform,
    })
}

fn load_models(
    blocks: &mut BTreeMap<String, Matrix>,
    prefix: &str,
    meta: &BranchMeta,
    dims: [usize; 3],
) -> Result<BranchModels> {
    let take_seq = |blocks: &mut BTreeMap<String, Matrix>, kind: &str, n: usize| -> Result<Vec<Matrix>> {
        (0..n)
            .map(|i| take_block(blocks, &format!("{prefix}/{kind}/{i}")))
            .collect()
    };
    let xm = take_seq(blocks, "xattn", 13)?;
    let xattn = XAttnParams {
        target_mean: meta.xattn.target_mean,
        target_std: meta.xattn.target_std,
        ..XAttnParams::init(dims, meta.xattn.model_dim, 1, 0)
    }
    .with_matrices(xm);
    let cm = take_seq(blocks, "comp", 21)?;
    let completion = CompletionParams {
        target_mean: meta.completion.target_mean,
        target_std: meta.completion.target_std,
        ..CompletionParams::init(dims, meta.completion.model_dim, 1, 0)
    }
    .with_matrices(cm);
    let sm = take_seq(blocks, "syn", 4)?;
    let synthesis = SynthesisParams {
        feat_mean: meta.synthesis.feat_mean,
        feat_std: meta.synthesis.feat_std,
        target_mean: meta.synthesis.target_mean,
        target_std: meta.synthesis.target_std,
        ..SynthesisParams::init(1, 0)
    }
    .with_matrices(sm);
    Ok(BranchModels {
        xattn,
        completion,
        synthesis,
    })
}

/// Parses bundle bytes back into a trained ensemble.
pub fn decode_bundle(bytes: &[u8]) -> Result<TrainedEnsemble> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::data("not a model bundle (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::data(format!(
            "unsupported bundle version {version} (this build reads version {VERSION})"
        )));
    }
    let meta_len = r.u64()? as usize;
    let meta: BundleMeta = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| Error::data(format!("bundle metadata: {e}")))?;

    let n_blocks = r.u64()? as usize;
    let mut blocks: BTreeMap<String, Matrix> = BTreeMap::new();
    for _ in 0..n_blocks {
        let name_len = r.u64()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::data("bundle block name is not UTF-8"))?;
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let raw = r.take(rows * cols * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mat = Matrix::new(rows, cols, data)
            .map_err(|e| Error::data(format!("bundle block '{name}': {e}")))?;
        if blocks.insert(name.clone(), mat).is_some() {
            return Err(Error::data(format!("bundle block '{name}' appears twice")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::data("bundle has trailing bytes"));
    }

    let dims = meta.dims;
    let c_bank = load_bank(&mut blocks, "bank/C", meta.c_bank, dims, meta.transform)?;
    let mut r_banks = BTreeMap::new();
    for (a, bm) in meta.r_banks {
        let bank = load_bank(&mut blocks, &format!("bank/R/{a}"), bm, dims, meta.transform)?;
        r_banks.insert(a, bank);
    }
    let mut metrics = Vec::new();
    for (mi, mm) in meta.metrics.iter().enumerate() {
        let c = load_models(&mut blocks, &format!("m{mi}/C"), &mm.c, dims)?;
        let mut rmap = BTreeMap::new();
        for (a, bm) in &mm.r {
            rmap.insert(
                a.clone(),
                load_models(&mut blocks, &format!("m{mi}/R/{a}"), bm, dims)?,
            );
        }
        metrics.push(MetricEnsemble {
            c,
            r: rmap,
            selection: mm.selection.clone(),
            recorded: mm.recorded.clone(),
        });
    }
    if !blocks.is_empty() {
        return Err(Error::data(format!(
            "bundle has {} unreferenced matrix blocks",
            blocks.len()
        )));
    }

    Ok(TrainedEnsemble {
        config: meta.config,
        dims,
        c_bank,
        r_banks,
        metrics,
        val_ids: meta.val_ids,
    })
}

pub fn load_bundle(path: &Path) -> Result<TrainedEnsemble> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::data(format!("cannot read bundle {}: {e}", path.display())))?;
    decode_bundle(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_magic_and_version() {
        assert!(decode_bundle(b"NOPE").is_err());
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&MAGIC);
        bytes.extend_from_slice(&99u32.to_le_bytes());
        bytes.extend_from_slice(&0u64.to_le_bytes());
        let err = decode_bundle(&bytes).unwrap_err().to_string();
        assert!(err.contains("version 99"), "{err}");
    }

    #[test]
    fn rejects_truncation() {
        assert!(decode_bundle(&MAGIC[..2]).is_err());
    }
}
