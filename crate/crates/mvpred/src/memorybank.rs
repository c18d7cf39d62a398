//! Immutable multi-modal memory bank with exact top-k cosine retrieval.
//!
//! Banks are built from labeled, playable training records. Retrieval is an
//! exact full scan; banks stay small (a few thousand items) so exactness is
//! cheap and fully testable.

use crate::dataset::{TargetTransform, VideoRecord, N_METRICS};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Similarity sentinel for items sharing no modality with the query.
pub const EXCLUDED_SCORE: f64 = f64::NEG_INFINITY;

#[derive(Clone, Debug)]
pub struct MemoryBank {
    ids: Vec<String>,
    authors: Vec<String>,
    /// Per-modality matrices of L2-normalized embeddings; zero rows where the
    /// modality is unavailable.
    emb: [Matrix; 3],
    avail: Vec<[bool; 3]>,
    /// n×4 transformed target values.
    targets: Matrix,
    dims: [usize; 3],
    transform: TargetTransform,
}

/// Normalizes to unit L2 norm (f64 accumulation); `None` for zero vectors.
fn normalize(v: &[f32]) -> Option<Vec<f32>> {
    let norm: f64 = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm <= 1e-12 {
        return None;
    }
    Some(v.iter().map(|&x| (x as f64 / norm) as f32).collect())
}

/// Cosine similarity of two nonzero vectors, accumulated in 64-bit.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::usage(format!(
            "cosine: dimension mismatch {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu <= 1e-24 || nv <= 1e-24 {
        return Err(Error::usage("cosine: similarity undefined for zero vector"));
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// Mean cosine over modalities available in both query and item; the
/// excluded sentinel when nothing is shared.
pub fn combined_score(sims: [Option<f64>; 3], query_avail: [bool; 3], item_avail: [bool; 3]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for m in 0..3 {
        if query_avail[m] && item_avail[m] {
            if let Some(s) = sims[m] {
                sum += s;
                n += 1;
            }
        }
    }
    if n == 0 {
        EXCLUDED_SCORE
    } else {
        sum / n as f64
    }
}

#[derive(Clone, Debug)]
pub struct Neighbor {
    pub index: usize,
    pub sims: [Option<f64>; 3],
    pub score: f64,
}

#[derive(Clone, Debug)]
pub struct RetrievalResult {
    pub query_id: String,
    pub neighbors: Vec<Neighbor>,
}

impl RetrievalResult {
    pub fn mean_score(&self) -> f64 {
        if self.neighbors.is_empty() {
            0.0
        } else {
            self.neighbors.iter().map(|n| n.score).sum::<f64>() / self.neighbors.len() as f64
        }
    }
}

/// Owned decomposition of a bank, used by the model bundle format.
#[derive(Clone, Debug)]
pub struct BankParts {
    pub ids: Vec<String>,
    pub authors: Vec<String>,
    pub emb: [Matrix; 3],
    pub avail: Vec<[bool; 3]>,
    pub targets: Matrix,
    pub dims: [usize; 3],
    pub transform: TargetTransform,
}

/// A query's normalized per-modality embeddings.
pub struct Query {
    pub id: String,
    pub emb: [Option<Vec<f32>>; 3],
}

impl Query {
    pub fn from_record(r: &VideoRecord) -> Result<Self> {
        let mut emb: [Option<Vec<f32>>; 3] = [None, None, None];
        for (m, e) in r.embeddings().iter().enumerate() {
            if let Some(e) = e {
                emb[m] = normalize(e);
            }
        }
        if emb.iter().all(|e| e.is_none()) {
            return Err(Error::usage(format!(
                "record '{}' has no available modality to query with",
                r.video_id
            )));
        }
        Ok(Query {
            id: r.video_id.clone(),
            emb,
        })
    }

    pub fn availability(&self) -> [bool; 3] {
        [self.emb[0].is_some(), self.emb[1].is_some(), self.emb[2].is_some()]
    }
}

impl MemoryBank {
    pub fn build(records: &[VideoRecord], dims: [usize; 3], transform: TargetTransform) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::usage("memory bank requires at least one record"));
        }
        let n = records.len();
        let mut emb = [
            Matrix::zeros(n, dims[0]),
            Matrix::zeros(n, dims[1]),
            Matrix::zeros(n, dims[2]),
        ];
        let mut avail = vec![[false; 3]; n];
        let mut targets = Matrix::zeros(n, N_METRICS);
        let mut ids = Vec::with_capacity(n);
        let mut authors = Vec::with_capacity(n);

        for (i, r) in records.iter().enumerate() {
            if !r.playable {
                return Err(Error::usage(format!(
                    "memory bank record '{}' is not playable",
                    r.video_id
                )));
            }
            let t = r.targets.as_ref().ok_or_else(|| {
                Error::usage(format!("memory bank record '{}' is unlabeled", r.video_id))
            })?;
            for (m, e) in r.embeddings().iter().enumerate() {
                if let Some(e) = e {
                    if e.len() != dims[m] {
                        return Err(Error::data(format!(
                            "record '{}': modality {m} has dim {} but bank expects {}",
                            r.video_id,
                            e.len(),
                            dims[m]
                        )));
                    }
                    if let Some(norm) = normalize(e) {
                        for (c, v) in norm.iter().enumerate() {
                            emb[m].set(i, c, *v);
                        }
                        avail[i][m] = true;
                    }
                }
            }
            for (c, v) in transform.forward(t).iter().enumerate() {
                targets.set(i, c, *v as f32);
            }
            ids.push(r.video_id.clone());
            authors.push(r.author_id.clone());
        }

        Ok(MemoryBank {
            ids,
            authors,
            emb,
            avail,
            targets,
            dims,
            transform,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn transform(&self) -> TargetTransform {
        self.transform
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn author(&self, i: usize) -> &str {
        &self.authors[i]
    }

    pub fn availability(&self, i: usize) -> [bool; 3] {
        self.avail[i]
    }

    /// Normalized embedding row for one item and modality (zeros if absent).
    pub fn embedding(&self, i: usize, modality: usize) -> &[f32] {
        self.emb[modality].row(i)
    }

    /// Transformed target values for one item.
    pub fn target_row(&self, i: usize) -> &[f32] {
        self.targets.row(i)
    }

    /// Decomposes the bank for persistence. Embedding rows are already
    /// normalized; [`MemoryBank::from_parts`] must not renormalize them.
    pub fn to_parts(&self) -> BankParts {
        BankParts {
            ids: self.ids.clone(),
            authors: self.authors.clone(),
            emb: self.emb.clone(),
            avail: self.avail.clone(),
            targets: self.targets.clone(),
            dims: self.dims,
            transform: self.transform,
        }
    }

    pub fn from_parts(p: BankParts) -> Result<Self> {
        let n = p.ids.len();
        if p.authors.len() != n || p.avail.len() != n {
            return Err(Error::data("bank parts: id/author/avail length mismatch"));
        }
        for m in 0..3 {
            if p.emb[m].shape() != (n, p.dims[m]) {
                return Err(Error::data(format!(
                    "bank parts: modality {m} matrix has shape {:?}, expected ({n}, {})",
                    p.emb[m].shape(),
                    p.dims[m]
                )));
            }
        }
        if p.targets.shape() != (n, N_METRICS) {
            return Err(Error::data("bank parts: bad target matrix shape"));
        }
        Ok(MemoryBank {
            ids: p.ids,
            authors: p.authors,
            emb: p.emb,
            avail: p.avail,
            targets: p.targets,
            dims: p.dims,
            transform: p.transform,
        })
    }

    /// Exact top-k retrieval by combined cosine score over the full bank.
    /// Ties break by ascending video_id; `exclude_id` is never returned.
    pub fn retrieve(&self, query: &Query, k: usize, exclude_id: Option<&str>) -> Result<RetrievalResult> {
        if k == 0 {
            return Err(Error::usage("retrieve: k must be >= 1"));
        }
        let q_avail = query.availability();
        let mut scored: Vec<Neighbor> = Vec::new();
        for i in 0..self.len() {
            if exclude_id == Some(self.ids[i].as_str()) {
                continue;
            }
            let mut sims = [None; 3];
            for m in 0..3 {
                if let Some(qe) = &query.emb[m] {
                    if self.avail[i][m] {
                        // Both sides are unit-norm; the dot product is cosine.
                        let dot: f64 = qe
                            .iter()
                            .zip(self.emb[m].row(i))
                            .map(|(&a, &b)| a as f64 * b as f64)
                            .sum();
                        sims[m] = Some(dot.clamp(-1.0, 1.0));
                    }
                }
            }
            let score = combined_score(sims, q_avail, self.avail[i]);
            if score == EXCLUDED_SCORE {
                continue;
            }
            scored.push(Neighbor {
                index: i,
                sims,
                score,
            });
        }
        scored.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then_with(|| self.ids[a.index].cmp(&self.ids[b.index]))
        });
        scored.truncate(k);
        Ok(RetrievalResult {
            query_id: query.id.clone(),
            neighbors: scored,
        })
    }
}
