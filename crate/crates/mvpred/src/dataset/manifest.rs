//! Line-delimited JSON manifests. The first line is a header object
//! declaring the per-modality embedding dimensions; every following line is
//! one video record.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{VideoRecord, MODALITY_NAMES};
use crate::error::{Error, Result};
use crate::fsutil::atomic_write;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub d_v: usize,
    pub d_a: usize,
    pub d_t: usize,
}

impl ManifestHeader {
    pub fn dims(&self) -> [usize; 3] {
        [self.d_v, self.d_a, self.d_t]
    }

    pub fn from_dims(dims: [usize; 3]) -> Self {
        ManifestHeader {
            d_v: dims[0],
            d_a: dims[1],
            d_t: dims[2],
        }
    }
}

/// Summary produced while validating a manifest.
#[derive(Clone, Debug, Serialize)]
pub struct ManifestReport {
    pub dims: [usize; 3],
    pub total: usize,
    pub playable: usize,
    pub labeled: usize,
    pub missing_per_modality: [usize; 3],
}

pub fn load_manifest(path: &Path) -> Result<(Vec<VideoRecord>, ManifestReport)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read manifest {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();

    let (_, header_line) = lines
        .next()
        .ok_or_else(|| Error::data("manifest is empty (missing header line)"))?;
    let header: ManifestHeader = serde_json::from_str(header_line)
        .map_err(|e| Error::data(format!("line 1: bad header: {e}")))?;
    let dims = header.dims();

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut missing = [0usize; 3];
    let mut playable = 0usize;
    let mut labeled = 0usize;

    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: VideoRecord = serde_json::from_str(line)
            .map_err(|e| Error::data(format!("line {lineno}: malformed record: {e}")))?;
        if !seen.insert(rec.video_id.clone()) {
            return Err(Error::data(format!(
                "line {lineno}: duplicate video_id '{}'",
                rec.video_id
            )));
        }
        for (m, emb) in rec.embeddings().iter().enumerate() {
            match emb {
                Some(e) => {
                    if e.len() != dims[m] {
                        return Err(Error::data(format!(
                            "line {lineno}: {} embedding has dimension {} but header declares {}",
                            MODALITY_NAMES[m],
                            e.len(),
                            dims[m]
                        )));
                    }
                    if e.iter().any(|x| !x.is_finite()) {
                        return Err(Error::data(format!(
                            "line {lineno}: {} embedding contains non-finite values",
                            MODALITY_NAMES[m]
                        )));
                    }
                }
                None => missing[m] += 1,
            }
        }
        if rec.playable && rec.n_available() == 0 {
            return Err(Error::data(format!(
                "line {lineno}: playable record '{}' has no modality",
                rec.video_id
            )));
        }
        if rec.playable {
            playable += 1;
        }
        if rec.is_labeled() {
            labeled += 1;
        }
        records.push(rec);
    }

    let report = ManifestReport {
        dims,
        total: records.len(),
        playable,
        labeled,
        missing_per_modality: missing,
    };
    Ok((records, report))
}

pub fn write_manifest(records: &[VideoRecord], dims: [usize; 3], path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&serde_json::to_string(&ManifestHeader::from_dims(dims)).expect("header json"));
    out.push('\n');
    for rec in records {
        out.push_str(&serde_json::to_string(rec).expect("record json"));
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}
