//! Data model, manifest ingestion, playability filtering, stratified
//! splitting, target transforms and the synthetic data generator.

pub mod manifest;
pub mod split;
pub mod synthetic;
pub mod transform;

pub use manifest::{load_manifest, write_manifest, ManifestReport};
pub use split::{split, DatasetSplit};
pub use synthetic::{generate_synthetic, SynthConfig};
pub use transform::TargetTransform;

use serde::{Deserialize, Serialize};

pub const N_METRICS: usize = 4;
pub const METRIC_NAMES: [&str; N_METRICS] = ["hearts", "shares", "comments", "plays"];
pub const MODALITY_NAMES: [&str; 3] = ["visual", "acoustic", "textual"];

/// The four predicted engagement counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopularityTargets {
    pub hearts: u64,
    pub shares: u64,
    pub comments: u64,
    pub plays: u64,
}

impl PopularityTargets {
    pub fn as_array(&self) -> [u64; N_METRICS] {
        [self.hearts, self.shares, self.comments, self.plays]
    }

    pub fn from_array(a: [u64; N_METRICS]) -> Self {
        PopularityTargets {
            hearts: a[0],
            shares: a[1],
            comments: a[2],
            plays: a[3],
        }
    }
}

/// One micro video with per-modality embeddings and optional labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub author_id: String,
    pub playable: bool,
    pub visual: Option<Vec<f32>>,
    pub acoustic: Option<Vec<f32>>,
    pub textual: Option<Vec<f32>>,
    pub targets: Option<PopularityTargets>,
}

impl VideoRecord {
    pub fn embeddings(&self) -> [Option<&Vec<f32>>; 3] {
        [self.visual.as_ref(), self.acoustic.as_ref(), self.textual.as_ref()]
    }

    pub fn availability(&self) -> [bool; 3] {
        [self.visual.is_some(), self.acoustic.is_some(), self.textual.is_some()]
    }

    pub fn n_available(&self) -> usize {
        self.availability().iter().filter(|&&b| b).count()
    }

    pub fn is_labeled(&self) -> bool {
        self.targets.is_some()
    }
}

/// Keeps only playable records, preserving input order. Idempotent.
pub fn filter_playable(records: &[VideoRecord]) -> Vec<VideoRecord> {
    records.iter().filter(|r| r.playable).cloned().collect()
}
