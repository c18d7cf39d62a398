//! Retrieval-augmented multi-modal popularity prediction engine.
//!
//! The pipeline ingests per-video visual/acoustic/textual embeddings plus
//! engagement counts, trains two complementary branches — cross-attention
//! over retrieved neighbors and masked-modality completion — and fuses them
//! through a small synthesis network. Models are trained globally (C), per
//! author (R), and selected per author by validation error (E).

pub mod cli;
pub mod completion;
pub mod config;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod evalreport;
pub mod fsutil;
pub mod memorybank;
pub mod numerics;
pub mod runtime;
pub mod train;
pub mod xattn;

#[cfg(test)]
mod testutil;

pub use config::RunConfig;
pub use error::{Error, Result};
