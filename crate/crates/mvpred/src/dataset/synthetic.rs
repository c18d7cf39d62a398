//! Seeded synthetic data generator. Each video has a latent factor; modality
//! embeddings are modality-specific linear maps of that factor plus noise,
//! and engagement counts are exponentials of affine functions of the factor
//! and a per-author effect. Everything is determined by the seed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{PopularityTargets, VideoRecord, N_METRICS};
use crate::error::{Error, Result};

const LATENT_DIM: usize = 4;
/// Log-scale baselines per metric (hearts, shares, comments, plays).
const LOG_BASE: [f64; N_METRICS] = [7.5, 4.5, 4.0, 10.0];
/// Scale of the latent contribution to log-counts.
const LATENT_SCALE: f64 = 0.9;
/// Spread of per-author log-space offsets.
const AUTHOR_SCALE: f64 = 0.35;

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub n_videos: usize,
    pub n_authors: usize,
    pub dims: [usize; 3],
    pub noise: f64,
    pub seed: u64,
    /// Exact number of records marked unplayable.
    pub n_unplayable: usize,
    /// Probability of dropping each modality on playable records.
    pub missing_frac: f64,
    /// When false, targets are omitted (a test pool manifest).
    pub labeled: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_videos: 100,
            n_authors: 5,
            dims: [16, 16, 16],
            noise: 0.05,
            seed: 0,
            n_unplayable: 0,
            missing_frac: 0.0,
            labeled: true,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_authors < 1 {
            return Err(Error::usage("n_authors must be >= 1"));
        }
        if self.n_videos == 0 {
            return Err(Error::usage("n_videos must be >= 1"));
        }
        if self.dims.iter().any(|&d| d < LATENT_DIM) {
            return Err(Error::usage(format!(
                "every modality dimension must be >= {LATENT_DIM}"
            )));
        }
        if self.n_unplayable > self.n_videos {
            return Err(Error::usage("n_unplayable cannot exceed n_videos"));
        }
        if !(0.0..1.0).contains(&self.missing_frac) {
            return Err(Error::usage("missing_frac must be in [0,1)"));
        }
        if self.noise < 0.0 {
            return Err(Error::usage("noise must be nonnegative"));
        }
        Ok(())
    }
}

fn randn_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<VideoRecord>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Modality-specific maps from latent space.
    let maps: Vec<Vec<f64>> = cfg
        .dims
        .iter()
        .map(|&d| {
            randn_vec(&mut rng, d * LATENT_DIM)
                .into_iter()
                .map(|x| x / (LATENT_DIM as f64).sqrt())
                .collect()
        })
        .collect();

    // Per-metric latent weights, normalized to a fixed scale.
    let metric_w: Vec<Vec<f64>> = (0..N_METRICS)
        .map(|_| {
            let w = randn_vec(&mut rng, LATENT_DIM);
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
            w.into_iter().map(|x| x * LATENT_SCALE / norm).collect()
        })
        .collect();

    // Per-author log-space offsets.
    let author_fx: Vec<[f64; N_METRICS]> = (0..cfg.n_authors)
        .map(|_| {
            let mut a = [0.0; N_METRICS];
            for v in a.iter_mut() {
                *v = rng.sample::<f64, _>(StandardNormal) * AUTHOR_SCALE;
            }
            a
        })
        .collect();

    // Which records are unplayable.
    let mut idx: Vec<usize> = (0..cfg.n_videos).collect();
    idx.shuffle(&mut rng);
    let mut unplayable = vec![false; cfg.n_videos];
    for &i in idx.iter().take(cfg.n_unplayable) {
        unplayable[i] = true;
    }

    let mut records = Vec::with_capacity(cfg.n_videos);
    for i in 0..cfg.n_videos {
        let author = i % cfg.n_authors;
        let z = randn_vec(&mut rng, LATENT_DIM);

        let mut embs: [Option<Vec<f32>>; 3] = [None, None, None];
        for (m, map) in maps.iter().enumerate() {
            let d = cfg.dims[m];
            let mut e = Vec::with_capacity(d);
            for r in 0..d {
                let mut acc = 0.0;
                for (k, &zk) in z.iter().enumerate() {
                    acc += map[r * LATENT_DIM + k] * zk;
                }
                acc += cfg.noise * rng.sample::<f64, _>(StandardNormal);
                e.push(acc as f32);
            }
            embs[m] = Some(e);
        }

        // Drop modalities on playable records, keeping at least one.
        let playable = !unplayable[i];
        if playable && cfg.missing_frac > 0.0 {
            let drops: Vec<bool> = (0..3).map(|_| rng.gen::<f64>() < cfg.missing_frac).collect();
            if !drops.iter().all(|&d| d) {
                for (m, drop) in drops.iter().enumerate() {
                    if *drop {
                        embs[m] = None;
                    }
                }
            }
        }

        let targets = if cfg.labeled {
            let mut counts = [0u64; N_METRICS];
            for (m, w) in metric_w.iter().enumerate() {
                let dot: f64 = w.iter().zip(&z).map(|(a, b)| a * b).sum();
                let log_y = LOG_BASE[m] + dot + author_fx[author][m];
                counts[m] = log_y.exp().round().max(0.0) as u64;
            }
            Some(PopularityTargets::from_array(counts))
        } else {
            None
        };

        let [visual, acoustic, textual] = embs;
        records.push(VideoRecord {
            video_id: format!("v{i:05}"),
            author_id: format!("a{:02}", author),
            playable,
            visual,
            acoustic,
            textual,
            targets,
        });
    }
    Ok(records)
}
