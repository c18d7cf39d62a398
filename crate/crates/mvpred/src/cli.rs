//! Command-line entry point: synth, validate, split, train, evaluate,
//! predict. Exit codes: 0 success, 1 usage error, 2 data error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::dataset::{
    filter_playable, generate_synthetic, load_manifest, split, write_manifest, SynthConfig,
    TargetTransform, VideoRecord,
};
use crate::ensemble::{
    self,
    bundle::{load_bundle, save_bundle},
    train_variants,
};
use crate::error::{Error, Result};
use crate::evalreport;
use crate::fsutil::atomic_write;
use crate::runtime::par_map;

#[derive(Parser)]
#[command(name = "mvpred", about = "Retrieval-augmented micro-video popularity prediction")]
struct Cli {
    /// Suppress progress logging.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        videos: usize,
        #[arg(long, default_value_t = 5)]
        authors: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        /// Modality dimensions: visual, acoustic, textual.
        #[arg(long, num_args = 3, default_values_t = [16usize, 16, 16])]
        dims: Vec<usize>,
        /// Exact number of records marked unplayable.
        #[arg(long, default_value_t = 0)]
        unplayable: usize,
        /// Per-modality drop probability on playable records.
        #[arg(long, default_value_t = 0.0)]
        missing_frac: f64,
        /// Omit targets (generates a test-pool manifest).
        #[arg(long)]
        unlabeled: bool,
        /// Also write a config file with full defaults.
        #[arg(long)]
        out_config: Option<PathBuf>,
    },
    /// Check a manifest and print ingestion statistics.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Author-stratified train/validation split into two manifests.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        ratio: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out_train: PathBuf,
        #[arg(long)]
        out_val: PathBuf,
    },
    /// Train the full C/R/E ensemble and write a model bundle.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Config file; flags below override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_bundle: PathBuf,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Evaluate a bundle on labeled records and print the metrics grid.
    Evaluate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Structured (JSON) report destination.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Evaluate all labeled records instead of the bundle's validation split.
        #[arg(long)]
        all: bool,
    },
    /// Predict popularity counts for every record in a manifest.
    Predict {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Flag-level overrides applied on top of the config file (flags > file >
/// defaults).
#[derive(Args)]
struct ConfigOverrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    transform: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    model_dim: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    mask_p: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    min_author_samples: Option<usize>,
}

impl ConfigOverrides {
    fn apply(&self, mut cfg: RunConfig) -> Result<RunConfig> {
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            };
        }
        set!(seed);
        set!(ratio);
        set!(k);
        set!(model_dim);
        set!(hidden);
        set!(mask_p);
        set!(lambda);
        set!(lr);
        set!(epochs);
        set!(batch_size);
        set!(patience);
        set!(min_author_samples);
        if let Some(t) = &self.transform {
            cfg.transform = TargetTransform::parse(t)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn log(quiet: bool, msg: &str) {
    if !quiet {
        eprintln!("{msg}");
    }
}

/// Runs the CLI and maps errors to exit codes (1 usage, 2 data).
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // help/version requests are successes, not usage errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) => 1,
                _ => 2,
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let quiet = cli.quiet;
    match cli.command {
        Command::Synth {
            out,
            seed,
            videos,
            authors,
            noise,
            dims,
            unplayable,
            missing_frac,
            unlabeled,
            out_config,
        } => {
            let dims: [usize; 3] = dims
                .try_into()
                .map_err(|_| Error::usage("--dims takes exactly 3 values"))?;
            let cfg = SynthConfig {
                n_videos: videos,
                n_authors: authors,
                dims,
                noise,
                seed,
                n_unplayable: unplayable,
                missing_frac,
                labeled: !unlabeled,
            };
            let records = generate_synthetic(&cfg)?;
            write_manifest(&records, dims, &out)?;
            log(quiet, &format!("wrote {} records to {}", records.len(), out.display()));
            if let Some(cfg_path) = out_config {
                atomic_write(&cfg_path, RunConfig::default().to_toml().as_bytes())?;
                log(quiet, &format!("wrote default config to {}", cfg_path.display()));
            }
            Ok(())
        }
        Command::Validate { manifest } => {
            let (_, report) = load_manifest(&manifest)?;
            println!(
                "records: {}\nplayable: {}\nlabeled: {}\ndims: {:?}\nmissing per modality: {:?}",
                report.total, report.playable, report.labeled, report.dims, report.missing_per_modality
            );
            Ok(())
        }
        Command::Split {
            manifest,
            ratio,
            seed,
            out_train,
            out_val,
        } => {
            let (records, report) = load_manifest(&manifest)?;
            let labeled: Vec<VideoRecord> = filter_playable(&records)
                .into_iter()
                .filter(|r| r.is_labeled())
                .collect();
            let s = split(&labeled, ratio, seed)?;
            for w in &s.warnings {
                log(quiet, &format!("warning: {w}"));
            }
            write_manifest(&s.train, report.dims, &out_train)?;
            write_manifest(&s.val, report.dims, &out_val)?;
            log(
                quiet,
                &format!("split {} labeled records into {} train / {} val", labeled.len(), s.train.len(), s.val.len()),
            );
            Ok(())
        }
        Command::Train {
            manifest,
            config,
            out_bundle,
            overrides,
        } => {
            let base = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            let cfg = overrides.apply(base)?;

            let (records, report) = load_manifest(&manifest)?;
            let playable = filter_playable(&records);
            let labeled: Vec<VideoRecord> =
                playable.iter().filter(|r| r.is_labeled()).cloned().collect();
            let unlabeled: Vec<VideoRecord> =
                playable.iter().filter(|r| !r.is_labeled()).cloned().collect();
            if labeled.is_empty() {
                return Err(Error::data("no labeled playable records to train on"));
            }
            log(
                quiet,
                &format!(
                    "training on {} labeled ({} unlabeled pool) of {} playable records",
                    labeled.len(),
                    unlabeled.len(),
                    playable.len()
                ),
            );

            let s = split(&labeled, cfg.ratio, cfg.seed)?;
            for w in &s.warnings {
                log(quiet, &format!("warning: {w}"));
            }
            let (ens, train_log) = train_variants(&s.train, &s.val, &unlabeled, report.dims, &cfg)?;
            save_bundle(&ens, &out_bundle)?;
            let losses = serde_json::to_vec_pretty(&train_log)
                .map_err(|e| Error::data(format!("loss log: {e}")))?;
            atomic_write(&losses_path(&out_bundle), &losses)?;
            log(quiet, &format!("wrote bundle to {}", out_bundle.display()));
            Ok(())
        }
        Command::Evaluate {
            bundle,
            manifest,
            report,
            all,
        } => {
            let ens = load_bundle(&bundle)?;
            let (records, _) = load_manifest(&manifest)?;
            let labeled: Vec<VideoRecord> = filter_playable(&records)
                .into_iter()
                .filter(|r| r.is_labeled())
                .collect();
            let subset: Vec<VideoRecord> = if all {
                labeled
            } else {
                let val: std::collections::BTreeSet<&str> =
                    ens.val_ids.iter().map(|s| s.as_str()).collect();
                let sub: Vec<VideoRecord> = labeled
                    .into_iter()
                    .filter(|r| val.contains(r.video_id.as_str()))
                    .collect();
                if sub.is_empty() {
                    return Err(Error::data(
                        "none of the bundle's validation records are in this manifest (try --all)",
                    ));
                }
                sub
            };
            let table = evalreport::evaluate(&ens, &subset)?;
            print!("{}", evalreport::render_text(&table));
            if let Some(p) = report {
                atomic_write(&p, evalreport::render_json(&table).as_bytes())?;
                log(quiet, &format!("wrote report to {}", p.display()));
            }
            Ok(())
        }
        Command::Predict {
            bundle,
            manifest,
            out,
        } => {
            let ens = load_bundle(&bundle)?;
            let (records, _) = load_manifest(&manifest)?;
            let rows = par_map(&records, |r| ensemble::predict_final(r, &ens))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            ensemble::write_predictions(&rows, &out)?;
            log(quiet, &format!("wrote {} predictions to {}", rows.len(), out.display()));
            Ok(())
        }
    }
}

/// Loss histories live beside the bundle.
pub fn losses_path(bundle: &Path) -> PathBuf {
    let mut os = bundle.as_os_str().to_owned();
    os.push(".losses.json");
    PathBuf::from(os)
}
