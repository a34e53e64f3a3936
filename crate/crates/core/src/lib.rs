//! Noisy-label detection and correction for multi-label classification.
//!
//! A partially trained classifier's logits are split per type into an annotated-positive
//! and an annotated-negative population. After obvious outliers are dropped, each
//! population is modelled as a one-dimensional Gaussian and the Bayes posterior
//! `p(y=1|l)` of every cell is compared with its annotation. Cells where the two
//! disagree are treated as unlabeled: the classifier is fine-tuned on the remaining
//! clean cells with an entropy penalty on the flagged ones, and the flagged cells are
//! finally relabeled from the fine-tuned predictions.
//!
//! Modules, bottom-up:
//!
//! - [`dataset`]: samples, vocabulary, JSONL files, synthetic data and noise injection
//! - [`classifier`]: linear sigmoid-head model, losses, pretraining and fine-tuning
//! - [`posterior`]: outlier filter, Gaussian fits, posterior and cell selection
//! - [`correction`]: the end-to-end pipeline and its run artifacts
//! - [`metrics`]: typing and detection scores
//! - [`cli`]: the `denoise-fet` command line
//!
//! ```
//! use denoise_fet::dataset::{make_synthetic_splits, inject_noise, NoiseSpec};
//! use denoise_fet::correction::{run_pipeline, PipelineConfig};
//!
//! let splits = make_synthetic_splits(300, 100, 0, 4, 6, 3).unwrap();
//! let spec = NoiseSpec { false_negative_rate: 0.2, false_positive_rate: 0.05, seed: 1 };
//! let (noisy, _truth) = inject_noise(&splits.train, &spec).unwrap();
//!
//! let mut config = PipelineConfig::default();
//! config.train.finetune_steps = 100;
//! let out = run_pipeline(&noisy, splits.dev.as_ref().unwrap(), &config).unwrap();
//! assert!(out.report.flips.total() <= out.report.flagged_cell_count);
//! ```

pub mod classifier;
pub mod cli;
pub mod correction;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod posterior;

pub use error::{Error, Result};

/// Version of the run-config file layout accepted by the CLI.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
