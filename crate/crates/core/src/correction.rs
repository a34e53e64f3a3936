//! End-to-end label correction: pretrain, select ambiguous labels, fine-tune on
//! the clean remainder, then relabel the flagged cells.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{
    forward, train_finetune, train_pretrain, LinearModel, LogitMatrix, TrainConfig, TrainReport,
};
use crate::dataset::{save_dataset, Dataset};
use crate::error::{Error, Result};
use crate::posterior::{select_noisy, NoiseMask, Selection, SelectionConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub selection: SelectionConfig,
    /// Overrides `train.seed` for both training stages.
    pub seed: u64,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.selection.validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(&PipelineConfig {
            train: self.train_config(),
            ..self.clone()
        })
        .expect("config serializes");
        crate::sha256_hex(canonical.as_bytes())[..16].to_string()
    }

    pub fn run_dir_name(&self) -> String {
        format!("run-{}-seed{}", self.hash(), self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Validate,
    Pretrain,
    Selection,
    Finetune,
    Relabel,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = serde_json::to_value(self).expect("stage serializes");
        f.write_str(name.as_str().unwrap_or("unknown"))
    }
}

#[derive(Debug, Error)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, PipelineError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, PipelineError> {
        self.map_err(|source| PipelineError { stage, source })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlipCounts {
    pub to_positive: usize,
    pub to_negative: usize,
}

impl FlipCounts {
    pub fn total(&self) -> usize {
        self.to_positive + self.to_negative
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeFlags {
    #[serde(rename = "type")]
    pub type_name: String,
    pub flagged: usize,
    pub usable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub pretrain_ms: f64,
    pub selection_ms: f64,
    pub finetune_ms: f64,
    pub relabel_ms: f64,
}

/// Summary of one run. Wall-clock timings are kept out of the serialized form so
/// that identical runs produce identical report files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionReport {
    pub config: PipelineConfig,
    pub flagged_cell_count: usize,
    pub per_type: Vec<TypeFlags>,
    pub flips: FlipCounts,
    pub pretrain: TrainReport,
    pub finetune: Option<TrainReport>,
    pub note: Option<String>,
    #[serde(skip)]
    pub timings: StageTimings,
}

/// Sets flagged cells to `p > 0.5`. Cells with `p = 0.5` and unflagged cells keep
/// their annotation.
pub fn relabel(probabilities: &[f64], mask: &NoiseMask, original: &Dataset) -> Result<Dataset> {
    let n_types = original.n_types();
    mask.check_shape(original.len(), n_types)?;
    if probabilities.len() != original.len() * n_types {
        return Err(Error::Shape(format!(
            "{} probabilities for {}×{} cells",
            probabilities.len(),
            original.len(),
            n_types
        )));
    }
    let mut labels = original.label_sets();
    for cell in mask.cells() {
        let p = probabilities[cell.sample * n_types + cell.type_index];
        let set = &mut labels[cell.sample];
        if p > 0.5 {
            set.insert(cell.type_index);
        } else if p < 0.5 {
            set.remove(&cell.type_index);
        }
    }
    original.with_labels(labels)
}

pub fn count_flips(before: &Dataset, after: &Dataset) -> FlipCounts {
    let mut flips = FlipCounts::default();
    for (a, b) in before.samples().iter().zip(after.samples()) {
        flips.to_positive += b.labels.difference(&a.labels).count();
        flips.to_negative += a.labels.difference(&b.labels).count();
    }
    flips
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub dataset: Dataset,
    pub report: CorrectionReport,
    pub selection: Selection,
    /// Logits of the early-stopped model, the input to selection.
    pub pretrain_logits: LogitMatrix,
    /// Final model: fine-tuned, or the pretrained one when nothing was flagged.
    pub model: LinearModel,
}

fn elapsed_ms(start: Instant) -> f64 {
    let d: Duration = start.elapsed();
    d.as_secs_f64() * 1e3
}

/// Runs pretraining, selection, fine-tuning and relabeling in order.
///
/// `dev` only drives early stopping. An empty mask skips fine-tuning and
/// relabeling and returns `train` unchanged.
pub fn run_pipeline(
    train: &Dataset,
    dev: &Dataset,
    config: &PipelineConfig,
) -> std::result::Result<PipelineOutput, PipelineError> {
    config.validate().at(Stage::Validate)?;
    train.check_compatible(dev).at(Stage::Validate)?;
    let train_config = config.train_config();
    let mut timings = StageTimings::default();

    let start = Instant::now();
    let mut model = LinearModel::zeros(train.n_types(), train.feature_dim());
    let pretrain = train_pretrain(&mut model, train, dev, &train_config).at(Stage::Pretrain)?;
    timings.pretrain_ms = elapsed_ms(start);

    let start = Instant::now();
    let pretrain_logits = forward(&model, train).at(Stage::Selection)?;
    let selection =
        select_noisy(&pretrain_logits, train, &config.selection).at(Stage::Selection)?;
    timings.selection_ms = elapsed_ms(start);

    let per_type = selection
        .gaussians
        .iter()
        .enumerate()
        .map(|(t, g)| TypeFlags {
            type_name: train.vocabulary().name(t).to_string(),
            flagged: selection.mask.count_for_type(t),
            usable: g.usable,
        })
        .collect();

    let (dataset, finetune, note) = if selection.mask.is_empty() {
        (
            train.clone(),
            None,
            Some("empty noise mask: fine-tuning and relabeling skipped".to_string()),
        )
    } else {
        let start = Instant::now();
        let report = train_finetune(&mut model, train, &selection.mask, &train_config)
            .at(Stage::Finetune)?;
        timings.finetune_ms = elapsed_ms(start);

        let start = Instant::now();
        let probabilities = forward(&model, train).at(Stage::Relabel)?.probabilities();
        let relabeled = relabel(&probabilities, &selection.mask, train).at(Stage::Relabel)?;
        timings.relabel_ms = elapsed_ms(start);
        (relabeled, Some(report), None)
    };

    let report = CorrectionReport {
        config: PipelineConfig {
            train: train_config,
            ..config.clone()
        },
        flagged_cell_count: selection.mask.len(),
        per_type,
        flips: count_flips(train, &dataset),
        pretrain,
        finetune,
        note,
        timings,
    };
    Ok(PipelineOutput {
        dataset,
        report,
        selection,
        pretrain_logits,
        model,
    })
}

/// Files written by [`write_run_artifacts`].
pub mod artifact {
    pub const DENOISED: &str = "denoised.jsonl";
    pub const MASK: &str = "mask.csv";
    pub const REPORT: &str = "report.json";
    pub const MODEL: &str = "model.json";
    pub const GAUSSIANS: &str = "gaussians.json";
    pub const LOGITS: &str = "pretrain_logits.csv";
    pub const TIMINGS: &str = "timings.json";
    /// Present while a run is in progress or after it failed.
    pub const INCOMPLETE: &str = "INCOMPLETE";
}

/// Writes every artifact of a finished run into `dir`, which must exist.
pub fn write_run_artifacts(
    output: &PipelineOutput,
    train: &Dataset,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let path = |name: &str| dir.join(name);
    save_dataset(&output.dataset, path(artifact::DENOISED))?;
    output
        .selection
        .write_mask_csv(train, path(artifact::MASK))?;
    output
        .selection
        .write_gaussians_json(train, path(artifact::GAUSSIANS))?;
    output
        .model
        .save(train.vocabulary(), path(artifact::MODEL))?;
    output.pretrain_logits.write_csv(path(artifact::LOGITS))?;
    write_json(&output.report, &path(artifact::REPORT))?;
    write_json(&output.report.timings, &path(artifact::TIMINGS))?;
    Ok([
        artifact::DENOISED,
        artifact::MASK,
        artifact::GAUSSIANS,
        artifact::MODEL,
        artifact::LOGITS,
        artifact::REPORT,
        artifact::TIMINGS,
    ]
    .iter()
    .map(|n| path(n))
    .collect())
}

pub(crate) fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::Serialization(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Cells whose label differs between two aligned datasets.
pub fn changed_cells(before: &Dataset, after: &Dataset) -> BTreeSet<crate::dataset::Cell> {
    before
        .samples()
        .iter()
        .zip(after.samples())
        .enumerate()
        .flat_map(|(s, (a, b))| {
            a.labels
                .symmetric_difference(&b.labels)
                .map(move |&t| crate::dataset::Cell::new(s, t))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Cell, Sample, Split, TypeVocabulary};
    use std::sync::Arc;

    fn two_by_two() -> Dataset {
        let vocab = Arc::new(TypeVocabulary::new(["a", "b"]).unwrap());
        Dataset::new(
            vocab,
            vec![
                Sample {
                    id: "s0".into(),
                    features: vec![1.0],
                    labels: BTreeSet::from([0]),
                },
                Sample {
                    id: "s1".into(),
                    features: vec![2.0],
                    labels: BTreeSet::from([0, 1]),
                },
            ],
            Split::Train,
        )
        .unwrap()
    }

    #[test]
    fn relabel_rules() {
        let ds = two_by_two();
        // (s0,b) flagged p=0.7 -> 1; (s0,a) unflagged p=0.01 stays 1;
        // (s1,a) flagged p=0.5 stays 1; (s1,b) flagged p=0.2 -> 0.
        let probs = [0.01, 0.7, 0.5, 0.2];
        let mask = NoiseMask::from_cells(2, 2, [Cell::new(0, 1), Cell::new(1, 0), Cell::new(1, 1)])
            .unwrap();
        let out = relabel(&probs, &mask, &ds).unwrap();
        assert_eq!(out.samples()[0].labels, BTreeSet::from([0, 1]));
        assert_eq!(out.samples()[1].labels, BTreeSet::from([0]));
        assert_eq!(ds, two_by_two(), "input untouched");
        let flips = count_flips(&ds, &out);
        assert_eq!(
            flips,
            FlipCounts {
                to_positive: 1,
                to_negative: 1
            }
        );
        assert!(flips.total() <= mask.len());
        assert!(relabel(&probs[..3], &mask, &ds).is_err());
    }

    #[test]
    fn config_hash_depends_on_values() {
        let a = PipelineConfig::default();
        let b = PipelineConfig {
            selection: SelectionConfig {
                epsilon: 0.2,
                ..Default::default()
            },
            ..Default::default()
        };
        assert_eq!(a.hash(), PipelineConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        assert!(a.run_dir_name().ends_with("-seed0"));
    }

    #[test]
    fn stage_names() {
        assert_eq!(Stage::Pretrain.to_string(), "pretrain");
        let err = PipelineError {
            stage: Stage::Finetune,
            source: Error::EmptyBatch,
        };
        assert_eq!(err.to_string(), "finetune stage failed: empty batch");
    }

    #[test]
    fn incompatible_dev_fails_validation() {
        let train = two_by_two();
        let vocab = Arc::new(TypeVocabulary::new(["a", "c"]).unwrap());
        let dev = Dataset::new(vocab, train.samples().to_vec(), Split::Dev).unwrap();
        let err = run_pipeline(&train, &dev, &PipelineConfig::default()).unwrap_err();
        assert_eq!(err.stage, Stage::Validate);
    }
}
