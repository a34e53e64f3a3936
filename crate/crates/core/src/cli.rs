//! `denoise-fet` command line: `synth`, `inject`, `denoise`, `evaluate`.
//!
//! Settings resolve as flags (or `DENOISE_FET_*` environment variables), then the
//! JSON file given by `--config`, then built-in defaults. Hyperparameter defaults
//! are ε=0.1, α=2.0, β=0.5, k=2000.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::classifier::csv_error;
use crate::correction::{
    artifact, run_pipeline, write_json, write_run_artifacts, PipelineConfig, PipelineError,
};
use crate::dataset::{
    corrupted_cells, inject_noise, load_dataset_with, make_synthetic_splits, save_dataset,
    GroundTruthRecord, NoiseSpec, Split, TypeVocabulary,
};
use crate::error::Error;
use crate::metrics::{detection_score_stratified, typing_score, DetectionScore, TypingScore};

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (config schema 1)");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "denoise-fet", version = VERSION, about = "Detect and correct noisy multi-label annotations")]
pub struct Cli {
    /// JSON run-config file.
    #[arg(long, global = true, env = "DENOISE_FET_CONFIG")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "DENOISE_FET_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, env = "DENOISE_FET_SEED")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with its ground truth.
    Synth(SynthArgs),
    /// Flip labels of a dataset at random.
    Inject(InjectArgs),
    /// Run the correction pipeline.
    Denoise(DenoiseArgs),
    /// Score predictions and/or a noise mask.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub samples: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub types: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub dim: u64,
    /// Also write a clean dev split from the same teacher.
    #[arg(long, default_value_t = 0)]
    pub dev_samples: usize,
    /// Also write a clean test split from the same teacher.
    #[arg(long, default_value_t = 0)]
    pub test_samples: usize,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// False-negative rate.
    #[arg(long = "fn", env = "DENOISE_FET_FN")]
    pub false_negative_rate: Option<f64>,
    /// False-positive rate.
    #[arg(long = "fp", env = "DENOISE_FET_FP")]
    pub false_positive_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, env = "DENOISE_FET_EPSILON")]
    pub epsilon: Option<f64>,
    #[arg(long, env = "DENOISE_FET_ALPHA")]
    pub alpha: Option<f64>,
    #[arg(long, env = "DENOISE_FET_BETA")]
    pub beta: Option<f64>,
    /// Fine-tuning steps.
    #[arg(long, env = "DENOISE_FET_K")]
    pub k: Option<usize>,
    #[arg(long, env = "DENOISE_FET_LEARNING_RATE")]
    pub learning_rate: Option<f64>,
    #[arg(long, env = "DENOISE_FET_BATCH_SIZE")]
    pub batch_size: Option<usize>,
    #[arg(long, env = "DENOISE_FET_MAX_EPOCHS")]
    pub max_epochs: Option<usize>,
    #[arg(long, env = "DENOISE_FET_EVAL_EVERY")]
    pub eval_every: Option<usize>,
    #[arg(long, env = "DENOISE_FET_PATIENCE")]
    pub patience: Option<usize>,
    #[arg(long)]
    pub delta_floor: Option<f64>,
    #[arg(long)]
    pub min_count_per_side: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predicted labels (dataset or ground-truth JSONL).
    #[arg(long, requires = "gold")]
    pub pred: Option<PathBuf>,
    /// Gold labels (dataset or ground-truth JSONL).
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Noise mask CSV from `denoise`.
    #[arg(long, requires = "flips")]
    pub mask: Option<PathBuf>,
    /// Flip log CSV from `inject`.
    #[arg(long, requires = "mask")]
    pub flips: Option<PathBuf>,
    /// Where to write the scores as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub pipeline: PipelineConfig,
    pub noise: NoiseSpec,
    pub paths: Paths,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: crate::CONFIG_SCHEMA_VERSION,
            pipeline: PipelineConfig::default(),
            noise: NoiseSpec::default(),
            paths: Paths::default(),
            out: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> crate::Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if config.schema_version != crate::CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported config schema version {}",
                config.schema_version
            )));
        }
        Ok(config)
    }
}

/// What a command produced, for printing.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    pub summary: String,
}

/// Parses `args` and runs the selected command.
pub fn execute(cli: Cli) -> CliResult<Outcome> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.out = Some(out.clone());
    }
    match cli.command {
        Command::Synth(args) => cmd_synth(&args, &config, cli.seed),
        Command::Inject(args) => cmd_inject(&args, config, cli.seed),
        Command::Denoise(args) => cmd_denoise(&args, config, cli.seed),
        Command::Evaluate(args) => cmd_evaluate(&args, &config),
    }
}

fn out_dir(config: &RunConfig) -> crate::Result<PathBuf> {
    let dir = config.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn required(value: Option<PathBuf>, what: &str) -> crate::Result<PathBuf> {
    value.ok_or_else(|| Error::Config(format!("missing {what} path")))
}

fn existing(path: PathBuf, what: &str) -> crate::Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::Config(format!(
            "{what} path does not exist: {}",
            path.display()
        )))
    }
}

pub fn cmd_synth(args: &SynthArgs, config: &RunConfig, seed: Option<u64>) -> CliResult<Outcome> {
    let seed = seed.unwrap_or(config.pipeline.seed);
    let splits = make_synthetic_splits(
        args.samples as usize,
        args.dev_samples,
        args.test_samples,
        args.types as usize,
        args.dim as usize,
        seed,
    )?;
    let dir = out_dir(config)?;
    let mut written = vec![
        dir.join("vocab.txt"),
        dir.join("train.jsonl"),
        dir.join("ground_truth.jsonl"),
    ];
    splits.train.vocabulary().save(&written[0])?;
    save_dataset(&splits.train, &written[1])?;
    GroundTruthRecord::from_dataset(&splits.train).save(&written[2])?;
    for (name, split) in [("dev.jsonl", &splits.dev), ("test.jsonl", &splits.test)] {
        if let Some(ds) = split {
            let path = dir.join(name);
            save_dataset(ds, &path)?;
            written.push(path);
        }
    }
    let positives: usize = splits.train.samples().iter().map(|s| s.labels.len()).sum();
    let cells = splits.train.len() * splits.train.n_types();
    let summary = format!(
        "synth: {} samples, {} types, dim {}, seed {}, positive cells {}/{} ({:.4})",
        splits.train.len(),
        splits.train.n_types(),
        splits.train.feature_dim(),
        seed,
        positives,
        cells,
        positives as f64 / cells as f64
    );
    Ok(Outcome { written, summary })
}

pub fn cmd_inject(
    args: &InjectArgs,
    mut config: RunConfig,
    seed: Option<u64>,
) -> CliResult<Outcome> {
    if let Some(r) = args.false_negative_rate {
        config.noise.false_negative_rate = r;
    }
    if let Some(r) = args.false_positive_rate {
        config.noise.false_positive_rate = r;
    }
    if let Some(s) = seed {
        config.noise.seed = s;
    }
    config.noise.validate()?;
    let input = existing(
        required(
            args.input.clone().or(config.paths.train.clone()),
            "input dataset",
        )?,
        "input dataset",
    )?;
    let vocab_path = existing(
        required(
            args.vocab.clone().or(config.paths.vocab.clone()),
            "vocabulary",
        )?,
        "vocabulary",
    )?;
    let vocabulary = Arc::new(TypeVocabulary::load(&vocab_path)?);
    let clean = load_dataset_with(&input, vocabulary.clone(), Split::Train)?;
    let (noisy, truth) = inject_noise(&clean, &config.noise)?;

    let dir = out_dir(&config)?;
    let written = vec![
        dir.join("noisy.jsonl"),
        dir.join("ground_truth.jsonl"),
        dir.join("flips.csv"),
    ];
    save_dataset(&noisy, &written[0])?;
    truth.save(&written[1])?;

    let flips = corrupted_cells(&truth, &noisy)?;
    let path = &written[2];
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    writer
        .write_record(["sample_id", "type", "true_label", "noisy_label"])
        .map_err(|e| csv_error(path, e))?;
    for cell in &flips {
        let noisy_label = noisy.annotation(cell.sample, cell.type_index);
        writer
            .write_record([
                clean.samples()[cell.sample].id.as_str(),
                vocabulary.name(cell.type_index),
                if noisy_label { "0" } else { "1" },
                if noisy_label { "1" } else { "0" },
            ])
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;

    let summary = format!(
        "inject: fn {} fp {} seed {}: flipped {} of {} cells",
        config.noise.false_negative_rate,
        config.noise.false_positive_rate,
        config.noise.seed,
        flips.len(),
        clean.len() * clean.n_types()
    );
    Ok(Outcome { written, summary })
}

/// Applies flag overrides on top of the file/default pipeline config.
pub fn resolve_pipeline(
    args: &DenoiseArgs,
    base: &PipelineConfig,
    seed: Option<u64>,
) -> PipelineConfig {
    let mut c = base.clone();
    macro_rules! set {
        ($flag:expr, $field:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(args.epsilon, c.selection.epsilon);
    set!(args.alpha, c.selection.alpha);
    set!(args.delta_floor, c.selection.delta_floor);
    set!(args.min_count_per_side, c.selection.min_count_per_side);
    set!(args.beta, c.train.beta);
    set!(args.k, c.train.finetune_steps);
    set!(args.learning_rate, c.train.learning_rate);
    set!(args.batch_size, c.train.batch_size);
    set!(args.max_epochs, c.train.max_epochs);
    set!(args.eval_every, c.train.eval_every);
    set!(args.patience, c.train.patience);
    set!(seed, c.seed);
    c
}

pub fn cmd_denoise(args: &DenoiseArgs, config: RunConfig, seed: Option<u64>) -> CliResult<Outcome> {
    let pipeline = resolve_pipeline(args, &config.pipeline, seed);
    pipeline.validate()?;
    let train_path = existing(
        required(
            args.train.clone().or(config.paths.train.clone()),
            "train dataset",
        )?,
        "train dataset",
    )?;
    let dev_path = existing(
        required(args.dev.clone().or(config.paths.dev.clone()), "dev dataset")?,
        "dev dataset",
    )?;
    let vocab_path = existing(
        required(
            args.vocab.clone().or(config.paths.vocab.clone()),
            "vocabulary",
        )?,
        "vocabulary",
    )?;
    let vocabulary = Arc::new(TypeVocabulary::load(&vocab_path)?);
    let train = load_dataset_with(&train_path, vocabulary.clone(), Split::Train)?;
    let dev = load_dataset_with(&dev_path, vocabulary, Split::Dev)?;

    let run_dir = out_dir(&config)?.join(pipeline.run_dir_name());
    fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    let marker = run_dir.join(artifact::INCOMPLETE);
    fs::write(&marker, "run in progress\n").map_err(|e| Error::io(&marker, e))?;

    let result = run_pipeline(&train, &dev, &pipeline)
        .map_err(CliError::from)
        .and_then(|out| Ok((write_run_artifacts(&out, &train, &run_dir)?, out)));
    let (written, out) = match result {
        Ok(v) => v,
        Err(e) => {
            // Leave the marker behind so partial artifacts are recognizable.
            let _ = fs::write(&marker, format!("run failed: {e}\n"));
            return Err(e);
        }
    };
    fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;

    let r = &out.report;
    let mut summary = format!(
        "denoise: {}\n{:<28}{:>10}\n{:<28}{:>10}\n{:<28}{:>10}\n{:<28}{:>10}\n{:<28}{:>10}",
        run_dir.display(),
        "pretrain steps",
        r.pretrain.steps_taken,
        "best dev macro-F1",
        format!("{:.4}", r.pretrain.best_dev_metric.unwrap_or(f64::NAN)),
        "flagged cells",
        r.flagged_cell_count,
        "flips 0 -> 1",
        r.flips.to_positive,
        "flips 1 -> 0",
        r.flips.to_negative,
    );
    if let Some(note) = &r.note {
        summary.push_str(&format!("\nnote: {note}"));
    }
    Ok(Outcome { written, summary })
}

fn load_labels(path: &Path, vocabulary: Arc<TypeVocabulary>) -> crate::Result<GroundTruthRecord> {
    GroundTruthRecord::load(path, vocabulary)
}

type CellKey = (String, String);

fn read_cell_csv(path: &Path, annotation_column: &str) -> crate::Result<BTreeMap<CellKey, bool>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Malformed {
                path: path.to_path_buf(),
                line: 1,
                message: format!("missing column {name}"),
            })
    };
    let (id_col, type_col, ann_col) = (
        column("sample_id")?,
        column("type")?,
        column(annotation_column)?,
    );
    let mut cells = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        cells.insert(
            (record[id_col].to_string(), record[type_col].to_string()),
            &record[ann_col] == "1",
        );
    }
    Ok(cells)
}

pub fn typing_table(score: &TypingScore) -> String {
    [
        ("macro precision", score.macro_precision),
        ("macro recall", score.macro_recall),
        ("macro F1", score.macro_f1),
        ("micro precision", score.micro_precision),
        ("micro recall", score.micro_recall),
        ("micro F1", score.micro_f1),
        ("strict accuracy", score.strict_accuracy),
    ]
    .iter()
    .map(|(k, v)| format!("{k:<28}{v:>10.4}"))
    .collect::<Vec<_>>()
    .join("\n")
}

pub fn detection_table(score: &DetectionScore) -> String {
    let mut rows = vec![
        ("detection precision".to_string(), score.precision),
        ("detection recall".to_string(), score.recall),
        ("detection F1".to_string(), score.f1),
    ];
    for (label, sub) in [
        ("annotated 1", score.annotated_positive),
        ("annotated 0", score.annotated_negative),
    ] {
        if let Some(s) = sub {
            rows.push((format!("  {label} precision"), s.precision));
            rows.push((format!("  {label} recall"), s.recall));
        }
    }
    rows.iter()
        .map(|(k, v)| format!("{k:<28}{v:>10.4}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn cmd_evaluate(args: &EvaluateArgs, config: &RunConfig) -> CliResult<Outcome> {
    if args.pred.is_none() && args.mask.is_none() {
        return Err(Error::Config(
            "nothing to evaluate: pass --pred/--gold and/or --mask/--flips".into(),
        )
        .into());
    }
    let mut flat = Map::new();
    let mut sections = Vec::new();

    if let (Some(pred_path), Some(gold_path)) = (&args.pred, &args.gold) {
        let vocab_path = existing(
            required(
                args.vocab.clone().or(config.paths.vocab.clone()),
                "vocabulary",
            )?,
            "vocabulary",
        )?;
        let vocabulary = Arc::new(TypeVocabulary::load(&vocab_path)?);
        let pred = load_labels(pred_path, vocabulary.clone())?;
        let gold = load_labels(gold_path, vocabulary)?;
        crate::dataset::check_ids_aligned(
            gold.ids().iter().map(String::as_str),
            pred.ids().iter().map(String::as_str),
        )?;
        let score = typing_score(pred.labels(), gold.labels())?;
        sections.push(typing_table(&score));
        if let Value::Object(m) =
            serde_json::to_value(score).map_err(|e| Error::Serialization(e.to_string()))?
        {
            flat.extend(m);
        }
    }

    if let (Some(mask_path), Some(flips_path)) = (&args.mask, &args.flips) {
        let flagged = read_cell_csv(mask_path, "original_annotation")?;
        let corrupted = read_cell_csv(flips_path, "noisy_label")?;
        let score = detection_score_stratified(&flagged, &corrupted);
        sections.push(detection_table(&score));
        for (k, v) in [
            ("detection_precision", score.precision),
            ("detection_recall", score.recall),
            ("detection_f1", score.f1),
        ] {
            flat.insert(k.into(), v.into());
        }
        for (prefix, sub) in [
            ("detection_annotated_positive", score.annotated_positive),
            ("detection_annotated_negative", score.annotated_negative),
        ] {
            if let Some(s) = sub {
                flat.insert(format!("{prefix}_precision"), s.precision.into());
                flat.insert(format!("{prefix}_recall"), s.recall.into());
                flat.insert(format!("{prefix}_f1"), s.f1.into());
            }
        }
    }

    let mut written = Vec::new();
    if let Some(path) = &args.json {
        write_json(&Value::Object(flat), path)?;
        written.push(path.clone());
    }
    Ok(Outcome {
        written,
        summary: sections.join("\n"),
    })
}
