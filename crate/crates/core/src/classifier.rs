//! Linear multi-label classifier with per-type sigmoid heads.
//!
//! Pretraining minimizes the batch binary cross-entropy over every annotated cell.
//! Fine-tuning minimizes the same loss over clean cells plus `β` times the binary
//! entropy of the flagged cells, treating the flagged cells as unlabeled.
//! Both losses are normalized by the number of samples in the batch, not by the
//! number of cells.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{check_ids_aligned, Dataset, TypeVocabulary};
use crate::error::{Error, Result};
use crate::metrics::typing_score;
use crate::posterior::NoiseMask;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

pub fn sigmoid(logit: f64) -> f64 {
    if logit >= 0.0 {
        1.0 / (1.0 + (-logit).exp())
    } else {
        let e = logit.exp();
        e / (1.0 + e)
    }
}

fn clamp_probability(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Negative log-likelihood of one cell.
pub fn cell_bce(p: f64, y: bool) -> f64 {
    let p = clamp_probability(p);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Binary entropy of one cell, in nats.
pub fn cell_entropy(p: f64) -> f64 {
    let p = clamp_probability(p);
    -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
}

/// `(1/|B|) Σ -[y log p + (1-y) log(1-p)]` over the given `(p, y)` cells.
pub fn bce_loss(cells: &[(f64, bool)], batch_samples: usize) -> Result<f64> {
    if batch_samples == 0 || cells.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(cells.iter().map(|&(p, y)| cell_bce(p, y)).sum::<f64>() / batch_samples as f64)
}

/// `(1/|B|) Σ H(p)` over flagged cells; zero when none are present.
pub fn entropy_term(probabilities: &[f64], batch_samples: usize) -> f64 {
    if batch_samples == 0 || probabilities.is_empty() {
        return 0.0;
    }
    probabilities.iter().map(|&p| cell_entropy(p)).sum::<f64>() / batch_samples as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    feature_dim: usize,
    n_types: usize,
    /// Row-major `n_types × feature_dim`.
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(n_types: usize, feature_dim: usize) -> Self {
        Self {
            feature_dim,
            n_types,
            weights: vec![0.0; n_types * feature_dim],
            biases: vec![0.0; n_types],
        }
    }

    pub fn from_parts(
        n_types: usize,
        feature_dim: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
    ) -> Result<Self> {
        if weights.len() != n_types * feature_dim || biases.len() != n_types {
            return Err(Error::Shape(format!(
                "expected {} weights and {} biases, got {} and {}",
                n_types * feature_dim,
                n_types,
                weights.len(),
                biases.len()
            )));
        }
        Ok(Self {
            feature_dim,
            n_types,
            weights,
            biases,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn n_types(&self) -> usize {
        self.n_types
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn weight_row(&self, type_index: usize) -> &[f64] {
        &self.weights[type_index * self.feature_dim..(type_index + 1) * self.feature_dim]
    }

    pub fn logit(&self, type_index: usize, features: &[f64]) -> f64 {
        dot(self.weight_row(type_index), features) + self.biases[type_index]
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|v| v.is_finite())
    }

    /// Flattened parameters: weights followed by biases.
    pub fn parameters(&self) -> Vec<f64> {
        self.weights.iter().chain(&self.biases).copied().collect()
    }

    pub fn set_parameters(&mut self, params: &[f64]) {
        let (w, b) = params.split_at(self.weights.len());
        self.weights.copy_from_slice(w);
        self.biases.copy_from_slice(b);
    }

    fn apply(&mut self, gradient: &Gradient, learning_rate: f64) {
        for (w, g) in self.weights.iter_mut().zip(&gradient.weights) {
            *w -= learning_rate * g;
        }
        for (b, g) in self.biases.iter_mut().zip(&gradient.biases) {
            *b -= learning_rate * g;
        }
    }

    fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        if dataset.feature_dim() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                found: dataset.feature_dim(),
            });
        }
        if dataset.n_types() != self.n_types {
            return Err(Error::Shape(format!(
                "model has {} types, dataset vocabulary has {}",
                self.n_types,
                dataset.n_types()
            )));
        }
        Ok(())
    }

    /// Writes a JSON checkpoint tied to the vocabulary by hash.
    pub fn save(&self, vocabulary: &TypeVocabulary, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let checkpoint = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            vocabulary_hash: vocabulary_hash(vocabulary),
            model: self.clone(),
        };
        let text = serde_json::to_string_pretty(&checkpoint)
            .map_err(|e| Error::Serialization(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(vocabulary: &TypeVocabulary, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let checkpoint: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))?;
        if checkpoint.format_version != CHECKPOINT_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported checkpoint version {}",
                checkpoint.format_version
            )));
        }
        if checkpoint.vocabulary_hash != vocabulary_hash(vocabulary) {
            return Err(Error::Shape(
                "checkpoint was trained on a different vocabulary".into(),
            ));
        }
        let m = checkpoint.model;
        Self::from_parts(m.n_types, m.feature_dim, m.weights, m.biases)
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    vocabulary_hash: String,
    #[serde(flatten)]
    model: LinearModel,
}

pub fn vocabulary_hash(vocabulary: &TypeVocabulary) -> String {
    crate::sha256_hex(vocabulary.names().join("\n").as_bytes())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Raw model outputs, one row per sample in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix {
    vocabulary: Arc<TypeVocabulary>,
    sample_ids: Vec<String>,
    /// Row-major `n_samples × n_types`.
    values: Vec<f64>,
}

impl LogitMatrix {
    pub fn new(
        vocabulary: Arc<TypeVocabulary>,
        sample_ids: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != sample_ids.len() * vocabulary.len() {
            return Err(Error::Shape(format!(
                "{} values for {} samples × {} types",
                values.len(),
                sample_ids.len(),
                vocabulary.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("non-finite logit {v}")));
        }
        Ok(Self {
            vocabulary,
            sample_ids,
            values,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_types(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn get(&self, sample: usize, type_index: usize) -> f64 {
        self.values[sample * self.n_types() + type_index]
    }

    pub fn row(&self, sample: usize) -> &[f64] {
        let n = self.n_types();
        &self.values[sample * n..(sample + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn vocabulary(&self) -> &Arc<TypeVocabulary> {
        &self.vocabulary
    }

    /// Row-major `σ(l)`.
    pub fn probabilities(&self) -> Vec<f64> {
        self.values.iter().map(|&l| sigmoid(l)).collect()
    }

    /// Applies `f` to every logit of one type.
    pub fn map_type(&self, type_index: usize, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        let n = self.n_types();
        for s in 0..self.n_samples() {
            let v = &mut out.values[s * n + type_index];
            *v = f(*v);
        }
        out
    }

    pub fn check_aligned(&self, dataset: &Dataset) -> Result<()> {
        if dataset.vocabulary().names() != self.vocabulary.names() {
            return Err(Error::Shape(
                "logits and dataset use different vocabularies".into(),
            ));
        }
        check_ids_aligned(
            dataset.samples().iter().map(|s| s.id.as_str()),
            self.sample_ids.iter().map(String::as_str),
        )
    }

    /// CSV with header `sample_id,<type>...`; floats in shortest round-trip form.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut header = vec!["sample_id".to_string()];
        header.extend(self.vocabulary.names().iter().cloned());
        writer
            .write_record(&header)
            .map_err(|e| csv_error(path, e))?;
        for (s, id) in self.sample_ids.iter().enumerate() {
            let mut record = vec![id.clone()];
            record.extend(self.row(s).iter().map(|v| v.to_string()));
            writer
                .write_record(&record)
                .map_err(|e| csv_error(path, e))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>, vocabulary: Arc<TypeVocabulary>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
        let columns: Vec<&str> = header.iter().skip(1).collect();
        if header.get(0) != Some("sample_id") || columns != vocabulary.names() {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                line: 1,
                message: "header does not match vocabulary".into(),
            });
        }
        let mut ids = Vec::new();
        let mut values = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| csv_error(path, e))?;
            ids.push(record[0].to_string());
            for field in record.iter().skip(1) {
                values.push(field.parse::<f64>().map_err(|e| Error::Malformed {
                    path: path.to_path_buf(),
                    line: i + 2,
                    message: e.to_string(),
                })?);
            }
        }
        Self::new(vocabulary, ids, values)
    }
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        line: e.position().map_or(0, |p| p.line() as usize),
        message: e.to_string(),
    }
}

/// `values[s][t] = w_t · x_s + b_t` for every cell.
pub fn forward(model: &LinearModel, dataset: &Dataset) -> Result<LogitMatrix> {
    model.check_dataset(dataset)?;
    let values = dataset
        .samples()
        .iter()
        .flat_map(|s| (0..model.n_types).map(move |t| model.logit(t, &s.features)))
        .collect();
    LogitMatrix::new(
        dataset.vocabulary().clone(),
        dataset.samples().iter().map(|s| s.id.clone()).collect(),
        values,
    )
}

/// Which loss a training step minimizes.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// BCE over every cell.
    Bce,
    /// BCE over clean cells plus `beta` × entropy over the masked cells.
    Regularized { mask: &'a NoiseMask, beta: f64 },
}

/// Gradient with the same layout as [`LinearModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Gradient {
    pub fn flatten(&self) -> Vec<f64> {
        self.weights.iter().chain(&self.biases).copied().collect()
    }
}

/// Loss and analytic gradient on the samples listed in `batch`.
///
/// Per cell, `∂BCE/∂l = p − y` and `∂H/∂l = −l·p(1−p)`.
pub fn loss_and_gradient(
    model: &LinearModel,
    dataset: &Dataset,
    batch: &[usize],
    objective: Objective<'_>,
) -> Result<(f64, Gradient)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    model.check_dataset(dataset)?;
    if let Objective::Regularized { mask, .. } = objective {
        mask.check_shape(dataset.len(), dataset.n_types())?;
    }
    let d = model.feature_dim;
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut gradient = Gradient {
        weights: vec![0.0; model.weights.len()],
        biases: vec![0.0; model.n_types],
    };
    for &s in batch {
        let sample = &dataset.samples()[s];
        for t in 0..model.n_types {
            let l = model.logit(t, &sample.features);
            let p = sigmoid(l);
            let (cell_loss, dl) = match objective {
                Objective::Regularized { mask, beta } if mask.contains(s, t) => {
                    (beta * cell_entropy(p), -beta * l * p * (1.0 - p))
                }
                _ => {
                    let y = sample.labels.contains(&t);
                    (cell_bce(p, y), p - if y { 1.0 } else { 0.0 })
                }
            };
            loss += cell_loss;
            let g = dl * scale;
            let row = &mut gradient.weights[t * d..(t + 1) * d];
            for (gw, x) in row.iter_mut().zip(&sample.features) {
                *gw += g * x;
            }
            gradient.biases[t] += g;
        }
    }
    Ok((loss * scale, gradient))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Samples per mini-batch, `|B|`.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Gradient steps between dev evaluations.
    pub eval_every: usize,
    /// Consecutive non-improving evaluations tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Entropy regularization weight `β`.
    pub beta: f64,
    /// Fine-tuning steps `k`.
    pub finetune_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            batch_size: 16,
            max_epochs: 30,
            eval_every: 125,
            patience: 3,
            seed: 0,
            beta: 0.5,
            finetune_steps: 2000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("eval_every", self.eval_every),
            ("patience", self.patience),
            ("finetune_steps", self.finetune_steps),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta must be non-negative, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub step: usize,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps_taken: usize,
    /// Step whose snapshot the model was restored to.
    pub best_step: usize,
    pub best_dev_metric: Option<f64>,
    /// Evaluations at step 0, every `eval_every` steps, and at the final step.
    pub dev_metric_history: Vec<Evaluation>,
    pub stopped_early: bool,
    pub final_loss: Option<f64>,
}

struct BatchStream {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
    epoch: usize,
}

impl BatchStream {
    fn new(n_samples: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n_samples).collect(),
            batch_size,
            cursor: n_samples,
            epoch: 0,
        }
    }

    /// Returns the next batch, reshuffling at each epoch boundary.
    fn next_batch(&mut self) -> &[usize] {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
            self.epoch += 1;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = &self.order[self.cursor..end];
        self.cursor = end;
        batch
    }
}

fn gradient_step(
    model: &mut LinearModel,
    dataset: &Dataset,
    batch: &[usize],
    objective: Objective<'_>,
    learning_rate: f64,
    step: usize,
) -> Result<f64> {
    let (loss, gradient) = loss_and_gradient(model, dataset, batch, objective)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step, value: loss });
    }
    model.apply(&gradient, learning_rate);
    if !model.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            value: f64::NAN,
        });
    }
    Ok(loss)
}

/// Dev macro-F1 of predicting every type with positive logit.
pub fn dev_macro_f1(model: &LinearModel, dev: &Dataset) -> Result<f64> {
    let logits = forward(model, dev)?;
    let predicted = predict_sets(&logits);
    Ok(typing_score(&predicted, &dev.label_sets())?.macro_f1)
}

/// Type sets with `σ(l) > 0.5`.
pub fn predict_sets(logits: &LogitMatrix) -> Vec<std::collections::BTreeSet<usize>> {
    (0..logits.n_samples())
        .map(|s| {
            logits
                .row(s)
                .iter()
                .enumerate()
                .filter(|(_, &l)| l > 0.0)
                .map(|(t, _)| t)
                .collect()
        })
        .collect()
}

/// BCE pretraining with early stopping on dev macro-F1.
pub fn train_pretrain(
    model: &mut LinearModel,
    train: &Dataset,
    dev: &Dataset,
    config: &TrainConfig,
) -> Result<TrainReport> {
    train.check_compatible(dev)?;
    model.check_dataset(dev)?;
    let mut failure = None;
    let report = train_pretrain_with(model, train, config, |m| match dev_macro_f1(m, dev) {
        Ok(v) => v,
        Err(e) => {
            failure.get_or_insert(e);
            f64::NAN
        }
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

/// Pretraining against an arbitrary dev metric (higher is better).
///
/// Evaluates at step 0 and every `eval_every` steps. Stops after `patience`
/// consecutive evaluations that do not beat the best so far, or after
/// `max_epochs`, and restores the best snapshot.
pub fn train_pretrain_with<F>(
    model: &mut LinearModel,
    train: &Dataset,
    config: &TrainConfig,
    mut evaluate: F,
) -> Result<TrainReport>
where
    F: FnMut(&LinearModel) -> f64,
{
    config.validate()?;
    model.check_dataset(train)?;
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let max_steps = config.max_epochs * steps_per_epoch;
    let mut stream = BatchStream::new(train.len(), config.batch_size, config.seed);

    let first = evaluate(model);
    let mut history = vec![Evaluation {
        step: 0,
        metric: first,
    }];
    let mut best = (first, 0, model.clone());
    let mut stale = 0;
    let mut stopped_early = false;
    let mut final_loss = None;
    let mut step = 0;

    while step < max_steps {
        let batch = stream.next_batch().to_vec();
        final_loss = Some(gradient_step(
            model,
            train,
            &batch,
            Objective::Bce,
            config.learning_rate,
            step,
        )?);
        step += 1;
        if step % config.eval_every == 0 || step == max_steps {
            let metric = evaluate(model);
            history.push(Evaluation { step, metric });
            if metric > best.0 || best.0.is_nan() && !metric.is_nan() {
                best = (metric, step, model.clone());
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience && step < max_steps {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let (best_metric, best_step, best_model) = best;
    *model = best_model;
    Ok(TrainReport {
        steps_taken: step,
        best_step,
        best_dev_metric: Some(best_metric),
        dev_metric_history: history,
        stopped_early,
        final_loss,
    })
}

/// Exactly `config.finetune_steps` steps on the regularized objective.
pub fn train_finetune(
    model: &mut LinearModel,
    train: &Dataset,
    mask: &NoiseMask,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    model.check_dataset(train)?;
    mask.check_shape(train.len(), train.n_types())?;
    let objective = Objective::Regularized {
        mask,
        beta: config.beta,
    };
    let mut stream = BatchStream::new(train.len(), config.batch_size, config.seed);
    let mut final_loss = None;
    for step in 0..config.finetune_steps {
        let batch = stream.next_batch().to_vec();
        final_loss = Some(gradient_step(
            model,
            train,
            &batch,
            objective,
            config.learning_rate,
            step,
        )?);
    }
    Ok(TrainReport {
        steps_taken: config.finetune_steps,
        best_step: config.finetune_steps,
        best_dev_metric: None,
        dev_metric_history: Vec::new(),
        stopped_early: false,
        final_loss,
    })
}
