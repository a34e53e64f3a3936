//! Multi-label dataset model, JSONL I/O, synthetic generation and noise injection.
//!
//! A [`Dataset`] holds samples with opaque dense feature vectors and a sparse set of
//! annotated type indices. Other modules read labels through the binary view
//! [`Dataset::annotation`], one boolean per `(sample, type)` cell.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered, duplicate-free list of type names. Position defines the type index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeVocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl TypeVocabulary {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::EmptyTypeName);
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::DuplicateType(name.clone()));
            }
        }
        Ok(Self { names, index })
    }

    /// Reads one type name per line. Trailing `\r` and blank lines are ignored.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(
            text.lines()
                .map(|l| l.trim_end_matches('\r'))
                .filter(|l| !l.trim().is_empty()),
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for name in &self.names {
            out.push_str(name);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    fn lookup(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::UnknownType(name.to_string()))
    }
}

/// A `(sample, type)` position in the label matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub sample: usize,
    pub type_index: usize,
}

impl Cell {
    pub fn new(sample: usize, type_index: usize) -> Self {
        Self { sample, type_index }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub features: Vec<f64>,
    pub labels: BTreeSet<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    vocabulary: Arc<TypeVocabulary>,
    samples: Vec<Sample>,
    split: Split,
}

impl Dataset {
    /// Validates ids, label ranges and feature dimensions.
    pub fn new(
        vocabulary: Arc<TypeVocabulary>,
        samples: Vec<Sample>,
        split: Split,
    ) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyDataset)?;
        let dim = first.features.len();
        let mut seen = HashSet::with_capacity(samples.len());
        for sample in &samples {
            if sample.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: sample.features.len(),
                });
            }
            if let Some(&bad) = sample.labels.iter().find(|&&t| t >= vocabulary.len()) {
                return Err(Error::LabelOutOfRange {
                    index: bad,
                    size: vocabulary.len(),
                });
            }
            if !seen.insert(sample.id.as_str()) {
                return Err(Error::DuplicateId(sample.id.clone()));
            }
        }
        Ok(Self {
            vocabulary,
            samples,
            split,
        })
    }

    pub fn vocabulary(&self) -> &Arc<TypeVocabulary> {
        &self.vocabulary
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_types(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.samples[0].features.len()
    }

    /// Binary annotation `ŷ` of one cell.
    pub fn annotation(&self, sample: usize, type_index: usize) -> bool {
        self.samples[sample].labels.contains(&type_index)
    }

    pub fn label_sets(&self) -> Vec<BTreeSet<usize>> {
        self.samples.iter().map(|s| s.labels.clone()).collect()
    }

    /// Returns a copy carrying `labels` instead of the current annotations.
    pub fn with_labels(&self, labels: Vec<BTreeSet<usize>>) -> Result<Self> {
        if labels.len() != self.samples.len() {
            return Err(Error::Shape(format!(
                "{} label sets for {} samples",
                labels.len(),
                self.samples.len()
            )));
        }
        let samples = self
            .samples
            .iter()
            .zip(labels)
            .map(|(s, labels)| Sample {
                id: s.id.clone(),
                features: s.features.clone(),
                labels,
            })
            .collect();
        Self::new(self.vocabulary.clone(), samples, self.split)
    }

    /// Errors unless both datasets share vocabulary and feature dimension.
    pub fn check_compatible(&self, other: &Dataset) -> Result<()> {
        if self.vocabulary.names() != other.vocabulary.names() {
            return Err(Error::Shape("datasets use different vocabularies".into()));
        }
        if self.feature_dim() != other.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim(),
                found: other.feature_dim(),
            });
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    id: String,
    features: Vec<f64>,
    labels: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct LabelRecord {
    id: String,
    labels: Vec<String>,
}

fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push((i + 1, record));
    }
    Ok(records)
}

fn write_lines<T: Serialize>(path: &Path, records: impl Iterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, &record)
            .map_err(|e| Error::Serialization(e.to_string()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn resolve_labels(vocabulary: &TypeVocabulary, names: &[String]) -> Result<BTreeSet<usize>> {
    names.iter().map(|n| vocabulary.lookup(n)).collect()
}

fn label_names(vocabulary: &TypeVocabulary, labels: &BTreeSet<usize>) -> Vec<String> {
    labels
        .iter()
        .map(|&t| vocabulary.name(t).to_string())
        .collect()
}

/// Loads a JSONL dataset, resolving label strings against the vocabulary file.
pub fn load_dataset(path: impl AsRef<Path>, vocabulary_path: impl AsRef<Path>) -> Result<Dataset> {
    let vocabulary = Arc::new(TypeVocabulary::load(vocabulary_path)?);
    load_dataset_with(path, vocabulary, Split::Train)
}

pub fn load_dataset_with(
    path: impl AsRef<Path>,
    vocabulary: Arc<TypeVocabulary>,
    split: Split,
) -> Result<Dataset> {
    let path = path.as_ref();
    let records: Vec<(usize, SampleRecord)> = read_records(path)?;
    let mut samples = Vec::with_capacity(records.len());
    let mut dim = None;
    for (line, record) in records {
        let expected = *dim.get_or_insert(record.features.len());
        if record.features.len() != expected {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                line,
                message: Error::DimensionMismatch {
                    expected,
                    found: record.features.len(),
                }
                .to_string(),
            });
        }
        samples.push(Sample {
            labels: resolve_labels(&vocabulary, &record.labels)?,
            id: record.id,
            features: record.features,
        });
    }
    Dataset::new(vocabulary, samples, split)
}

/// Writes the dataset as JSONL. Floats use the shortest round-trip representation.
pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let vocabulary = dataset.vocabulary();
    write_lines(
        path.as_ref(),
        dataset.samples().iter().map(|s| SampleRecord {
            id: s.id.clone(),
            features: s.features.clone(),
            labels: label_names(vocabulary, &s.labels),
        }),
    )
}

/// True label sets, parallel to a (possibly corrupted) [`Dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRecord {
    vocabulary: Arc<TypeVocabulary>,
    ids: Vec<String>,
    labels: Vec<BTreeSet<usize>>,
}

impl GroundTruthRecord {
    pub fn from_dataset(dataset: &Dataset) -> Self {
        Self {
            vocabulary: dataset.vocabulary().clone(),
            ids: dataset.samples().iter().map(|s| s.id.clone()).collect(),
            labels: dataset.label_sets(),
        }
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[BTreeSet<usize>] {
        &self.labels
    }

    pub fn vocabulary(&self) -> &Arc<TypeVocabulary> {
        &self.vocabulary
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn is_positive(&self, sample: usize, type_index: usize) -> bool {
        self.labels[sample].contains(&type_index)
    }

    /// Errors with the first position whose id differs from `dataset`.
    pub fn check_aligned(&self, dataset: &Dataset) -> Result<()> {
        check_ids_aligned(
            self.ids.iter().map(String::as_str),
            dataset.samples().iter().map(|s| s.id.as_str()),
        )
    }

    /// Ground truth file: dataset JSONL schema without `features`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_lines(
            path.as_ref(),
            self.ids
                .iter()
                .zip(&self.labels)
                .map(|(id, labels)| LabelRecord {
                    id: id.clone(),
                    labels: label_names(&self.vocabulary, labels),
                }),
        )
    }

    pub fn load(path: impl AsRef<Path>, vocabulary: Arc<TypeVocabulary>) -> Result<Self> {
        let path = path.as_ref();
        let records: Vec<(usize, LabelRecord)> = read_records(path)?;
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut ids = Vec::with_capacity(records.len());
        let mut labels = Vec::with_capacity(records.len());
        let mut seen = HashSet::new();
        for (_, record) in records {
            if !seen.insert(record.id.clone()) {
                return Err(Error::DuplicateId(record.id));
            }
            labels.push(resolve_labels(&vocabulary, &record.labels)?);
            ids.push(record.id);
        }
        Ok(Self {
            vocabulary,
            ids,
            labels,
        })
    }
}

pub(crate) fn check_ids_aligned<'a>(
    expected: impl ExactSizeIterator<Item = &'a str>,
    found: impl ExactSizeIterator<Item = &'a str>,
) -> Result<()> {
    let (n_expected, n_found) = (expected.len(), found.len());
    for (position, (e, f)) in expected.zip(found).enumerate() {
        if e != f {
            return Err(Error::SampleMismatch {
                position,
                expected: e.to_string(),
                found: f.to_string(),
            });
        }
    }
    if n_expected != n_found {
        return Err(Error::Shape(format!(
            "{n_expected} samples expected, {n_found} found"
        )));
    }
    Ok(())
}

/// Cells whose annotation in `noisy` disagrees with the ground truth.
pub fn corrupted_cells(truth: &GroundTruthRecord, noisy: &Dataset) -> Result<BTreeSet<Cell>> {
    truth.check_aligned(noisy)?;
    Ok(truth
        .labels
        .iter()
        .zip(noisy.samples())
        .enumerate()
        .flat_map(|(s, (true_labels, sample))| {
            true_labels
                .symmetric_difference(&sample.labels)
                .map(move |&t| Cell::new(s, t))
        })
        .collect())
}

/// Independent per-cell label flips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Probability that a true positive cell is dropped.
    pub false_negative_rate: f64,
    /// Probability that a true negative cell is added.
    pub false_positive_rate: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            false_negative_rate: 0.15,
            false_positive_rate: 0.05,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, rate) in [
            ("false_negative_rate", self.false_negative_rate),
            ("false_positive_rate", self.false_positive_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!(
                    "{name} must lie in [0, 1], got {rate}"
                )));
            }
        }
        Ok(())
    }
}

/// Corrupts a copy of `dataset`; the returned record holds the original labels.
///
/// One uniform draw is consumed per cell in row-major order, whatever the rates,
/// so the flip pattern for a given seed is stable across rate changes.
pub fn inject_noise(dataset: &Dataset, spec: &NoiseSpec) -> Result<(Dataset, GroundTruthRecord)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_types = dataset.n_types();
    let labels = dataset
        .samples()
        .iter()
        .map(|sample| {
            (0..n_types)
                .filter(|&t| {
                    let u: f64 = rng.gen();
                    if sample.labels.contains(&t) {
                        u >= spec.false_negative_rate
                    } else {
                        u < spec.false_positive_rate
                    }
                })
                .collect()
        })
        .collect();
    Ok((
        dataset.with_labels(labels)?,
        GroundTruthRecord::from_dataset(dataset),
    ))
}

/// Random linear teacher used by [`make_synthetic`].
#[derive(Debug, Clone)]
pub struct Teacher {
    /// Row-major `n_types × feature_dim`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub feature_dim: usize,
}

impl Teacher {
    pub fn logit(&self, type_index: usize, features: &[f64]) -> f64 {
        let row = &self.weights[type_index * self.feature_dim..(type_index + 1) * self.feature_dim];
        row.iter().zip(features).map(|(w, x)| w * x).sum::<f64>() + self.biases[type_index]
    }

    pub fn labels(&self, features: &[f64]) -> BTreeSet<usize> {
        (0..self.biases.len())
            .filter(|&t| self.logit(t, features) > 0.0)
            .collect()
    }
}

pub const MAX_BIAS_RESAMPLES: usize = 10_000;

/// Synthetic splits drawn from one teacher. `train` is exactly what
/// [`make_synthetic`] returns for the same arguments.
#[derive(Debug, Clone)]
pub struct SyntheticSplits {
    pub teacher: Teacher,
    pub train: Dataset,
    pub dev: Option<Dataset>,
    pub test: Option<Dataset>,
}

/// Standard-normal features labelled by a random linear teacher.
///
/// Teacher weights are `N(0, 1/d)` and biases `N(-1, 0.5²)`, which gives sparse
/// label sets. When `n_samples ≥ 2`, a type's bias is redrawn until it has at
/// least one positive and one negative sample.
pub fn make_synthetic(
    n_samples: usize,
    n_types: usize,
    feature_dim: usize,
    seed: u64,
) -> Result<(Dataset, GroundTruthRecord)> {
    let splits = make_synthetic_splits(n_samples, 0, 0, n_types, feature_dim, seed)?;
    let truth = GroundTruthRecord::from_dataset(&splits.train);
    Ok((splits.train, truth))
}

pub fn make_synthetic_splits(
    n_train: usize,
    n_dev: usize,
    n_test: usize,
    n_types: usize,
    feature_dim: usize,
    seed: u64,
) -> Result<SyntheticSplits> {
    if n_train == 0 || n_types == 0 || feature_dim == 0 {
        return Err(Error::Config(
            "sample count, type count and feature dimension must all be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weight_dist = Normal::new(0.0, 1.0 / (feature_dim as f64).sqrt())
        .map_err(|e| Error::Config(e.to_string()))?;
    let bias_dist = Normal::new(-1.0, 0.5).map_err(|e| Error::Config(e.to_string()))?;

    let weights: Vec<f64> = (0..n_types * feature_dim)
        .map(|_| weight_dist.sample(&mut rng))
        .collect();
    let mut biases: Vec<f64> = (0..n_types).map(|_| bias_dist.sample(&mut rng)).collect();
    let train_features = draw_features(&mut rng, n_train, feature_dim);

    let mut teacher = Teacher {
        weights,
        biases: biases.clone(),
        feature_dim,
    };
    if n_train >= 2 {
        for (t, bias) in biases.iter_mut().enumerate() {
            let raw: Vec<f64> = train_features
                .iter()
                .map(|x| teacher.logit(t, x) - teacher.biases[t])
                .collect();
            let mut attempts = 0;
            loop {
                let positives = raw.iter().filter(|&&r| r + *bias > 0.0).count();
                if positives > 0 && positives < raw.len() {
                    break;
                }
                attempts += 1;
                if attempts > MAX_BIAS_RESAMPLES {
                    return Err(Error::ResampleCapExceeded {
                        type_index: t,
                        attempts: MAX_BIAS_RESAMPLES,
                    });
                }
                *bias = bias_dist.sample(&mut rng);
            }
        }
        teacher.biases = biases;
    }

    let vocabulary = Arc::new(TypeVocabulary::new(
        (0..n_types).map(|t| format!("type_{t:0width$}", width = digits(n_types))),
    )?);
    let build = |prefix: &str, features: Vec<Vec<f64>>, split: Split| {
        let samples = features
            .into_iter()
            .enumerate()
            .map(|(i, x)| Sample {
                id: format!("{prefix}{i:06}"),
                labels: teacher.labels(&x),
                features: x,
            })
            .collect();
        Dataset::new(vocabulary.clone(), samples, split)
    };

    let train = build("s", train_features, Split::Train)?;
    let mut holdout_rng = ChaCha8Rng::seed_from_u64(seed);
    holdout_rng.set_stream(1);
    let dev = (n_dev > 0)
        .then(|| {
            build(
                "d",
                draw_features(&mut holdout_rng, n_dev, feature_dim),
                Split::Dev,
            )
        })
        .transpose()?;
    let test = (n_test > 0)
        .then(|| {
            build(
                "t",
                draw_features(&mut holdout_rng, n_test, feature_dim),
                Split::Test,
            )
        })
        .transpose()?;
    Ok(SyntheticSplits {
        teacher,
        train,
        dev,
        test,
    })
}

/// Data separable with a margin: one feature per type, labelled by its sign,
/// with magnitude uniform in `[margin, margin + 1]`. The teacher is the identity
/// with zero bias. Each type is positive with probability 0.3; when `train` has at
/// least two samples, its first sample is positive and its second negative for
/// every type.
pub fn make_separable_splits(
    n_train: usize,
    n_dev: usize,
    n_test: usize,
    n_types: usize,
    margin: f64,
    seed: u64,
) -> Result<SyntheticSplits> {
    if n_train == 0 || n_types == 0 {
        return Err(Error::Config(
            "sample and type counts must be at least 1".into(),
        ));
    }
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(Error::Config(format!(
            "margin must be positive, got {margin}"
        )));
    }
    let draw = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                (0..n_types)
                    .map(|_| {
                        let positive = rng.gen_bool(0.3);
                        let magnitude = margin + rng.gen::<f64>();
                        if positive {
                            magnitude
                        } else {
                            -magnitude
                        }
                    })
                    .collect()
            })
            .collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_features = draw(&mut rng, n_train);
    if n_train >= 2 {
        // Sample 0 is positive and sample 1 negative for every type.
        for v in train_features[0].iter_mut() {
            *v = v.abs();
        }
        for v in train_features[1].iter_mut() {
            *v = -v.abs();
        }
    }
    let teacher = Teacher {
        weights: (0..n_types * n_types)
            .map(|i| if i / n_types == i % n_types { 1.0 } else { 0.0 })
            .collect(),
        biases: vec![0.0; n_types],
        feature_dim: n_types,
    };
    let vocabulary = Arc::new(TypeVocabulary::new(
        (0..n_types).map(|t| format!("type_{t:0width$}", width = digits(n_types))),
    )?);
    let build = |prefix: &str, features: Vec<Vec<f64>>, split: Split| {
        let samples = features
            .into_iter()
            .enumerate()
            .map(|(i, x)| Sample {
                id: format!("{prefix}{i:06}"),
                labels: teacher.labels(&x),
                features: x,
            })
            .collect();
        Dataset::new(vocabulary.clone(), samples, split)
    };
    let train = build("s", train_features, Split::Train)?;
    let mut holdout_rng = ChaCha8Rng::seed_from_u64(seed);
    holdout_rng.set_stream(1);
    let dev = (n_dev > 0)
        .then(|| build("d", draw(&mut holdout_rng, n_dev), Split::Dev))
        .transpose()?;
    let test = (n_test > 0)
        .then(|| build("t", draw(&mut holdout_rng, n_test), Split::Test))
        .transpose()?;
    Ok(SyntheticSplits {
        teacher,
        train,
        dev,
        test,
    })
}

fn draw_features(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

fn digits(n: usize) -> usize {
    n.saturating_sub(1).to_string().len()
}
