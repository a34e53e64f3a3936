//! Per-type Gaussian posterior over logits and selection of ambiguous labels.
//!
//! For each type independently: drop obvious outliers from each annotation side
//! ([`filter_obvious_noise`]), fit one Gaussian per side plus empirical priors
//! ([`fit_gaussians`]), then flag cells whose posterior `p(y=1|l)` disagrees with
//! their annotation by less than `ε` ([`is_flagged`]).

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{csv_error, LogitMatrix};
use crate::dataset::{Cell, Dataset};
use crate::error::{Error, Result};

/// Dense set of flagged `(sample, type)` cells (`Y_n`). Every other cell is clean (`Y_c`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseMask {
    n_samples: usize,
    n_types: usize,
    flags: Vec<bool>,
}

impl NoiseMask {
    pub fn empty(n_samples: usize, n_types: usize) -> Self {
        Self {
            n_samples,
            n_types,
            flags: vec![false; n_samples * n_types],
        }
    }

    pub fn from_cells(
        n_samples: usize,
        n_types: usize,
        cells: impl IntoIterator<Item = Cell>,
    ) -> Result<Self> {
        let mut mask = Self::empty(n_samples, n_types);
        for cell in cells {
            mask.insert(cell)?;
        }
        Ok(mask)
    }

    pub fn insert(&mut self, cell: Cell) -> Result<()> {
        if cell.sample >= self.n_samples || cell.type_index >= self.n_types {
            return Err(Error::Shape(format!(
                "cell ({}, {}) outside {}×{} label matrix",
                cell.sample, cell.type_index, self.n_samples, self.n_types
            )));
        }
        self.flags[cell.sample * self.n_types + cell.type_index] = true;
        Ok(())
    }

    pub fn contains(&self, sample: usize, type_index: usize) -> bool {
        self.flags[sample * self.n_types + type_index]
    }

    /// Flagged cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.flags
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(i, _)| Cell::new(i / self.n_types, i % self.n_types))
    }

    pub fn len(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.flags.iter().any(|&f| f)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_types(&self) -> usize {
        self.n_types
    }

    pub fn count_for_type(&self, type_index: usize) -> usize {
        (0..self.n_samples)
            .filter(|&s| self.contains(s, type_index))
            .count()
    }

    pub fn is_subset(&self, other: &NoiseMask) -> bool {
        self.n_samples == other.n_samples
            && self.n_types == other.n_types
            && self.flags.iter().zip(&other.flags).all(|(&a, &b)| !a || b)
    }

    pub fn check_shape(&self, n_samples: usize, n_types: usize) -> Result<()> {
        if self.n_samples != n_samples || self.n_types != n_types {
            return Err(Error::Shape(format!(
                "mask is {}×{}, dataset is {}×{}",
                self.n_samples, self.n_types, n_samples, n_types
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// Margin `ε` around 0.5; larger values flag more cells.
    pub epsilon: f64,
    /// Outlier threshold `α`, in standard deviations.
    pub alpha: f64,
    /// Lower bound applied to fitted standard deviations.
    pub delta_floor: f64,
    /// Types with fewer retained cells on either side are left untouched.
    pub min_count_per_side: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            alpha: 2.0,
            delta_floor: 1e-6,
            min_count_per_side: 2,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.epsilon) {
            return Err(Error::Config(format!(
                "epsilon must lie in [0, 0.5), got {}",
                self.epsilon
            )));
        }
        check_alpha(self.alpha)?;
        if !(self.delta_floor > 0.0 && self.delta_floor.is_finite()) {
            return Err(Error::Config(format!(
                "delta_floor must be positive, got {}",
                self.delta_floor
            )));
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "alpha must be positive, got {alpha}"
        )))
    }
}

/// One annotated cell of a single type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledLogit {
    pub cell: Cell,
    pub logit: f64,
    pub annotation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Keeps `l ≥ μ − αδ`.
    Positive,
    /// Keeps `l ≤ μ + αδ`.
    Negative,
}

/// Mean and population standard deviation. The mean gets one correction pass so
/// that a constant input yields exactly that constant.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let rough = values.iter().sum::<f64>() / n;
    let mean = rough + values.iter().map(|v| v - rough).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One pass of the outlier rule over `values`, on their own statistics.
/// Returns indices of retained values.
pub fn filter_pass(values: &[f64], alpha: f64, side: Side) -> Vec<usize> {
    if values.is_empty() {
        return Vec::new();
    }
    let (mean, std) = mean_and_std(values);
    match side {
        Side::Positive => {
            // Never above the maximum, so the largest value always survives.
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let threshold = (mean - alpha * std).min(max);
            (0..values.len())
                .filter(|&i| values[i] >= threshold)
                .collect()
        }
        Side::Negative => {
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let threshold = (mean + alpha * std).max(min);
            (0..values.len())
                .filter(|&i| values[i] <= threshold)
                .collect()
        }
    }
}

/// Repeats [`filter_pass`] until nothing is removed. Returns the surviving indices
/// into `values` and the number of passes.
pub fn filter_side(values: &[f64], alpha: f64, side: Side) -> (Vec<usize>, usize) {
    let mut kept: Vec<usize> = (0..values.len()).collect();
    let mut passes = 0;
    while !kept.is_empty() {
        passes += 1;
        let current: Vec<f64> = kept.iter().map(|&i| values[i]).collect();
        let retained = filter_pass(&current, alpha, side);
        if retained.len() == kept.len() {
            break;
        }
        kept = retained.into_iter().map(|j| kept[j]).collect();
    }
    (kept, passes)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FilterOutcome {
    /// Relatively clean positive cells `Y₁` with their logits.
    pub positives: Vec<(Cell, f64)>,
    /// Relatively clean negative cells `Y₀` with their logits.
    pub negatives: Vec<(Cell, f64)>,
    /// Passes until the fixpoint (the larger of the two sides).
    pub iterations: usize,
}

impl FilterOutcome {
    pub fn positive_logits(&self) -> Vec<f64> {
        self.positives.iter().map(|&(_, l)| l).collect()
    }

    pub fn negative_logits(&self) -> Vec<f64> {
        self.negatives.iter().map(|&(_, l)| l).collect()
    }
}

/// Iteratively removes obvious outliers from each annotation side of one type.
///
/// Comparisons are non-strict, so a zero-variance side keeps all its cells.
/// An empty side stays empty and takes no passes.
pub fn filter_obvious_noise(entries: &[LabeledLogit], alpha: f64) -> Result<FilterOutcome> {
    check_alpha(alpha)?;
    if entries.is_empty() {
        return Err(Error::Shape("no annotated cells to filter".into()));
    }
    let (pos, neg): (Vec<&LabeledLogit>, Vec<&LabeledLogit>) =
        entries.iter().partition(|e| e.annotation);
    let run = |side: &[&LabeledLogit], which: Side| {
        let logits: Vec<f64> = side.iter().map(|e| e.logit).collect();
        let (kept, passes) = filter_side(&logits, alpha, which);
        let cells = kept
            .into_iter()
            .map(|i| (side[i].cell, side[i].logit))
            .collect();
        (cells, passes)
    };
    let (positives, pos_passes) = run(&pos, Side::Positive);
    let (negatives, neg_passes) = run(&neg, Side::Negative);
    Ok(FilterOutcome {
        positives,
        negatives,
        iterations: pos_passes.max(neg_passes),
    })
}

/// Gaussian likelihoods and priors for one type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeGaussians {
    pub mu1: f64,
    pub delta1: f64,
    pub mu0: f64,
    pub delta0: f64,
    pub prior1: f64,
    pub prior0: f64,
    pub retained_pos_count: usize,
    pub retained_neg_count: usize,
    pub usable: bool,
}

/// Side-wise mean, floored population standard deviation, and count-based priors.
/// An empty side gets `μ = 0` and `δ = delta_floor`.
pub fn fit_gaussians(
    positive: &[f64],
    negative: &[f64],
    config: &SelectionConfig,
) -> TypeGaussians {
    let fit = |values: &[f64]| {
        if values.is_empty() {
            (0.0, config.delta_floor)
        } else {
            let (mu, delta) = mean_and_std(values);
            (mu, delta.max(config.delta_floor))
        }
    };
    let (mu1, delta1) = fit(positive);
    let (mu0, delta0) = fit(negative);
    let (n1, n0) = (positive.len(), negative.len());
    let total = (n0 + n1) as f64;
    let (prior1, prior0) = if n0 + n1 == 0 {
        (0.0, 0.0)
    } else {
        (n1 as f64 / total, n0 as f64 / total)
    };
    let min = config.min_count_per_side.max(1);
    TypeGaussians {
        mu1,
        delta1,
        mu0,
        delta0,
        prior1,
        prior0,
        retained_pos_count: n1,
        retained_neg_count: n0,
        usable: n1 >= min && n0 >= min,
    }
}

fn log_gaussian(l: f64, mu: f64, delta: f64) -> f64 {
    let z = (l - mu) / delta;
    -0.5 * z * z - delta.ln() - 0.5 * (2.0 * PI).ln()
}

/// `log[G(l|μ₁,δ₁)p(y=1)] − log[G(l|μ₀,δ₀)p(y=0)]`.
fn log_odds(l: f64, g: &TypeGaussians) -> f64 {
    let pos = log_gaussian(l, g.mu1, g.delta1) + g.prior1.ln();
    let neg = log_gaussian(l, g.mu0, g.delta0) + g.prior0.ln();
    pos - neg
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Bayes posterior `p(y=1|l)` under the two fitted Gaussians.
pub fn posterior_positive(logit: f64, gaussians: &TypeGaussians) -> Result<f64> {
    if !gaussians.usable {
        return Err(Error::UnusableGaussians);
    }
    Ok(logistic(log_odds(logit, gaussians)))
}

/// `p(y=0|l)`, computed with the roles of the two sides swapped.
pub fn posterior_negative(logit: f64, gaussians: &TypeGaussians) -> Result<f64> {
    if !gaussians.usable {
        return Err(Error::UnusableGaussians);
    }
    Ok(logistic(-log_odds(logit, gaussians)))
}

/// Selection rule: positives with posterior `< 0.5 + ε`, negatives with posterior `> 0.5 − ε`.
pub fn is_flagged(annotation: bool, posterior: f64, epsilon: f64) -> bool {
    if annotation {
        posterior < 0.5 + epsilon
    } else {
        posterior > 0.5 - epsilon
    }
}

/// Output of [`select_noisy`].
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub mask: NoiseMask,
    pub gaussians: Vec<TypeGaussians>,
    /// Row-major posteriors; `None` for types whose fit is unusable.
    pub posteriors: Vec<Option<f64>>,
}

impl Selection {
    pub fn posterior(&self, sample: usize, type_index: usize) -> Option<f64> {
        self.posteriors[sample * self.mask.n_types() + type_index]
    }

    /// CSV `sample_id,type,original_annotation,posterior` sorted by `(sample_id, type)`.
    pub fn write_mask_csv(&self, dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let vocabulary = dataset.vocabulary();
        let mut rows: Vec<(&str, &str, bool, f64)> = self
            .mask
            .cells()
            .map(|c| {
                (
                    dataset.samples()[c.sample].id.as_str(),
                    vocabulary.name(c.type_index),
                    dataset.annotation(c.sample, c.type_index),
                    self.posterior(c.sample, c.type_index).unwrap_or(f64::NAN),
                )
            })
            .collect();
        rows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        writer
            .write_record(["sample_id", "type", "original_annotation", "posterior"])
            .map_err(|e| csv_error(path, e))?;
        for (id, ty, annotation, posterior) in rows {
            writer
                .write_record([
                    id,
                    ty,
                    if annotation { "1" } else { "0" },
                    &posterior.to_string(),
                ])
                .map_err(|e| csv_error(path, e))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }

    /// Pretty JSON list of per-type fits, keyed by type name.
    pub fn write_gaussians_json(&self, dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
        #[derive(Serialize)]
        struct Entry<'a> {
            #[serde(rename = "type")]
            type_name: &'a str,
            flagged: usize,
            #[serde(flatten)]
            gaussians: &'a TypeGaussians,
        }
        let path = path.as_ref();
        let entries: Vec<Entry> = self
            .gaussians
            .iter()
            .enumerate()
            .map(|(t, g)| Entry {
                type_name: dataset.vocabulary().name(t),
                flagged: self.mask.count_for_type(t),
                gaussians: g,
            })
            .collect();
        let text = serde_json::to_string_pretty(&entries)
            .map_err(|e| Error::Serialization(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Entries of one type column, in sample order.
pub fn type_column(
    logits: &LogitMatrix,
    dataset: &Dataset,
    type_index: usize,
) -> Vec<LabeledLogit> {
    (0..dataset.len())
        .map(|s| LabeledLogit {
            cell: Cell::new(s, type_index),
            logit: logits.get(s, type_index),
            annotation: dataset.annotation(s, type_index),
        })
        .collect()
}

/// Filters, fits and flags every type independently.
pub fn select_noisy(
    logits: &LogitMatrix,
    dataset: &Dataset,
    config: &SelectionConfig,
) -> Result<Selection> {
    config.validate()?;
    logits.check_aligned(dataset)?;
    let gaussians = (0..dataset.n_types())
        .map(|t| {
            let filtered = filter_obvious_noise(&type_column(logits, dataset, t), config.alpha)?;
            Ok(fit_gaussians(
                &filtered.positive_logits(),
                &filtered.negative_logits(),
                config,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    select_with_gaussians(logits, dataset, &gaussians, config.epsilon)
}

/// Flags cells against already-fitted per-type Gaussians.
pub fn select_with_gaussians(
    logits: &LogitMatrix,
    dataset: &Dataset,
    gaussians: &[TypeGaussians],
    epsilon: f64,
) -> Result<Selection> {
    logits.check_aligned(dataset)?;
    let n_types = dataset.n_types();
    if gaussians.len() != n_types {
        return Err(Error::Shape(format!(
            "{} gaussian fits for {} types",
            gaussians.len(),
            n_types
        )));
    }
    let mut mask = NoiseMask::empty(dataset.len(), n_types);
    let mut posteriors = vec![None; dataset.len() * n_types];
    for (t, g) in gaussians.iter().enumerate() {
        if !g.usable {
            continue;
        }
        for s in 0..dataset.len() {
            let posterior = posterior_positive(logits.get(s, t), g)?;
            posteriors[s * n_types + t] = Some(posterior);
            if is_flagged(dataset.annotation(s, t), posterior, epsilon) {
                mask.insert(Cell::new(s, t))?;
            }
        }
    }
    Ok(Selection {
        mask,
        gaussians: gaussians.to_vec(),
        posteriors,
    })
}
