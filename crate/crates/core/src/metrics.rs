//! Typing quality (per-sample macro and corpus-level micro scores) and
//! noise-detection quality of a flagged cell set.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypingScore {
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub strict_accuracy: f64,
}

pub fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// `hits / total`, with `0/0` counted as 1 when the other side is empty too.
fn ratio(hits: usize, total: usize, other_total: usize) -> f64 {
    match (total, other_total) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        _ => hits as f64 / total as f64,
    }
}

pub fn typing_score<T: Ord>(
    predicted: &[BTreeSet<T>],
    gold: &[BTreeSet<T>],
) -> Result<TypingScore> {
    if predicted.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} gold samples",
            predicted.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = gold.len() as f64;
    let (mut p_sum, mut r_sum, mut exact) = (0.0, 0.0, 0usize);
    let (mut hits, mut pred_total, mut gold_total) = (0usize, 0usize, 0usize);
    for (pred, gold) in predicted.iter().zip(gold) {
        let overlap = pred.intersection(gold).count();
        p_sum += ratio(overlap, pred.len(), gold.len());
        r_sum += ratio(overlap, gold.len(), pred.len());
        exact += usize::from(pred == gold);
        hits += overlap;
        pred_total += pred.len();
        gold_total += gold.len();
    }
    let (macro_precision, macro_recall) = (p_sum / n, r_sum / n);
    let micro_precision = ratio(hits, pred_total, gold_total);
    let micro_recall = ratio(hits, gold_total, pred_total);
    Ok(TypingScore {
        macro_precision,
        macro_recall,
        macro_f1: harmonic_mean(macro_precision, macro_recall),
        micro_precision,
        micro_recall,
        micro_f1: harmonic_mean(micro_precision, micro_recall),
        strict_accuracy: exact as f64 / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub flagged: usize,
    pub corrupted: usize,
    pub hits: usize,
}

impl PrfScore {
    fn from_counts(hits: usize, flagged: usize, corrupted: usize) -> Self {
        let precision = ratio(hits, flagged, corrupted);
        let recall = ratio(hits, corrupted, flagged);
        Self {
            precision,
            recall,
            f1: harmonic_mean(precision, recall),
            flagged,
            corrupted,
            hits,
        }
    }
}

/// Overall detection score plus sub-scores split by the noisy annotation of the cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub overall: PrfScore,
    /// Cells annotated positive: candidates for injected false positives.
    pub annotated_positive: Option<PrfScore>,
    /// Cells annotated negative: candidates for dropped true positives.
    pub annotated_negative: Option<PrfScore>,
}

/// Precision and recall of `flagged` against `corrupted`.
pub fn detection_score<C: Ord>(flagged: &BTreeSet<C>, corrupted: &BTreeSet<C>) -> DetectionScore {
    let hits = flagged.intersection(corrupted).count();
    let overall = PrfScore::from_counts(hits, flagged.len(), corrupted.len());
    DetectionScore {
        precision: overall.precision,
        recall: overall.recall,
        f1: overall.f1,
        overall,
        annotated_positive: None,
        annotated_negative: None,
    }
}

/// [`detection_score`] with direction sub-scores. Both maps carry the noisy
/// annotation of each cell.
pub fn detection_score_stratified<C: Ord + Clone>(
    flagged: &BTreeMap<C, bool>,
    corrupted: &BTreeMap<C, bool>,
) -> DetectionScore {
    let keys = |m: &BTreeMap<C, bool>, want: Option<bool>| -> BTreeSet<C> {
        m.iter()
            .filter(|(_, &a)| want.is_none_or(|w| w == a))
            .map(|(c, _)| c.clone())
            .collect()
    };
    let mut score = detection_score(&keys(flagged, None), &keys(corrupted, None));
    let side = |annotation: bool| {
        let f = keys(flagged, Some(annotation));
        let c = keys(corrupted, Some(annotation));
        detection_score(&f, &c).overall
    };
    score.annotated_positive = Some(side(true));
    score.annotated_negative = Some(side(false));
    score
}

/// Fraction of cells on which two aligned label assignments agree.
pub fn cell_agreement(a: &[BTreeSet<usize>], b: &[BTreeSet<usize>], n_types: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "{} vs {} label sets",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() || n_types == 0 {
        return Err(Error::EmptyDataset);
    }
    let disagreements: usize = a
        .iter()
        .zip(b)
        .map(|(x, y)| x.symmetric_difference(y).count())
        .sum();
    let total = a.len() * n_types;
    Ok((total - disagreements) as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[&'static str]) -> BTreeSet<&'static str> {
        items.iter().copied().collect()
    }

    #[test]
    fn single_sample_half_overlap() {
        let s = typing_score(&[set(&["a", "b"])], &[set(&["b", "c"])]).unwrap();
        assert_eq!(s.macro_precision, 0.5);
        assert_eq!(s.macro_recall, 0.5);
        assert_eq!(s.macro_f1, 0.5);
        assert_eq!(s.strict_accuracy, 0.0);
    }

    #[test]
    fn identity_scores_one() {
        let x = vec![set(&["a"]), set(&[]), set(&["b", "c"])];
        let s = typing_score(&x, &x).unwrap();
        for v in [
            s.macro_precision,
            s.macro_recall,
            s.macro_f1,
            s.micro_f1,
            s.strict_accuracy,
        ] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn macro_and_micro_worked_example() {
        let pred = vec![set(&["a"]), set(&["a", "b", "c", "d"])];
        let gold = vec![set(&["a"]), set(&["a", "b"])];
        let s = typing_score(&pred, &gold).unwrap();
        assert_eq!(s.macro_precision, 0.75);
        assert_eq!(s.macro_recall, 1.0);
        assert_eq!(s.micro_precision, 0.6);
        assert_eq!(s.micro_recall, 1.0);
        assert!((s.micro_f1 - 0.75).abs() < 1e-15);
    }

    #[test]
    fn empty_prediction_conventions() {
        let s = typing_score(&[set(&[])], &[set(&["a"])]).unwrap();
        assert_eq!(
            (s.macro_precision, s.macro_recall, s.macro_f1),
            (0.0, 0.0, 0.0)
        );
        let s = typing_score(&[set(&["a"])], &[set(&[])]).unwrap();
        assert_eq!((s.macro_precision, s.macro_recall), (0.0, 0.0));
        assert!(typing_score(&[set(&[])], &[]).is_err());
    }

    #[test]
    fn detection_examples() {
        let corrupted: BTreeSet<u32> = (0..12).collect();
        let s = detection_score(&corrupted, &corrupted);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));

        let s = detection_score(&BTreeSet::new(), &corrupted);
        assert_eq!(s.recall, 0.0);

        let flagged: BTreeSet<u32> = (6..16).collect();
        let s = detection_score(&flagged, &corrupted);
        assert_eq!(s.precision, 0.6);
        assert_eq!(s.recall, 0.5);
        assert!((s.f1 - 6.0 / 11.0).abs() < 1e-15);

        let none: BTreeSet<u32> = BTreeSet::new();
        assert_eq!(detection_score(&none, &none).precision, 1.0);
        assert_eq!(detection_score(&flagged, &none).precision, 0.0);
    }

    #[test]
    fn stratified_detection_splits_by_annotation() {
        let flagged = BTreeMap::from([(1, true), (2, false), (3, false)]);
        let corrupted = BTreeMap::from([(1, true), (3, false), (4, false)]);
        let s = detection_score_stratified(&flagged, &corrupted);
        assert_eq!(s.overall.hits, 2);
        let pos = s.annotated_positive.unwrap();
        assert_eq!((pos.precision, pos.recall), (1.0, 1.0));
        let neg = s.annotated_negative.unwrap();
        assert_eq!((neg.precision, neg.recall), (0.5, 0.5));
    }

    #[test]
    fn agreement_counts_cells() {
        let a = vec![BTreeSet::from([0]), BTreeSet::from([1])];
        let b = vec![BTreeSet::from([0]), BTreeSet::from([0])];
        assert_eq!(cell_agreement(&a, &b, 2).unwrap(), 0.5);
    }
}
