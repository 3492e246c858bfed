//! Confusion counts over per-pixel per-layer binary decisions.

use std::ops::{Add, AddAssign};

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

/// Precision, recall, accuracy and F1 derived from a [`ConfusionCounts`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Records one decision.
    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    /// Zero denominators yield 0, except that a run with no positives at all
    /// (`tp = fp = fn = 0`) scores 1 on precision, recall and F1.
    pub fn summarize(&self) -> Summary {
        let (tp, fp, fn_, tn) = (self.tp as f64, self.fp as f64, self.fn_ as f64, self.tn as f64);
        let total = tp + fp + fn_ + tn;
        let accuracy = if total > 0.0 { (tp + tn) / total } else { 1.0 };
        if self.tp == 0 && self.fp == 0 && self.fn_ == 0 {
            return Summary {
                precision: 1.0,
                recall: 1.0,
                accuracy,
                f1: 1.0,
            };
        }
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * (precision * recall) / (precision + recall)
        } else {
            0.0
        };
        Summary {
            precision,
            recall,
            accuracy,
            f1,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.tp += rhs.tp;
        self.fp += rhs.fp;
        self.fn_ += rhs.fn_;
        self.tn += rhs.tn;
    }
}

impl Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ConfusionCounts::default(), Add::add)
    }
}

/// Counts decisions between two binary slices of equal length.
pub fn accumulate_slices(pred: &[u8], truth: &[u8]) -> Result<ConfusionCounts> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!(
            "prediction has {} decisions, truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut counts = ConfusionCounts::default();
    for (i, (&p, &t)) in pred.iter().zip(truth).enumerate() {
        if p > 1 || t > 1 {
            return Err(Error::validation(format!("non-binary decision at index {i}")));
        }
        counts.record(p == 1, t == 1);
    }
    Ok(counts)
}

/// Counts decisions between a predicted and a ground-truth layout batch.
pub fn accumulate(pred: &Tensor4<u8>, truth: &Tensor4<u8>) -> Result<ConfusionCounts> {
    pred.same_shape(truth, "prediction and truth batches differ")?;
    accumulate_slices(pred.as_slice(), truth.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    #[test]
    fn direct_arithmetic() {
        let s = counts(3, 1, 1, 5).summarize();
        assert_eq!(s.precision, 0.75);
        assert_eq!(s.recall, 0.75);
        assert_eq!(s.f1, 0.75);
        assert_eq!(s.accuracy, 0.8);
    }

    #[test]
    fn all_negative_agreement_is_perfect() {
        let s = counts(0, 0, 0, 17).summarize();
        assert_eq!((s.precision, s.recall, s.f1, s.accuracy), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn no_true_positives_scores_zero() {
        let s = counts(0, 2, 3, 0).summarize();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn all_ones_agreement() {
        let ones = Tensor4::filled([2, 8, 4, 4], 1u8);
        let c = accumulate(&ones, &ones).unwrap();
        assert_eq!(c, counts(256, 0, 0, 0));
    }

    #[test]
    fn all_zero_prediction() {
        let pred = Tensor4::filled([1, 8, 4, 4], 0u8);
        let mut truth = pred.clone();
        truth.set(0, 3, 1, 1, 1);
        truth.set(0, 5, 2, 0, 1);
        let c = accumulate(&pred, &truth).unwrap();
        assert_eq!(c, counts(0, 0, 2, 126));
    }

    #[test]
    fn shape_mismatch() {
        let a = Tensor4::filled([1, 8, 4, 4], 0u8);
        let b = Tensor4::filled([1, 8, 4, 5], 0u8);
        assert!(accumulate(&a, &b).is_err());
    }

    #[test]
    fn non_binary_rejected() {
        assert!(accumulate_slices(&[0, 2], &[0, 1]).is_err());
    }
}
