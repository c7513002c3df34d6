//! Confusion matrices and F1 scores.

use capsnet_core::models::{predict_classes, Model};
use capsnet_data::LabeledImageSet;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// `counts[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn from_predictions(num_classes: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        let mut m = Self::new(num_classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= num_classes || p >= num_classes {
                return Err(HarnessError::contract(
                    "confusion_matrix",
                    format!("label {t} / prediction {p} outside 0..{num_classes}"),
                ));
            }
            m.counts[t][p] += 1;
        }
        Ok(m)
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn accuracy(&self) -> f64 {
        let total: u64 = self.row_sums().iter().sum();
        let hits: u64 = (0..self.num_classes()).map(|k| self.counts[k][k]).sum();
        if total == 0 {
            0.0
        } else {
            hits as f64 / total as f64
        }
    }
}

/// F1 of every class. Precision or recall with a zero denominator is 0, and
/// so is F1 when both are 0.
pub fn per_class_f1(counts: &[Vec<u64>]) -> Result<Vec<f64>> {
    let k = counts.len();
    if counts.iter().any(|r| r.len() != k) {
        return Err(HarnessError::contract("macro_f1", "confusion matrix is not square"));
    }
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok((0..k)
        .map(|c| {
            let tp = counts[c][c];
            let predicted: u64 = counts.iter().map(|r| r[c]).sum();
            let actual: u64 = counts[c].iter().sum();
            let (p, r) = (ratio(tp, predicted), ratio(tp, actual));
            if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            }
        })
        .collect())
}

/// Unweighted mean of the per-class F1 scores.
pub fn macro_f1(counts: &[Vec<u64>]) -> Result<f64> {
    let f1 = per_class_f1(counts)?;
    if f1.is_empty() {
        return Err(HarnessError::contract("macro_f1", "empty confusion matrix"));
    }
    Ok(f1.iter().sum::<f64>() / f1.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub per_class_f1: Vec<f64>,
    pub macro_f1: f64,
    pub accuracy: f64,
}

impl Evaluation {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Result<Self> {
        Ok(Self {
            per_class_f1: per_class_f1(&confusion.counts)?,
            macro_f1: macro_f1(&confusion.counts)?,
            accuracy: confusion.accuracy(),
            confusion,
        })
    }
}

/// Predicted classes of every item of `set`, in batches.
pub fn predict_set(model: &Model<f32>, set: &LabeledImageSet, batch_size: usize) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut out = Vec::with_capacity(set.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let scores = model.predict_proba(&set.batch_tensor(chunk))?;
        out.extend(predict_classes(&scores)?);
    }
    Ok(out)
}

/// Confusion matrix and F1 scores of `model` on `set`.
pub fn evaluate(model: &Model<f32>, set: &LabeledImageSet, batch_size: usize) -> Result<Evaluation> {
    let k = model.num_classes();
    if let Some(&bad) = set.labels.iter().find(|&&l| l >= k) {
        return Err(HarnessError::contract(
            "evaluate",
            format!("label {bad} outside the model's {k} classes"),
        ));
    }
    let predicted = predict_set(model, set, batch_size)?;
    Evaluation::from_confusion(ConfusionMatrix::from_predictions(k, &set.labels, &predicted)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let m = ConfusionMatrix::from_predictions(2, &[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap();
        assert_eq!(m.counts, vec![vec![2, 0], vec![0, 2]]);
        assert_eq!(macro_f1(&m.counts).unwrap(), 1.0);
        assert_eq!(macro_f1(&[vec![5, 0], vec![0, 5]]).unwrap(), 1.0);
    }

    #[test]
    fn single_class_predictions() {
        // Balanced two-class set, everything predicted as class 0: class 0
        // has P = 1/2, R = 1, F1 = 2/3; class 1 scores 0.
        let m = ConfusionMatrix::from_predictions(2, &[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap();
        assert!((macro_f1(&m.counts).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn hand_worked_example() {
        // Class 0: TP 1, FP 0, FN 1 -> P 1, R 1/2, F1 2/3.
        // Class 1: TP 2, FP 1, FN 0 -> P 2/3, R 1, F1 4/5.
        let f1 = per_class_f1(&[vec![1, 1], vec![0, 2]]).unwrap();
        assert!((f1[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((f1[1] - 0.8).abs() < 1e-15);
        let m = macro_f1(&[vec![1, 1], vec![0, 2]]).unwrap();
        assert!((m - 0.733_333_333_333_333_3).abs() < 1e-15);
    }

    #[test]
    fn absent_class_contributes_zero() {
        let f1 = per_class_f1(&[vec![3, 0, 0], vec![0, 3, 0], vec![0, 0, 0]]).unwrap();
        assert_eq!(f1, vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn non_square_rejected() {
        assert!(macro_f1(&[vec![1, 0], vec![0]]).is_err());
        assert!(ConfusionMatrix::from_predictions(2, &[2], &[0]).is_err());
    }
}
