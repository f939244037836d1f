//! Multi-class evaluation metrics.
//!
//! Per-class precision, recall and F1 are 0 whenever their denominator is 0.
//! MCC is the multi-class (Gorodkin) generalization and is 0 when undefined.

use serde::{Deserialize, Serialize};

use crate::dataset::CategoryId;
use crate::error::{Error, Result};
use crate::head::{argmax_category, topk_categories, ProbVector};
use crate::scalar::Scalar;

/// Counts with rows indexed by true category and columns by prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        let mut cm = Self::new(k);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    found: row.len(),
                });
            }
            cm.counts[t * k..(t + 1) * k].copy_from_slice(row);
        }
        Ok(cm)
    }

    pub fn from_predictions(truth: &[CategoryId], predicted: &[CategoryId], classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::DimensionMismatch {
                expected: truth.len(),
                found: predicted.len(),
            });
        }
        let mut cm = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(Error::invalid(format!("label outside 0..{classes}")));
            }
            cm.counts[t * classes + p] += 1;
        }
        Ok(cm)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: CategoryId, predicted: CategoryId) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|k| self.get(k, k)).sum()
    }

    /// Support of class `k` (true count).
    pub fn row_sum(&self, k: CategoryId) -> u64 {
        (0..self.classes).map(|p| self.get(k, p)).sum()
    }

    /// Number of predictions of class `k`.
    pub fn col_sum(&self, k: CategoryId) -> u64 {
        (0..self.classes).map(|t| self.get(t, k)).sum()
    }

    /// Relabels categories: new class `i` is old class `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = self.classes;
        let mut out = Self::new(k);
        for t in 0..k {
            for p in 0..k {
                out.counts[t * k + p] = self.get(perm[t], perm[p]);
            }
        }
        out
    }

    fn tp_fp_fn(&self, k: CategoryId) -> (f64, f64, f64) {
        let tp = self.get(k, k);
        (
            tp as f64,
            (self.col_sum(k) - tp) as f64,
            (self.row_sum(k) - tp) as f64,
        )
    }

    pub fn precision(&self, k: CategoryId) -> f64 {
        let (tp, fp, _) = self.tp_fp_fn(k);
        ratio(tp, tp + fp)
    }

    pub fn recall(&self, k: CategoryId) -> f64 {
        let (tp, _, fneg) = self.tp_fp_fn(k);
        ratio(tp, tp + fneg)
    }

    /// `2TP / (2TP + FP + FN)`.
    pub fn f1(&self, k: CategoryId) -> f64 {
        let (tp, fp, fneg) = self.tp_fp_fn(k);
        ratio(2.0 * tp, 2.0 * tp + fp + fneg)
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn macro_mean(cm: &ConfusionMatrix, per_class: impl Fn(CategoryId) -> f64) -> Result<f64> {
    if cm.classes == 0 {
        return Err(Error::invalid("no classes in confusion matrix"));
    }
    Ok((0..cm.classes).map(per_class).sum::<f64>() / cm.classes as f64)
}

pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    macro_mean(cm, |k| cm.f1(k))
}

pub fn macro_precision(cm: &ConfusionMatrix) -> Result<f64> {
    macro_mean(cm, |k| cm.precision(k))
}

pub fn macro_recall(cm: &ConfusionMatrix) -> Result<f64> {
    macro_mean(cm, |k| cm.recall(k))
}

pub fn per_class_f1(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.classes).map(|k| cm.f1(k)).collect()
}

/// `(c*s - sum p_k t_k) / sqrt((s^2 - sum p_k^2)(s^2 - sum t_k^2))` with
/// `c` the trace, `s` the total, `t` row sums and `p` column sums.
pub fn mcc(cm: &ConfusionMatrix) -> f64 {
    let c = cm.trace() as f64;
    let s = cm.total() as f64;
    let (mut pt, mut pp, mut tt) = (0.0, 0.0, 0.0);
    for k in 0..cm.classes {
        let t = cm.row_sum(k) as f64;
        let p = cm.col_sum(k) as f64;
        pt += p * t;
        pp += p * p;
        tt += t * t;
    }
    let den = (s * s - pp) * (s * s - tt);
    if den <= 0.0 {
        return 0.0;
    }
    ((c * s - pt) / den.sqrt()).clamp(-1.0, 1.0)
}

/// Fraction of instances whose truth is among the `k` most probable ids.
/// An empty input scores 0.
pub fn topk_accuracy<F: Scalar>(probas: &[ProbVector<F>], truths: &[CategoryId], k: usize) -> Result<f64> {
    if probas.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: probas.len(),
            found: truths.len(),
        });
    }
    if probas.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (p, &t) in probas.iter().zip(truths) {
        if topk_categories(p, k)?.contains(&t) {
            hits += 1;
        }
    }
    Ok(hits as f64 / probas.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub mcc: f64,
    pub top1: f64,
    pub top2: f64,
    pub top3: f64,
    pub per_class_f1: Vec<f64>,
}

impl MetricsReport {
    /// Scores predicted distributions against truths over `classes` classes.
    /// Top-2 and top-3 use `min(k, classes)`.
    pub fn compute<F: Scalar>(probas: &[ProbVector<F>], truths: &[CategoryId], classes: usize) -> Result<Self> {
        let predicted: Vec<CategoryId> = probas.iter().map(argmax_category).collect();
        let cm = ConfusionMatrix::from_predictions(truths, &predicted, classes)?;
        Self::from_parts(&cm, probas, truths)
    }

    pub fn from_parts<F: Scalar>(cm: &ConfusionMatrix, probas: &[ProbVector<F>], truths: &[CategoryId]) -> Result<Self> {
        let k = cm.classes();
        Ok(MetricsReport {
            macro_f1: macro_f1(cm)?,
            macro_precision: macro_precision(cm)?,
            macro_recall: macro_recall(cm)?,
            mcc: mcc(cm),
            top1: topk_accuracy(probas, truths, 1)?,
            top2: topk_accuracy(probas, truths, 2.min(k))?,
            top3: topk_accuracy(probas, truths, 3.min(k))?,
            per_class_f1: per_class_f1(cm),
        })
    }

    fn scalars(&self) -> [f64; 7] {
        [
            self.macro_f1,
            self.macro_precision,
            self.macro_recall,
            self.mcc,
            self.top1,
            self.top2,
            self.top3,
        ]
    }

    fn from_scalars(s: [f64; 7], per_class_f1: Vec<f64>) -> Self {
        MetricsReport {
            macro_f1: s[0],
            macro_precision: s[1],
            macro_recall: s[2],
            mcc: s[3],
            top1: s[4],
            top2: s[5],
            top3: s[6],
            per_class_f1,
        }
    }
}

/// Fieldwise mean and population standard deviation.
pub fn aggregate(reports: &[MetricsReport]) -> Result<(MetricsReport, MetricsReport)> {
    let first = reports
        .first()
        .ok_or_else(|| Error::invalid("cannot aggregate zero reports"))?;
    let k = first.per_class_f1.len();
    if let Some(bad) = reports.iter().find(|r| r.per_class_f1.len() != k) {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: bad.per_class_f1.len(),
        });
    }
    let n = reports.len() as f64;
    let mean_std = |values: Vec<f64>| {
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    };

    let mut mean_s = [0.0; 7];
    let mut std_s = [0.0; 7];
    for f in 0..7 {
        (mean_s[f], std_s[f]) = mean_std(reports.iter().map(|r| r.scalars()[f]).collect());
    }
    let (mean_pc, std_pc): (Vec<f64>, Vec<f64>) = (0..k)
        .map(|c| mean_std(reports.iter().map(|r| r.per_class_f1[c]).collect()))
        .unzip();
    Ok((
        MetricsReport::from_scalars(mean_s, mean_pc),
        MetricsReport::from_scalars(std_s, std_pc),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(rows: &[&[u64]]) -> ConfusionMatrix {
        ConfusionMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn perfect_diagonal() {
        let m = cm(&[&[3, 0, 0], &[0, 2, 0], &[0, 0, 5]]);
        assert_eq!(macro_f1(&m).unwrap(), 1.0);
        assert_eq!(mcc(&m), 1.0);
    }

    #[test]
    fn small_matrix_by_hand() {
        let m = cm(&[&[1, 1], &[0, 2]]);
        let pc = per_class_f1(&m);
        assert!((pc[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((pc[1] - 0.8).abs() < 1e-12);
        assert!((macro_f1(&m).unwrap() - 11.0 / 15.0).abs() < 1e-12);
        assert!((macro_precision(&m).unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((macro_recall(&m).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn binary_all_wrong() {
        assert_eq!(mcc(&cm(&[&[0, 7], &[7, 0]])), -1.0);
    }

    #[test]
    fn constant_prediction_has_zero_mcc() {
        assert_eq!(mcc(&cm(&[&[4, 0, 0], &[3, 0, 0], &[2, 0, 0]])), 0.0);
    }

    #[test]
    fn absent_class_scores_zero() {
        let m = cm(&[&[2, 0, 0], &[0, 2, 0], &[0, 0, 0]]);
        assert_eq!(per_class_f1(&m)[2], 0.0);
        assert!((macro_f1(&m).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn no_classes_is_an_error() {
        assert!(macro_f1(&ConfusionMatrix::new(0)).is_err());
    }

    #[test]
    fn topk_values() {
        let p = vec![ProbVector::new(vec![0.5, 0.3, 0.2]).unwrap()];
        assert_eq!(topk_accuracy(&p, &[1], 2).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&p, &[1], 1).unwrap(), 0.0);
        assert_eq!(topk_accuracy(&p, &[2], 3).unwrap(), 1.0);
        assert!(topk_accuracy(&p, &[1, 2], 1).is_err());
    }

    #[test]
    fn aggregate_mean_and_std() {
        let r = |f1: f64| MetricsReport {
            macro_f1: f1,
            macro_precision: f1,
            macro_recall: f1,
            mcc: f1,
            top1: f1,
            top2: 1.0,
            top3: 1.0,
            per_class_f1: vec![f1, 1.0],
        };
        let (mean, std) = aggregate(&[r(0.8), r(0.9)]).unwrap();
        assert!((mean.macro_f1 - 0.85).abs() < 1e-12);
        assert!((std.macro_f1 - 0.05).abs() < 1e-12);
        assert_eq!(std.top2, 0.0);
        let (mean, std) = aggregate(&[r(0.7)]).unwrap();
        assert_eq!(mean, r(0.7));
        assert!(std.scalars().iter().all(|&v| v == 0.0));
        assert!(aggregate(&[]).is_err());
    }
}
