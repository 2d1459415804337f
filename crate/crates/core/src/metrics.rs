//! Classification metrics: confusion matrices, accuracy / precision /
//! recall / F-measure with macro or support-weighted averaging, and
//! mean +/- standard deviation aggregation over repeated runs.

use serde::{Deserialize, Serialize};

use crate::corpus::LabelCode;
use crate::error::{Error, Result};

/// Row = ground truth, column = prediction, in the order of `classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: Vec<LabelCode>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    /// Count truth/prediction pairs over the given class set.
    pub fn from_pairs(classes: &[LabelCode], truth: &[LabelCode], pred: &[LabelCode]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::param(format!(
                "{} truth labels vs {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        let mut sorted = classes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != classes.len() {
            return Err(Error::param("duplicate class codes"));
        }
        let index_of = |code: LabelCode| -> Result<usize> {
            sorted
                .binary_search(&code)
                .map_err(|_| Error::param(format!("unknown class code {code}")))
        };
        let c = sorted.len();
        let mut counts = vec![0u64; c * c];
        for (&t, &p) in truth.iter().zip(pred) {
            counts[index_of(t)? * c + index_of(p)?] += 1;
        }
        Ok(ConfusionMatrix { classes: sorted, counts })
    }

    pub fn classes(&self) -> &[LabelCode] {
        &self.classes
    }

    pub fn count(&self, truth_idx: usize, pred_idx: usize) -> u64 {
        self.counts[truth_idx * self.classes.len() + pred_idx]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn row_sum(&self, i: usize) -> u64 {
        let c = self.classes.len();
        self.counts[i * c..(i + 1) * c].iter().sum()
    }

    fn col_sum(&self, j: usize) -> u64 {
        let c = self.classes.len();
        (0..c).map(|i| self.counts[i * c + j]).sum()
    }

    fn trace(&self) -> u64 {
        let c = self.classes.len();
        (0..c).map(|i| self.counts[i * c + i]).sum()
    }
}

/// Shorthand for [`ConfusionMatrix::from_pairs`] with the class set
/// inferred from the data.
pub fn confusion(truth: &[LabelCode], pred: &[LabelCode]) -> Result<ConfusionMatrix> {
    let mut classes: Vec<LabelCode> = truth.iter().chain(pred).copied().collect();
    classes.sort_unstable();
    classes.dedup();
    ConfusionMatrix::from_pairs(&classes, truth, pred)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    Macro,
    /// Support-weighted; the reported default. On balanced splits the
    /// weighted recall coincides exactly with the accuracy.
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerClassMetrics {
    pub class: LabelCode,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub averaging: Averaging,
    pub per_class: Vec<PerClassMetrics>,
    /// Set when some class had an undefined precision or recall that
    /// was counted as zero.
    pub zero_division: bool,
}

/// Derive the report from a confusion matrix. Per-class precision is
/// tp/(tp+fp), recall tp/(tp+fn), F = 2PR/(P+R); a zero denominator
/// contributes 0 and raises the `zero_division` flag. The weighted
/// recall is computed from integer counts as trace/total, which equals
/// the support-weighted mean of the per-class recalls.
pub fn compute_metrics(cm: &ConfusionMatrix, averaging: Averaging) -> Result<MetricReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::param("empty confusion matrix"));
    }
    let c = cm.classes().len();
    let mut per_class = Vec::with_capacity(c);
    let mut zero_division = false;
    for i in 0..c {
        let tp = cm.count(i, i);
        let support = cm.row_sum(i);
        let predicted = cm.col_sum(i);
        let mut ratio = |num: u64, den: u64| -> f64 {
            if den == 0 {
                zero_division = true;
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f_measure = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(PerClassMetrics {
            class: cm.classes()[i],
            support,
            precision,
            recall,
            f_measure,
        });
    }

    let accuracy = cm.trace() as f64 / total as f64;
    let (precision, recall, f_measure) = match averaging {
        Averaging::Macro => {
            let n = c as f64;
            (
                per_class.iter().map(|m| m.precision).sum::<f64>() / n,
                per_class.iter().map(|m| m.recall).sum::<f64>() / n,
                per_class.iter().map(|m| m.f_measure).sum::<f64>() / n,
            )
        }
        Averaging::Weighted => {
            let weighted = |f: fn(&PerClassMetrics) -> f64| {
                per_class
                    .iter()
                    .map(|m| m.support as f64 * f(m))
                    .sum::<f64>()
                    / total as f64
            };
            // Support-weighted recall reduces to trace/total; computing
            // it from the integer counts keeps the balanced-split
            // identity with accuracy exact.
            (weighted(|m| m.precision), accuracy, weighted(|m| m.f_measure))
        }
    };

    Ok(MetricReport {
        accuracy,
        precision,
        recall,
        f_measure,
        averaging,
        per_class,
        zero_division,
    })
}

/// Per-metric mean and Bessel-corrected standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub precision_mean: f64,
    pub precision_std: f64,
    pub recall_mean: f64,
    pub recall_std: f64,
    pub f_measure_mean: f64,
    pub f_measure_std: f64,
}

/// Aggregate at least two runs into mean and sample standard deviation.
pub fn aggregate_runs(reports: &[MetricReport]) -> Result<AggregateReport> {
    if reports.len() < 2 {
        return Err(Error::param("aggregation needs at least 2 reports"));
    }
    let stats = |f: fn(&MetricReport) -> f64| -> (f64, f64) {
        let n = reports.len() as f64;
        let mean = reports.iter().map(f).sum::<f64>() / n;
        let var = reports.iter().map(|r| (f(r) - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var.sqrt())
    };
    let (accuracy_mean, accuracy_std) = stats(|r| r.accuracy);
    let (precision_mean, precision_std) = stats(|r| r.precision);
    let (recall_mean, recall_std) = stats(|r| r.recall);
    let (f_measure_mean, f_measure_std) = stats(|r| r.f_measure);
    Ok(AggregateReport {
        runs: reports.len(),
        accuracy_mean,
        accuracy_std,
        precision_mean,
        precision_std,
        recall_mean,
        recall_std,
        f_measure_mean,
        f_measure_std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_are_diagonal() {
        let truth = vec![1, 2, 3, 1, 2, 3];
        let cm = confusion(&truth, &truth).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(cm.count(i, j), if i == j { 2 } else { 0 });
            }
        }
        let report = compute_metrics(&cm, Averaging::Weighted).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.precision, 1.0);
        assert_eq!(report.recall, 1.0);
        assert_eq!(report.f_measure, 1.0);
    }

    #[test]
    fn direct_count_example() {
        let cm = confusion(&[1, 1, 2, 2], &[1, 2, 2, 1]).unwrap();
        assert_eq!(cm.count(0, 0), 1);
        assert_eq!(cm.count(0, 1), 1);
        assert_eq!(cm.count(1, 0), 1);
        assert_eq!(cm.count(1, 1), 1);
    }

    #[test]
    fn empty_inputs_give_zero_matrix() {
        let cm = ConfusionMatrix::from_pairs(&[1, 2], &[], &[]).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(compute_metrics(&cm, Averaging::Weighted).is_err());
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        assert!(confusion(&[1, 2], &[1]).is_err());
    }

    #[test]
    fn symmetric_two_class_example() {
        let cm = ConfusionMatrix::from_pairs(&[1, 2], &[1, 1, 1, 1, 2, 2, 2, 2], &[1, 1, 1, 2, 2, 2, 2, 1])
            .unwrap();
        // [[3, 1], [1, 3]]
        for averaging in [Averaging::Macro, Averaging::Weighted] {
            let r = compute_metrics(&cm, averaging).unwrap();
            assert!((r.accuracy - 0.75).abs() < 1e-15);
            assert!((r.precision - 0.75).abs() < 1e-15);
            assert!((r.recall - 0.75).abs() < 1e-15);
            assert!((r.f_measure - 0.75).abs() < 1e-15);
        }
    }

    #[test]
    fn weighted_recall_equals_accuracy_on_balanced_split() {
        let truth = vec![1, 1, 1, 2, 2, 2, 3, 3, 3];
        let pred = vec![1, 2, 3, 2, 2, 1, 3, 3, 1];
        let cm = confusion(&truth, &pred).unwrap();
        let r = compute_metrics(&cm, Averaging::Weighted).unwrap();
        assert_eq!(r.recall, r.accuracy);
    }

    #[test]
    fn zero_division_is_flagged() {
        // class 2 never predicted and never true-supported in pred col
        let cm = ConfusionMatrix::from_pairs(&[1, 2], &[1, 1], &[1, 1]).unwrap();
        let r = compute_metrics(&cm, Averaging::Macro).unwrap();
        assert!(r.zero_division);
    }

    #[test]
    fn aggregation_two_point_example() {
        let mut a = compute_metrics(&confusion(&[1, 2], &[1, 2]).unwrap(), Averaging::Weighted).unwrap();
        let mut b = a.clone();
        a.accuracy = 0.5;
        b.accuracy = 0.7;
        let agg = aggregate_runs(&[a.clone(), b.clone()]).unwrap();
        assert!((agg.accuracy_mean - 0.6).abs() < 1e-12);
        assert!((agg.accuracy_std - 0.1414213562373095).abs() < 1e-12);
        let flipped = aggregate_runs(&[b, a]).unwrap();
        assert_eq!(agg, flipped);
    }

    #[test]
    fn identical_reports_have_zero_std() {
        let r = compute_metrics(&confusion(&[1, 2], &[1, 2]).unwrap(), Averaging::Weighted).unwrap();
        let agg = aggregate_runs(&[r.clone(), r.clone(), r]).unwrap();
        assert_eq!(agg.accuracy_std, 0.0);
        assert_eq!(agg.f_measure_std, 0.0);
    }

    #[test]
    fn aggregation_needs_two_runs() {
        let r = compute_metrics(&confusion(&[1, 2], &[1, 2]).unwrap(), Averaging::Weighted).unwrap();
        assert!(aggregate_runs(&[r]).is_err());
    }
}
