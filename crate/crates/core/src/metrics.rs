//! Confusion counts, threshold metrics and rank-based ROC-AUC.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {scores} scores vs {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("no samples to evaluate")]
    Empty,
    #[error("ROC-AUC needs at least one positive and one negative label")]
    OneClassOnly,
}

/// Default decision threshold: predict anomaly when `score >= 0.5`.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, predicted: u8, label: u8) {
        match (predicted, label) {
            (1, 1) => self.tp += 1,
            (1, _) => self.fp += 1,
            (_, 1) => self.fn_ += 1,
            _ => self.tn += 1,
        }
    }

    /// Counts from hard predictions.
    pub fn from_predictions(predicted: &[u8], labels: &[u8]) -> Result<Self, MetricsError> {
        check_lengths(predicted.len(), labels.len())?;
        let mut c = Self::default();
        for (&p, &y) in predicted.iter().zip(labels) {
            c.record(p, y);
        }
        Ok(c)
    }

    /// 2×2 grid, predicted class across, actual class down.
    pub fn grid(&self) -> String {
        format!(
            "              pred=ANOMALY  pred=NORMAL\nactual=ANOMALY  TP={:<9} FN={}\nactual=NORMAL   FP={:<9} TN={}\n\nTP={} FP={} / FN={} TN={}\n",
            self.tp, self.fn_, self.fp, self.tn, self.tp, self.fp, self.fn_, self.tn
        )
    }
}

impl fmt::Display for ConfusionCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TP={} FP={} / FN={} TN={}", self.tp, self.fp, self.fn_, self.tn)
    }
}

fn check_lengths(scores: usize, labels: usize) -> Result<(), MetricsError> {
    if scores != labels {
        return Err(MetricsError::LengthMismatch { scores, labels });
    }
    if scores == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Predict 1 iff `score >= threshold`, then tally.
pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionCounts, MetricsError> {
    check_lengths(scores.len(), labels.len())?;
    let mut c = ConfusionCounts::default();
    for (&s, &y) in scores.iter().zip(labels) {
        c.record(u8::from(s >= threshold), y);
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalarMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Accuracy, precision, recall and F1. Any zero denominator yields 0.
pub fn scalar_metrics(c: &ConfusionCounts) -> ScalarMetrics {
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let accuracy = ratio(c.tp + c.tn, c.total());
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ScalarMetrics {
        accuracy,
        precision,
        recall,
        f1,
    }
}

/// Mann–Whitney AUC via midranks, `O(n log n)`.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    check_lengths(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::OneClassOnly);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));

    // Ranks are 1-based; tied groups share the mean of their ranks. Doubled
    // ranks keep everything in integers until the final division.
    let mut pos_rank_sum_x2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank_x2 = (i + 1 + j + 1) as u128;
        let positives = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        pos_rank_sum_x2 += midrank_x2 * positives;
        i = j + 1;
    }
    let (p, q) = (n_pos as u128, n_neg as u128);
    // U = R_pos - p(p+1)/2, doubled
    let u_x2 = pos_rank_sum_x2 - p * (p + 1);
    Ok(u_x2 as f64 / (2 * p * q) as f64)
}

/// One point of a threshold sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// `+inf` for the leading point; stored as `null` in JSON.
    #[serde(with = "infinite_as_null")]
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// `threshold,fpr,tpr` rows; the leading threshold prints as `inf`.
pub fn write_roc_csv(path: &std::path::Path, points: &[RocPoint]) -> std::io::Result<()> {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
    }
    std::fs::write(path, out)
}

/// Sweeps every distinct score as a threshold (descending), plus a leading
/// `+inf` point at the origin.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>, MetricsError> {
    check_lengths(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::OneClassOnly);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    Ok(points)
}

/// Everything reported for one evaluated set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when the set holds a single class.
    pub auc: Option<f64>,
    pub counts: ConfusionCounts,
    pub threshold: f64,
}

impl MetricsReport {
    pub fn from_scores(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Self, MetricsError> {
        let counts = confusion(scores, labels, threshold)?;
        let auc = match roc_auc(scores, labels) {
            Ok(a) => Some(a),
            Err(MetricsError::OneClassOnly) => None,
            Err(e) => return Err(e),
        };
        Ok(Self::from_counts(counts, auc, threshold))
    }

    pub fn from_counts(counts: ConfusionCounts, auc: Option<f64>, threshold: f64) -> Self {
        let s = scalar_metrics(&counts);
        Self {
            accuracy: s.accuracy,
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            auc,
            counts,
            threshold,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut credit = 0.0;
        let mut pairs = 0.0;
        for (i, &yi) in labels.iter().enumerate() {
            if yi != 1 {
                continue;
            }
            for (j, &yj) in labels.iter().enumerate() {
                if yj != 0 {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    credit += 1.0;
                } else if scores[i] == scores[j] {
                    credit += 0.5;
                }
            }
        }
        credit / pairs
    }

    #[test]
    fn confusion_examples() {
        let c = confusion(&[0.0; 5], &[0; 5], 0.5).unwrap();
        assert_eq!(c.tn, 5);
        let c = confusion(&[0.9, 0.4], &[1, 1], 0.5).unwrap();
        assert_eq!((c.tp, c.fn_), (1, 1));
        let c = confusion(&[0.5], &[0], 0.5).unwrap();
        assert_eq!(c.fp, 1);
        assert_eq!(
            confusion(&[0.1], &[0, 1], 0.5),
            Err(MetricsError::LengthMismatch { scores: 1, labels: 2 })
        );
    }

    #[test]
    fn optimized_row_reconstruction() {
        let m = scalar_metrics(&ConfusionCounts { tp: 6, fp: 0, tn: 291, fn_: 3 });
        assert!((m.accuracy - 0.990).abs() < 5e-4);
        assert_eq!(m.precision, 1.0);
        assert!((m.recall - 0.667).abs() < 5e-4);
        assert!((m.f1 - 0.800).abs() < 5e-4);
    }

    #[test]
    fn all_negative_row_reconstruction() {
        let m = scalar_metrics(&ConfusionCounts { tp: 0, fp: 0, tn: 291, fn_: 9 });
        assert_eq!(m.accuracy, 0.97);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn perfect_predictor() {
        let m = scalar_metrics(&ConfusionCounts { tp: 4, fp: 0, tn: 7, fn_: 0 });
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 6], &[1, 0, 1, 0, 0, 0]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.8, 0.6, 0.4], &[1, 0, 1]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.8, 0.6], &[1, 1]), Err(MetricsError::OneClassOnly));
    }

    #[test]
    fn roc_curve_endpoints() {
        let pts = roc_curve(&[0.9, 0.8, 0.4, 0.1], &[1, 0, 1, 0]).unwrap();
        assert_eq!((pts[0].fpr, pts[0].tpr), (0.0, 0.0));
        let last = pts.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));

        let json = serde_json::to_string(&pts).unwrap();
        assert!(json.starts_with(r#"[{"threshold":null"#));
        let back: Vec<RocPoint> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, pts);
    }

    #[test]
    fn table_formulas_on_small_grid() {
        for tp in 0..=6u64 {
            for fp in 0..=6u64 {
                for tn in 0..=6u64 {
                    for fn_ in 0..=6u64 {
                        let c = ConfusionCounts { tp, fp, tn, fn_ };
                        if c.total() == 0 {
                            continue;
                        }
                        let m = scalar_metrics(&c);
                        assert_eq!(m.accuracy, (tp + tn) as f64 / c.total() as f64);
                        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
                        let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
                        assert_eq!(m.precision, p);
                        assert_eq!(m.recall, r);
                        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
                        assert_eq!(m.f1, f);
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn rank_auc_equals_pairwise(
            data in prop::collection::vec((0u8..6, 0u8..2), 2..120)
        ) {
            // coarse scores force heavy ties
            let scores: Vec<f64> = data.iter().map(|(s, _)| f64::from(*s) / 5.0).collect();
            let labels: Vec<u8> = data.iter().map(|(_, y)| *y).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let fast = roc_auc(&scores, &labels).unwrap();
            prop_assert!((fast - pairwise_auc(&scores, &labels)).abs() <= 1e-12);
        }

        #[test]
        fn auc_invariant_under_monotone_maps(
            data in prop::collection::vec((0.0f64..1.0, 0u8..2), 2..80)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s).collect();
            let labels: Vec<u8> = data.iter().map(|(_, y)| *y).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let base = roc_auc(&scores, &labels).unwrap();
            let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
            let affine: Vec<f64> = scores.iter().map(|s| 3.0 * s + 1.0).collect();
            prop_assert_eq!(base, roc_auc(&exp, &labels).unwrap());
            prop_assert_eq!(base, roc_auc(&affine, &labels).unwrap());
        }

        #[test]
        fn complement_swaps_counts(
            data in prop::collection::vec((0u32..=20, 0u8..2), 1..60)
        ) {
            // scores on a dyadic-free grid so that 1 - s stays exact relative to 0.5
            let scores: Vec<f64> = data.iter().map(|(s, _)| f64::from(*s) / 20.0 + 0.01).collect();
            let labels: Vec<u8> = data.iter().map(|(_, y)| *y).collect();
            let c = confusion(&scores, &labels, 0.5).unwrap();
            let flipped_scores: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
            let flipped_labels: Vec<u8> = labels.iter().map(|y| 1 - y).collect();
            let d = confusion(&flipped_scores, &flipped_labels, 0.5).unwrap();
            prop_assert_eq!((c.tp, c.fp, c.tn, c.fn_), (d.tn, d.fn_, d.tp, d.fp));
        }
    }
}
