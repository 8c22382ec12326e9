//! Forecast and alert scoring, with the summary statistics used in the
//! result tables.

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{Label, ALERT};

/// Mean, population standard deviation, extremes and type-7 quartiles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Per-timestamp scores and their summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub scores: Vec<f64>,
    pub summary: Summary,
}

impl MetricsTable {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        let summary = summarize(&scores)?;
        Ok(Self { scores, summary })
    }
}

pub const CSV_HEADER: [&str; 9] = [
    "model", "scenario", "mean", "std", "min", "max", "q1", "median", "q3",
];

impl Summary {
    /// Row matching [`CSV_HEADER`].
    pub fn csv_record(&self, model: &str, scenario: &str) -> Vec<String> {
        let mut row = vec![model.to_string(), scenario.to_string()];
        row.extend(
            [
                self.mean,
                self.std,
                self.min,
                self.max,
                self.q1,
                self.median,
                self.q3,
            ]
            .iter()
            .map(|v| v.to_string()),
        );
        row
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "mean {:.4} std {:.4} min {:.4} max {:.4} q1 {:.4} median {:.4} q3 {:.4}",
            self.mean, self.std, self.min, self.max, self.q1, self.median, self.q3
        )
    }
}

/// One RMSE per timestamp, pooled over nodes and horizon steps.
pub fn rmse_per_timestamp(
    predictions: &[Array2<f64>],
    targets: &[Array2<f64>],
) -> Result<Vec<f64>> {
    if predictions.len() != targets.len() {
        return Err(Error::shape("timestamps", targets.len(), predictions.len()));
    }
    predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            if p.dim() != t.dim() {
                return Err(Error::shape("prediction", t.dim(), p.dim()));
            }
            if p.is_empty() {
                return Err(Error::EmptyData("timestamp with no entries".into()));
            }
            let sse: f64 = p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum();
            Ok((sse / p.len() as f64).sqrt())
        })
        .collect()
}

/// Linear interpolation between order statistics of a sorted slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(scores: &[f64]) -> Result<Summary> {
    if scores.is_empty() {
        return Err(Error::EmptyData("no scores to summarize".into()));
    }
    if let Some(bad) = scores.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite score {bad}")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(Summary {
        mean,
        std: var.sqrt(),
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        q1: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q3: quantile_sorted(&sorted, 0.75),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 with Alert as the positive class. Any ratio
/// with a zero denominator is reported as 0.
pub fn classification_scores(predicted: &[Label], truth: &[Label]) -> Result<ClassificationScores> {
    if predicted.len() != truth.len() {
        return Err(Error::shape("labels", truth.len(), predicted.len()));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &t) in predicted.iter().zip(truth) {
        if p > 1 || t > 1 {
            return Err(Error::invalid(format!(
                "label outside {{0, 1}}: {}",
                p.max(t)
            )));
        }
        match (p == ALERT, t == ALERT) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ClassificationScores {
        precision,
        recall,
        f1,
    })
}

/// Scores for every timestamp, one label vector per timestamp.
pub fn classification_per_timestamp(
    predicted: &[Vec<Label>],
    truth: &[Vec<Label>],
) -> Result<Vec<ClassificationScores>> {
    if predicted.len() != truth.len() {
        return Err(Error::shape("timestamps", truth.len(), predicted.len()));
    }
    predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| classification_scores(p, t))
        .collect()
}

#[cfg(test)]
mod tests {
    use ndarray::array;
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn rmse_examples() {
        let t = array![[1.0], [2.0]];
        assert_eq!(
            rmse_per_timestamp(std::slice::from_ref(&t), std::slice::from_ref(&t)).unwrap(),
            vec![0.0]
        );
        let p = array![[4.0], [6.0]];
        let r = rmse_per_timestamp(&[p], std::slice::from_ref(&t)).unwrap()[0];
        assert!((r - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(rmse_per_timestamp(&[array![[1.0, 2.0]]], &[t]).is_err());
    }

    #[test]
    fn summary_examples() {
        let s = summarize(&[5.0]).unwrap();
        assert_eq!(
            s,
            Summary {
                mean: 5.0,
                std: 0.0,
                min: 5.0,
                max: 5.0,
                q1: 5.0,
                median: 5.0,
                q3: 5.0
            }
        );
        let s = summarize(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.mean, s.min, s.max, s.median), (2.5, 1.0, 4.0, 2.5));
        assert_eq!((s.q1, s.q3), (1.75, 3.25));
        assert!((s.std - 1.25f64.sqrt()).abs() < 1e-15);
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn classification_examples() {
        let perfect = classification_scores(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!(
            (perfect.precision, perfect.recall, perfect.f1),
            (1.0, 1.0, 1.0)
        );
        let s = classification_scores(&[1, 1, 1, 0], &[1, 1, 0, 1]).unwrap();
        for v in [s.precision, s.recall, s.f1] {
            assert!((v - 2.0 / 3.0).abs() < 1e-15);
        }
        let none = classification_scores(&[0, 0], &[0, 0]).unwrap();
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
        assert!(classification_scores(&[2], &[1]).is_err());
        assert!(classification_scores(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn csv_record_matches_header() {
        let s = summarize(&[1.0, 2.0]).unwrap();
        let row = s.csv_record("GCRN", "backbone");
        assert_eq!(row.len(), CSV_HEADER.len());
        assert_eq!(row[2], "1.5");
    }

    proptest! {
        #[test]
        fn summary_is_ordered_and_permutation_invariant(mut v in prop::collection::vec(-1e3f64..1e3, 1..60), seed in 0u64..1000) {
            let s = summarize(&v).unwrap();
            prop_assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
            prop_assert!(s.std >= 0.0);
            let k = (seed as usize) % v.len();
            v.rotate_left(k);
            v.reverse();
            prop_assert_eq!(summarize(&v).unwrap(), s);
        }

        #[test]
        fn rmse_is_homogeneous(errs in prop::collection::vec(-10f64..10.0, 1..20), c in -5f64..5.0) {
            let n = errs.len();
            let t = Array2::zeros((n, 1));
            let p = Array2::from_shape_vec((n, 1), errs.clone()).unwrap();
            let pc = p.mapv(|e| e * c);
            let base = rmse_per_timestamp(&[p], std::slice::from_ref(&t)).unwrap()[0];
            let scaled = rmse_per_timestamp(&[pc], &[t]).unwrap()[0];
            prop_assert!(base >= 0.0);
            prop_assert!((scaled - c.abs() * base).abs() <= 1e-12 * (1.0 + base * c.abs()));
        }

        #[test]
        fn f1_is_harmonic_mean(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..50)) {
            let (p, t): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let s = classification_scores(&p, &t).unwrap();
            prop_assert!(s.f1 <= s.precision.max(s.recall) + 1e-15);
            prop_assert!(s.f1 + 1e-15 >= s.precision.min(s.recall) || s.f1 == 0.0);
            if s.precision == s.recall {
                prop_assert!((s.f1 - s.precision).abs() < 1e-15);
            }
        }
    }
}
