//! Accuracy and macro-averaged precision, recall and F1.

use serde::{Deserialize, Serialize};

use crate::error::{AmnError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl EvalMetrics {
    /// Macro averages run over the classes that occur in `truth`. A class
    /// that is never predicted has precision 0.
    pub fn compute(truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(AmnError::InvalidArgument(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        if truth.is_empty() {
            return Err(AmnError::EmptySplit("no evaluation examples".into()));
        }
        let n_classes = truth.iter().chain(predicted).max().unwrap() + 1;
        let mut tp = vec![0usize; n_classes];
        let mut n_true = vec![0usize; n_classes];
        let mut n_pred = vec![0usize; n_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            n_true[t] += 1;
            n_pred[p] += 1;
            if t == p {
                tp[t] += 1;
            }
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let (mut p_sum, mut r_sum, mut f_sum, mut present) = (0.0, 0.0, 0.0, 0usize);
        for c in (0..n_classes).filter(|&c| n_true[c] > 0) {
            let p = ratio(tp[c], n_pred[c]);
            let r = ratio(tp[c], n_true[c]);
            let f = if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            };
            p_sum += p;
            r_sum += r;
            f_sum += f;
            present += 1;
        }
        let m = present as f64;
        Ok(EvalMetrics {
            accuracy: ratio(tp.iter().sum(), truth.len()),
            precision: p_sum / m,
            recall: r_sum / m,
            f1: f_sum / m,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let m = EvalMetrics::compute(&[0, 1, 2, 1], &[0, 1, 2, 1]).unwrap();
        assert_eq!(
            m,
            EvalMetrics {
                accuracy: 1.0,
                precision: 1.0,
                recall: 1.0,
                f1: 1.0
            }
        );
    }

    #[test]
    fn two_class_toy() {
        // A -> A, A -> B, B -> B
        let m = EvalMetrics::compute(&[0, 0, 1], &[0, 1, 1]).unwrap();
        assert!((m.accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.precision - 0.75).abs() < 1e-12);
        assert!((m.recall - 0.75).abs() < 1e-12);
        let f_a = 2.0 * 1.0 * 0.5 / 1.5;
        let f_b = 2.0 * 0.5 * 1.0 / 1.5;
        assert!((m.f1 - (f_a + f_b) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn predictions_outside_the_true_classes() {
        let m = EvalMetrics::compute(&[0, 0], &[3, 0]).unwrap();
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 0.5);
    }

    #[test]
    fn rejects_empty_and_mismatched() {
        assert!(EvalMetrics::compute(&[], &[]).is_err());
        assert!(EvalMetrics::compute(&[0], &[0, 1]).is_err());
    }
}
