use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Accuracy, per-class F1 and the confusion matrix (rows: truth, columns:
/// prediction).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<String>,
    pub total: usize,
    pub accuracy: f64,
    pub f1: Vec<f64>,
    pub confusion: Vec<Vec<usize>>,
}

impl MetricsReport {
    pub fn from_confusion(classes: Vec<String>, confusion: Vec<Vec<usize>>) -> Self {
        let c = classes.len();
        assert!(confusion.len() == c && confusion.iter().all(|r| r.len() == c));
        let total: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..c).map(|i| confusion[i][i]).sum();
        let accuracy = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
        let f1 = (0..c)
            .map(|k| {
                let tp = confusion[k][k];
                let actual: usize = confusion[k].iter().sum();
                let predicted: usize = confusion.iter().map(|r| r[k]).sum();
                let denom = actual + predicted;
                if denom == 0 {
                    0.0
                } else {
                    2.0 * tp as f64 / denom as f64
                }
            })
            .collect();
        MetricsReport {
            classes,
            total,
            accuracy,
            f1,
            confusion,
        }
    }

    pub fn from_predictions(classes: Vec<String>, truth: &[usize], predicted: &[usize]) -> Self {
        assert_eq!(truth.len(), predicted.len());
        let c = classes.len();
        let mut confusion = vec![vec![0; c]; c];
        for (&t, &p) in truth.iter().zip(predicted) {
            confusion[t][p] += 1;
        }
        Self::from_confusion(classes, confusion)
    }

    /// Human-readable summary block.
    pub fn summary(&self) -> String {
        let mut out = format!("accuracy {:.4} over {} events\n", self.accuracy, self.total);
        for (name, f) in self.classes.iter().zip(&self.f1) {
            let _ = writeln!(out, "  F1 {name:<10} {f:.4}");
        }
        out
    }
}
