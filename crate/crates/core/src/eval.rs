//! Confusion matrix and per-class / macro recall and precision.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::AamiClass;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{preds} predictions but {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("class {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("confusion matrix is not square")]
    NotSquare,
}

/// `counts[t][p]`: samples of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    /// Elementwise sum; confusion counts form a commutative monoid.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

pub fn confusion_matrix(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<ConfusionMatrix, EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut m = ConfusionMatrix::zeros(num_classes);
    for (&p, &t) in preds.iter().zip(labels) {
        if let Some(&class) = [p, t].iter().find(|&&c| c >= num_classes) {
            return Err(EvalError::ClassOutOfRange { class, num_classes });
        }
        m.counts[t][p] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub recall: f64,
    pub precision: f64,
    pub support: u64,
}

/// A metric whose denominator was zero and which was therefore scored 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroDenominator {
    pub class: usize,
    pub metric: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassScore>,
    /// Unweighted mean over classes.
    pub macro_recall: f64,
    pub macro_precision: f64,
    pub flags: Vec<ZeroDenominator>,
}

/// `Rec = TP/(TP+FN)`, `Pre = TP/(TP+FP)` per class; zero denominators score 0
/// and are flagged rather than dropped from the macro mean.
pub fn recall_precision(confusion: &ConfusionMatrix) -> Result<EvalReport, EvalError> {
    let c = confusion.num_classes();
    if c == 0 || confusion.counts.iter().any(|r| r.len() != c) {
        return Err(EvalError::NotSquare);
    }
    let mut per_class = Vec::with_capacity(c);
    let mut flags = Vec::new();
    for k in 0..c {
        let tp = confusion.counts[k][k];
        let row: u64 = confusion.counts[k].iter().sum();
        let col: u64 = confusion.counts.iter().map(|r| r[k]).sum();
        let mut ratio = |num: u64, den: u64, metric: &str| {
            if den == 0 {
                flags.push(ZeroDenominator {
                    class: k,
                    metric: metric.to_string(),
                });
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let recall = ratio(tp, row, "recall");
        let precision = ratio(tp, col, "precision");
        per_class.push(ClassScore {
            recall,
            precision,
            support: row,
        });
    }
    let macro_recall = per_class.iter().map(|s| s.recall).sum::<f64>() / c as f64;
    let macro_precision = per_class.iter().map(|s| s.precision).sum::<f64>() / c as f64;
    Ok(EvalReport {
        confusion: confusion.clone(),
        per_class,
        macro_recall,
        macro_precision,
        flags,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Aligned plain-text table; class names follow the AAMI order.
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<8}{:>10}{:>12}{:>10}\n", "class", "recall", "precision", "support");
        for (k, score) in self.per_class.iter().enumerate() {
            let name = AamiClass::from_index(k).map_or_else(|| k.to_string(), |c| c.to_string());
            s.push_str(&format!(
                "{:<8}{:>10.4}{:>12.4}{:>10}\n",
                name, score.recall, score.precision, score.support
            ));
        }
        s.push_str(&format!(
            "{:<8}{:>10.4}{:>12.4}{:>10}\n",
            "macro",
            self.macro_recall,
            self.macro_precision,
            self.confusion.total()
        ));
        for f in &self.flags {
            s.push_str(&format!("note: class {} {} has a zero denominator, scored 0\n", f.class, f.metric));
        }
        s
    }
}
