//! Confusion matrix, per-class F1 and macro F1.
//!
//! A class with no true samples and no predictions scores F1 = 0 and still
//! counts in the macro average, so a perfect 1.0 needs every class present.

use serde::Serialize;

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Build from a row-major grid.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let classes = rows.len();
        let mut cm = Self::new(classes);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != classes {
                return Err(Error::LengthMismatch(row.len(), classes));
            }
            cm.counts[t * classes..(t + 1) * classes].copy_from_slice(row);
        }
        Ok(cm)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        for label in [truth, pred] {
            if label >= self.classes {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: self.classes,
                });
            }
        }
        self.counts[truth * self.classes + pred] += 1;
        Ok(())
    }

    /// Element-wise sum, for combining shards.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::LengthMismatch(self.classes, other.classes));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.classes..(truth + 1) * self.classes]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.get(c, c)
    }

    pub fn false_positives(&self, c: usize) -> u64 {
        (0..self.classes)
            .filter(|&t| t != c)
            .map(|t| self.get(t, c))
            .sum()
    }

    pub fn false_negatives(&self, c: usize) -> u64 {
        (0..self.classes)
            .filter(|&p| p != c)
            .map(|p| self.get(c, p))
            .sum()
    }

    pub fn support(&self, c: usize) -> u64 {
        self.row(c).iter().sum()
    }

    pub fn per_class_f1(&self, c: usize) -> f64 {
        assert!(c < self.classes, "class {c} out of range");
        let tp = self.true_positives(c) as f64;
        let denom = 2.0 * tp + self.false_positives(c) as f64 + self.false_negatives(c) as f64;
        if denom == 0.0 {
            0.0
        } else {
            2.0 * tp / denom
        }
    }

    pub fn macro_f1(&self) -> f64 {
        if self.classes == 0 {
            return 0.0;
        }
        (0..self.classes).map(|c| self.per_class_f1(c)).sum::<f64>() / self.classes as f64
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (0..self.classes).map(|c| self.get(c, c)).sum::<u64>() as f64 / total as f64
    }

    /// CSV with a header row of class names and one row per true class.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut out = String::from("truth\\pred");
        for n in names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for t in 0..self.classes {
            match names.get(t) {
                Some(n) => out.push_str(n),
                None => out.push_str(&t.to_string()),
            }
            for v in self.row(t) {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub matrix: ConfusionMatrix,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub per_class: Vec<ClassReport>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn score_predictions(truth: &[usize], preds: &[usize], classes: usize) -> Result<Score> {
    if truth.len() != preds.len() {
        return Err(Error::LengthMismatch(truth.len(), preds.len()));
    }
    if truth.is_empty() {
        return Err(Error::NoSamples);
    }
    let mut matrix = ConfusionMatrix::new(classes);
    for (&t, &p) in truth.iter().zip(preds) {
        matrix.add(t, p)?;
    }
    let per_class = (0..classes)
        .map(|c| {
            let tp = matrix.true_positives(c);
            ClassReport {
                class: c,
                precision: ratio(tp, tp + matrix.false_positives(c)),
                recall: ratio(tp, tp + matrix.false_negatives(c)),
                f1: matrix.per_class_f1(c),
                support: matrix.support(c),
            }
        })
        .collect();
    Ok(Score {
        macro_f1: matrix.macro_f1(),
        accuracy: matrix.accuracy(),
        matrix,
        per_class,
    })
}

/// Macro F1 of a prediction list, for callers that only need the number.
pub fn macro_f1_of(truth: &[usize], preds: &[usize], classes: usize) -> Result<f64> {
    Ok(score_predictions(truth, preds, classes)?.macro_f1)
}
