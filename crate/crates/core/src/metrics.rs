//! Confusion-matrix metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
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
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::Dimension("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix {
            classes: c,
            counts: rows.concat(),
        })
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.classes || predicted >= self.classes {
            return Err(Error::Dimension(format!(
                "class pair ({truth}, {predicted}) outside {} classes",
                self.classes
            )));
        }
        self.counts[truth * self.classes + predicted] += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Dimension(
                "merging matrices of different size".into(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes).map(|b| self.get(b, b)).sum()
    }

    fn row_sum(&self, b: usize) -> u64 {
        (0..self.classes).map(|p| self.get(b, p)).sum()
    }

    fn col_sum(&self, b: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, b)).sum()
    }

    /// Relabels classes: entry `[i][j]` moves to `[perm[i]][perm[j]]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.classes];
        if perm.len() != self.classes
            || perm
                .iter()
                .any(|&p| p >= self.classes || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::Input("not a permutation of the class labels".into()));
        }
        let mut out = ConfusionMatrix::new(self.classes);
        for i in 0..self.classes {
            for j in 0..self.classes {
                out.counts[perm[i] * self.classes + perm[j]] = self.get(i, j);
            }
        }
        Ok(out)
    }

    fn nonempty(&self) -> Result<()> {
        if self.total() == 0 {
            Err(Error::UndefinedMetric("empty confusion matrix".into()))
        } else {
            Ok(())
        }
    }
}

/// How per-class ratios are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Unweighted mean over classes.
    #[default]
    Macro,
    /// Mean weighted by each class's true-sample count.
    Weighted,
}

/// An averaged per-class metric together with the classes whose ratio had a
/// zero denominator (and so contributed 0).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAverage {
    pub value: f64,
    pub per_class: Vec<f64>,
    pub zero_denominator: Vec<usize>,
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    cm.nonempty()?;
    Ok(cm.correct() as f64 / cm.total() as f64)
}

pub fn precision(cm: &ConfusionMatrix, avg: Averaging) -> Result<ClassAverage> {
    per_class(cm, avg, |b| cm.col_sum(b))
}

pub fn recall(cm: &ConfusionMatrix, avg: Averaging) -> Result<ClassAverage> {
    per_class(cm, avg, |b| cm.row_sum(b))
}

fn per_class(
    cm: &ConfusionMatrix,
    avg: Averaging,
    denom: impl Fn(usize) -> u64,
) -> Result<ClassAverage> {
    cm.nonempty()?;
    let mut per_class = Vec::with_capacity(cm.classes);
    let mut zero_denominator = Vec::new();
    for b in 0..cm.classes {
        let d = denom(b);
        if d == 0 {
            zero_denominator.push(b);
            per_class.push(0.0);
        } else {
            per_class.push(cm.get(b, b) as f64 / d as f64);
        }
    }
    let value = match avg {
        Averaging::Macro => per_class.iter().sum::<f64>() / cm.classes as f64,
        Averaging::Weighted => {
            let total = cm.total() as f64;
            per_class
                .iter()
                .enumerate()
                .map(|(b, r)| r * cm.row_sum(b) as f64 / total)
                .sum()
        }
    };
    Ok(ClassAverage {
        value,
        per_class,
        zero_denominator,
    })
}

/// Accuracy, precision and recall in one record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub samples: u64,
}

impl Scores {
    pub fn from_matrix(cm: &ConfusionMatrix, avg: Averaging) -> Result<Self> {
        Ok(Scores {
            accuracy: accuracy(cm)?,
            precision: precision(cm, avg)?.value,
            recall: recall(cm, avg)?.value,
            samples: cm.total(),
        })
    }
}
