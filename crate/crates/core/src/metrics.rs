//! Confusion matrix and the summary scores derived from it.
//!
//! Per-class terms with a zero denominator contribute 0. Precision and
//! recall are macro averages over all classes; F1 is the support-weighted
//! sum of per-class F1.

use std::fmt::Write as _;

use crate::dataset::ActivityLabel;
use crate::error::{HarError, Result};

/// Rows are the true class, columns the predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = counts.len();
        if let Some(row) = counts.iter().find(|r| r.len() != c) {
            return Err(HarError::ShapeMismatch {
                op: "confusion matrix",
                left: (c, c),
                right: (1, row.len()),
            });
        }
        Ok(Self { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth][pred]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        let c = self.classes();
        if truth >= c {
            return Err(HarError::LabelOutOfRange(truth));
        }
        if pred >= c {
            return Err(HarError::LabelOutOfRange(pred));
        }
        self.counts[truth][pred] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    pub fn false_positives(&self, c: usize) -> u64 {
        (0..self.classes()).filter(|&t| t != c).map(|t| self.counts[t][c]).sum()
    }

    pub fn false_negatives(&self, c: usize) -> u64 {
        (0..self.classes()).filter(|&p| p != c).map(|p| self.counts[c][p]).sum()
    }

    /// Row sum: how many items truly belong to `c`.
    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn precision(&self, c: usize) -> f64 {
        ratio(self.true_positives(c), self.true_positives(c) + self.false_positives(c))
    }

    pub fn recall(&self, c: usize) -> f64 {
        ratio(self.true_positives(c), self.true_positives(c) + self.false_negatives(c))
    }

    pub fn f1(&self, c: usize) -> f64 {
        let (p, r) = (self.precision(c), self.recall(c));
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn ensure_nonempty(&self) -> Result<u64> {
        match self.total() {
            0 => Err(HarError::EmptyMatrix),
            n => Ok(n),
        }
    }

    /// CSV with a header row of class names; first column is the true class.
    pub fn to_csv(&self, names: &[&str]) -> String {
        let mut out = String::from("true\\pred");
        for n in names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            out.push_str(names.get(i).copied().unwrap_or("?"));
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses the layout written by [`ConfusionMatrix::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: &str| HarError::Io(format!("confusion matrix file: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        lines.next().ok_or_else(|| bad("missing header"))?;
        let mut counts = Vec::new();
        for line in lines {
            let row = line
                .split(',')
                .skip(1)
                .map(|f| f.trim().parse::<u64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad("non-integer count"))?;
            counts.push(row);
        }
        Self::from_counts(counts)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn confusion_matrix(truth: &[usize], preds: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != preds.len() {
        return Err(HarError::LengthMismatch {
            left: truth.len(),
            right: preds.len(),
        });
    }
    let mut m = ConfusionMatrix::new(classes);
    for (&t, &p) in truth.iter().zip(preds) {
        m.record(t, p)?;
    }
    Ok(m)
}

/// Correct predictions over all predictions.
pub fn accuracy(m: &ConfusionMatrix) -> Result<f64> {
    let n = m.ensure_nonempty()?;
    Ok(m.trace() as f64 / n as f64)
}

pub fn macro_precision(m: &ConfusionMatrix) -> Result<f64> {
    m.ensure_nonempty()?;
    let c = m.classes();
    Ok((0..c).map(|k| m.precision(k)).sum::<f64>() / c as f64)
}

pub fn macro_recall(m: &ConfusionMatrix) -> Result<f64> {
    m.ensure_nonempty()?;
    let c = m.classes();
    Ok((0..c).map(|k| m.recall(k)).sum::<f64>() / c as f64)
}

/// `Σ_c 2·(n_c/N)·p_c·r_c/(p_c + r_c)`, with `n_c` the true support.
pub fn weighted_f1(m: &ConfusionMatrix) -> Result<f64> {
    let n = m.ensure_nonempty()? as f64;
    let mut total = 0.0;
    for c in 0..m.classes() {
        let (p, r) = (m.precision(c), m.recall(c));
        if p + r > 0.0 {
            total += 2.0 * (m.support(c) as f64 / n) * (p * r) / (p + r);
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

impl MetricsReport {
    pub fn from_matrix(m: &ConfusionMatrix) -> Result<Self> {
        Ok(Self {
            accuracy: accuracy(m)?,
            macro_precision: macro_precision(m)?,
            macro_recall: macro_recall(m)?,
            weighted_f1: weighted_f1(m)?,
            per_class: (0..m.classes())
                .map(|c| ClassMetrics {
                    precision: m.precision(c),
                    recall: m.recall(c),
                    f1: m.f1(c),
                    support: m.support(c),
                })
                .collect(),
        })
    }

    /// `key=value` lines. Values use shortest round-trip formatting.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "accuracy={}", self.accuracy);
        let _ = writeln!(out, "macro_precision={}", self.macro_precision);
        let _ = writeln!(out, "macro_recall={}", self.macro_recall);
        let _ = writeln!(out, "weighted_f1={}", self.weighted_f1);
        for (c, m) in self.per_class.iter().enumerate() {
            let name = class_name(c);
            let _ = writeln!(out, "recall.{name}={}", m.recall);
        }
        out
    }

    /// Per-class CSV table: class, precision, recall, f1, support.
    pub fn to_table(&self) -> String {
        let mut out = String::from("class,precision,recall,f1,support\n");
        for (c, m) in self.per_class.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                class_name(c),
                m.precision,
                m.recall,
                m.f1,
                m.support
            );
        }
        out
    }
}

fn class_name(c: usize) -> String {
    ActivityLabel::from_index(c).map_or_else(|| format!("class{c}"), |l| l.name().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(n: &[u64]) -> ConfusionMatrix {
        let mut counts = vec![vec![0; n.len()]; n.len()];
        for (i, &v) in n.iter().enumerate() {
            counts[i][i] = v;
        }
        ConfusionMatrix::from_counts(counts).unwrap()
    }

    #[test]
    fn perfect_predictions_are_diagonal() {
        let truth = [0, 1, 2, 3, 4, 5, 0, 0];
        let m = confusion_matrix(&truth, &truth, 6).unwrap();
        assert_eq!(m.trace(), 8);
        assert_eq!(m.get(0, 0), 3);
        let empty = confusion_matrix(&[], &[], 6).unwrap();
        assert_eq!(empty, ConfusionMatrix::new(6));
        assert!(matches!(
            confusion_matrix(&[1], &[], 6),
            Err(HarError::LengthMismatch { left: 1, right: 0 })
        ));
        assert_eq!(
            confusion_matrix(&[6], &[0], 6).unwrap_err(),
            HarError::LabelOutOfRange(6)
        );
    }

    #[test]
    fn diagonal_scores_one() {
        let m = diag(&[5, 3, 9, 1, 2, 7]);
        assert_eq!(accuracy(&m).unwrap(), 1.0);
        assert_eq!(macro_precision(&m).unwrap(), 1.0);
        assert_eq!(macro_recall(&m).unwrap(), 1.0);
        assert!((weighted_f1(&m).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn off_diagonal_only_is_zero() {
        let mut counts = vec![vec![4; 6]; 6];
        for (i, row) in counts.iter_mut().enumerate() {
            row[i] = 0;
        }
        let m = ConfusionMatrix::from_counts(counts).unwrap();
        assert_eq!(accuracy(&m).unwrap(), 0.0);
        assert_eq!(weighted_f1(&m).unwrap(), 0.0);
    }

    #[test]
    fn accuracy_hand_value() {
        let mut m = diag(&[100, 100, 100, 100, 78, 0]);
        m.counts[5][0] = 22;
        assert_eq!(m.total(), 500);
        assert!((accuracy(&m).unwrap() - 0.956).abs() < 1e-15);
    }

    #[test]
    fn empty_and_absent_classes() {
        assert_eq!(accuracy(&ConfusionMatrix::new(6)).unwrap_err(), HarError::EmptyMatrix);
        assert_eq!(
            weighted_f1(&ConfusionMatrix::new(6)).unwrap_err(),
            HarError::EmptyMatrix
        );
        // class 5 never predicted and never present
        let m = diag(&[2, 2, 2, 2, 2, 0]);
        assert_eq!(m.precision(5), 0.0);
        assert_eq!(m.recall(5), 0.0);
        assert!((macro_precision(&m).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert!((macro_recall(&m).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert!((weighted_f1(&m).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_class_perfect() {
        let m = diag(&[0, 0, 40, 0, 0, 0]);
        assert_eq!(accuracy(&m).unwrap(), 1.0);
        assert!((weighted_f1(&m).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let mut m = diag(&[5, 3, 9, 1, 2, 7]);
        m.counts[2][4] = 11;
        let names: Vec<&str> = ActivityLabel::ALL.iter().map(|l| l.name()).collect();
        let text = m.to_csv(&names);
        assert!(text.starts_with("true\\pred,Walking,Jogging"));
        assert_eq!(ConfusionMatrix::from_csv(&text).unwrap(), m);
    }

    #[test]
    fn report_formats() {
        let m = diag(&[1, 1, 1, 1, 1, 1]);
        let r = MetricsReport::from_matrix(&m).unwrap();
        let kv = r.to_key_value();
        assert!(kv.contains("accuracy=1\n"));
        assert!(kv.contains("recall.Standing=1\n"));
        assert_eq!(r.to_table().lines().count(), 7);
    }
}
