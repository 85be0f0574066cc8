use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Ground-truth samples of this class.
    pub support: u64,
}

/// Confusion matrix (rows = true class, columns = prediction) with
/// per-class and macro-averaged scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub total: u64,
    /// Classes with no ground-truth samples; their recall is reported as 0.
    pub absent_classes: Vec<usize>,
}

impl Metrics {
    /// Scores from counts. Precision and recall with a zero denominator are
    /// 0; F1 is `2TP / (2TP + FP + FN)`, which equals `2PR/(P+R)` and is 0
    /// when `TP = 0`.
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Metrics> {
        let k = confusion.len();
        if k == 0 || confusion.iter().any(|r| r.len() != k) {
            return Err(Error::invalid(
                "confusion matrix must be square and non-empty",
            ));
        }
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::invalid("cannot score an empty split"));
        }
        let ratio = |num: u64, den: u64| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let mut per_class = Vec::with_capacity(k);
        let mut absent = Vec::new();
        for c in 0..k {
            let tp = confusion[c][c];
            let support: u64 = confusion[c].iter().sum();
            let predicted: u64 = confusion.iter().map(|r| r[c]).sum();
            let (fp, fn_) = (predicted - tp, support - tp);
            if support == 0 {
                absent.push(c);
            }
            per_class.push(ClassMetrics {
                precision: ratio(tp, predicted),
                recall: ratio(tp, support),
                f1: ratio(2 * tp, 2 * tp + fp + fn_),
                support,
            });
        }
        let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
        let trace: u64 = (0..k).map(|c| confusion[c][c]).sum();
        Ok(Metrics {
            macro_precision: mean(|m| m.precision),
            macro_recall: mean(|m| m.recall),
            macro_f1: mean(|m| m.f1),
            accuracy: trace as f64 / total as f64,
            total,
            absent_classes: absent,
            per_class,
            confusion,
        })
    }

    pub fn from_predictions(
        labels: &[usize],
        predictions: &[usize],
        classes: usize,
    ) -> Result<Metrics> {
        if labels.len() != predictions.len() {
            return Err(Error::invalid(format!(
                "{} labels but {} predictions",
                labels.len(),
                predictions.len()
            )));
        }
        let mut confusion = vec![vec![0u64; classes]; classes];
        for (&l, &p) in labels.iter().zip(predictions) {
            if l >= classes || p >= classes {
                return Err(Error::invalid(format!(
                    "class index out of range for {classes} classes"
                )));
            }
            confusion[l][p] += 1;
        }
        Self::from_confusion(confusion)
    }

    /// `true\pred` header row, then one row per true class.
    pub fn confusion_csv(&self) -> String {
        let k = self.confusion.len();
        let mut out = String::from("true\\pred");
        for c in 0..k {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        for (c, row) in self.confusion.iter().enumerate() {
            let _ = write!(out, "{c}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`Metrics::confusion_csv`] output.
    pub fn parse_confusion_csv(text: &str) -> Result<Vec<Vec<u64>>> {
        let bad = || Error::invalid("malformed confusion CSV");
        text.lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                line.split(',')
                    .skip(1)
                    .map(|v| v.trim().parse::<u64>().map_err(|_| bad()))
                    .collect()
            })
            .collect()
    }

    /// Class-wise precision / recall / F1 table followed by the macro row.
    pub fn table(&self, class_names: &[String]) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>9} {:>9} {:>9} {:>8}",
            "Class", "Precision", "Recall", "F1-Score", "Support"
        );
        for (c, m) in self.per_class.iter().enumerate() {
            let name = class_names.get(c).cloned().unwrap_or_else(|| c.to_string());
            let flag = if self.absent_classes.contains(&c) {
                "  (absent)"
            } else {
                ""
            };
            let _ = writeln!(
                out,
                "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>8}{flag}",
                name, m.precision, m.recall, m.f1, m.support
            );
        }
        let _ = writeln!(
            out,
            "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>8}",
            "Overall", self.macro_precision, self.macro_recall, self.macro_f1, self.total
        );
        let _ = writeln!(out, "Accuracy   {:.4}", self.accuracy);
        out
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }
}

pub(crate) fn write_json<S: Serialize>(path: impl AsRef<Path>, value: &S) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
