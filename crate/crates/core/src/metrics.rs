//! Confusion matrix and the segmentation scores derived from it: per-class
//! IoU, mean IoU, per-class accuracy over predicted counts and overall
//! accuracy.

use std::fmt::Write as _;

use log::warn;

use crate::dataset::{ClassId, ClassPalette};
use crate::error::{Error, Result};

/// Square count matrix indexed `[predicted][ground truth]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
    /// Unlabeled predictions per ground-truth class (strict mode only).
    missed: Vec<u64>,
    evaluated: Vec<bool>,
}

impl ConfusionMatrix {
    /// Matrix over `evaluated.len()` classes; only classes flagged `true` may be
    /// accumulated.
    pub fn new(evaluated: Vec<bool>) -> Self {
        let classes = evaluated.len();
        Self {
            classes,
            counts: vec![0; classes * classes],
            missed: vec![0; classes],
            evaluated,
        }
    }

    pub fn for_palette(palette: &ClassPalette) -> Self {
        Self::new(palette.eval_mask())
    }

    pub fn class_count(&self) -> usize {
        self.classes
    }

    pub fn is_evaluated(&self, c: ClassId) -> bool {
        self.evaluated.get(c as usize).copied().unwrap_or(false)
    }

    pub fn count(&self, predicted: ClassId, gt: ClassId) -> u64 {
        self.counts[predicted as usize * self.classes + gt as usize]
    }

    pub fn accumulate(&mut self, predicted: ClassId, gt: ClassId) -> Result<()> {
        for (what, c) in [("predicted", predicted), ("ground-truth", gt)] {
            if !self.is_evaluated(c) {
                return Err(Error::Metrics(format!(
                    "{what} class {c} is not an evaluated class"
                )));
            }
        }
        self.counts[predicted as usize * self.classes + gt as usize] += 1;
        Ok(())
    }

    /// Records a point the pipeline left unlabeled. Only strict evaluation
    /// calls this; it adds a false negative for `gt`.
    pub fn record_unlabeled(&mut self, gt: ClassId) -> Result<()> {
        if !self.is_evaluated(gt) {
            return Err(Error::Metrics(format!(
                "ground-truth class {gt} is not an evaluated class"
            )));
        }
        self.missed[gt as usize] += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.evaluated != self.evaluated {
            return Err(Error::Metrics(
                "cannot merge matrices over different class sets".into(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.missed.iter_mut().zip(&other.missed) {
            *a += b;
        }
        Ok(())
    }

    pub fn true_positives(&self, c: ClassId) -> u64 {
        self.count(c, c)
    }

    /// Points predicted as `c`.
    pub fn row_sum(&self, c: ClassId) -> u64 {
        let start = c as usize * self.classes;
        self.counts[start..start + self.classes].iter().sum()
    }

    /// Points whose ground truth is `c`.
    pub fn col_sum(&self, c: ClassId) -> u64 {
        (0..self.classes)
            .map(|p| self.counts[p * self.classes + c as usize])
            .sum()
    }

    pub fn false_positives(&self, c: ClassId) -> u64 {
        self.row_sum(c) - self.true_positives(c)
    }

    pub fn false_negatives(&self, c: ClassId) -> u64 {
        self.col_sum(c) - self.true_positives(c) + self.missed[c as usize]
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes)
            .map(|c| self.counts[c * self.classes + c])
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn evaluated_ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        (0..self.classes)
            .filter(|&c| self.evaluated[c])
            .map(|c| c as ClassId)
    }

    /// IoU of `c` as an exact fraction `(TP, TP + FP + FN)`; `None` when the
    /// denominator is zero.
    pub fn iou_ratio(&self, c: ClassId) -> Option<(u64, u64)> {
        let tp = self.true_positives(c);
        let denom = tp + self.false_positives(c) + self.false_negatives(c);
        (denom > 0).then_some((tp, denom))
    }

    pub fn iou(&self, c: ClassId) -> Option<f64> {
        self.iou_ratio(c).map(|(n, d)| n as f64 / d as f64)
    }

    /// Mean IoU over the evaluated classes whose IoU is defined.
    pub fn miou(&self) -> Option<f64> {
        mean_defined(self.evaluated_ids().map(|c| (c, self.iou(c))), "IoU")
    }

    /// Accuracy of class `c` over the points predicted as `c`.
    pub fn class_accuracy_ratio(&self, c: ClassId) -> Option<(u64, u64)> {
        let n = self.row_sum(c);
        (n > 0).then(|| (self.true_positives(c), n))
    }

    pub fn class_accuracy(&self, c: ClassId) -> Option<f64> {
        self.class_accuracy_ratio(c)
            .map(|(a, b)| a as f64 / b as f64)
    }

    /// Mean of the defined per-class accuracies.
    pub fn mean_accuracy(&self) -> Option<f64> {
        mean_defined(
            self.evaluated_ids().map(|c| (c, self.class_accuracy(c))),
            "accuracy",
        )
    }

    pub fn overall_accuracy_ratio(&self) -> Option<(u64, u64)> {
        let total = self.total();
        (total > 0).then(|| (self.trace(), total))
    }

    pub fn overall_accuracy(&self) -> Option<f64> {
        self.overall_accuracy_ratio()
            .map(|(a, b)| a as f64 / b as f64)
    }
}

fn mean_defined(values: impl Iterator<Item = (ClassId, Option<f64>)>, what: &str) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (c, v) in values {
        match v {
            Some(v) => {
                sum += v;
                n += 1;
            }
            None => warn!("class {c}: {what} undefined (no points), excluded from the mean"),
        }
    }
    (n > 0).then(|| sum / n as f64)
}

fn percent(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{:.1}", 100.0 * v))
}

/// Fixed-width text table with one row per evaluated class in palette order.
/// Classes with undefined IoU are marked with `*`.
pub fn report(cm: &ConfusionMatrix, palette: &ClassPalette) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<20} {:>6} {:>6}", "class", "IoU", "Acc");
    let mut undefined = false;
    for class in palette.classes().iter().filter(|c| c.eval_included) {
        let iou = cm.iou(class.id);
        let flag = if iou.is_none() {
            undefined = true;
            " *"
        } else {
            ""
        };
        let _ = writeln!(
            out,
            "{:<20} {:>6} {:>6}{flag}",
            class.name,
            percent(iou),
            percent(cm.class_accuracy(class.id))
        );
    }
    let _ = writeln!(out, "{:<20} {:>6}", "mIoU", percent(cm.miou()));
    let _ = writeln!(out, "{:<20} {:>6}", "mAcc", percent(cm.mean_accuracy()));
    let _ = writeln!(out, "{:<20} {:>6}", "OA", percent(cm.overall_accuracy()));
    if undefined {
        out.push_str("* no points; excluded from the means\n");
    }
    out
}

/// Machine-readable metrics: `class_id iou acc` lines then `miou` and `oa`.
/// Values are fractions in [0, 1]; undefined entries read `nan`.
pub fn metrics_text(cm: &ConfusionMatrix, palette: &ClassPalette) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
    let mut out = String::new();
    for class in palette.classes().iter().filter(|c| c.eval_included) {
        let _ = writeln!(
            out,
            "{} {} {}",
            class.id,
            fmt(cm.iou(class.id)),
            fmt(cm.class_accuracy(class.id))
        );
    }
    let _ = writeln!(out, "miou {}", fmt(cm.miou()));
    let _ = writeln!(out, "oa {}", fmt(cm.overall_accuracy()));
    out
}
