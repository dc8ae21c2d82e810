//! Pixel-level change metrics from pooled confusion counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts with "changed" as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub oa: f64,
    pub iou: f64,
}

/// `a / b`, with `0 / 0 = 0`.
fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl ConfusionCounts {
    /// Adds one prediction / ground-truth pair of equal length.
    pub fn add(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::Shape(format!(
                "prediction has {} pixels, ground truth {}",
                pred.len(),
                gt.len()
            )));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            match (p != 0, g != 0) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
                (false, false) => self.tn += 1,
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn summarize(&self) -> Summary {
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Summary {
            precision,
            recall,
            f1,
            oa: ratio(self.tp + self.tn, self.total()),
            iou: ratio(self.tp, self.tp + self.fp + self.fn_),
        }
    }
}

/// Micro-accumulates a sequence of `(prediction, ground truth)` pairs.
pub fn accumulate<'a>(pairs: impl IntoIterator<Item = (&'a [u8], Option<&'a [u8]>)>) -> Result<ConfusionCounts> {
    let mut c = ConfusionCounts::default();
    for (i, (pred, gt)) in pairs.into_iter().enumerate() {
        let gt = gt.ok_or_else(|| Error::MissingGroundTruth(format!("sample #{i}")))?;
        c.add(pred, gt)?;
    }
    Ok(c)
}

/// Counts restricted to pixels where `region` is set.
pub fn false_positives_in(pred: &[u8], gt: &[u8], region: &[u8]) -> u64 {
    pred.iter()
        .zip(gt)
        .zip(region)
        .filter(|((&p, &g), &r)| p != 0 && g == 0 && r != 0)
        .count() as u64
}

/// The `metrics.json` record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub oa: f64,
    pub iou: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl From<&ConfusionCounts> for MetricsRecord {
    fn from(c: &ConfusionCounts) -> Self {
        let s = c.summarize();
        MetricsRecord {
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            oa: s.oa,
            iou: s.iou,
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            tn: c.tn,
        }
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "F1 {:.2}  OA {:.2}  IoU {:.2}  P {:.2}  R {:.2}",
            100.0 * self.f1,
            100.0 * self.oa,
            100.0 * self.iou,
            100.0 * self.precision,
            100.0 * self.recall
        )
    }
}
