use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixel counts of the binary confusion matrix, change = positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    /// Count `pred` against `label`; both must hold only 0 and 1.
    pub fn from_maps(pred: &[u8], label: &[u8]) -> Result<Confusion> {
        if pred.len() != label.len() {
            return Err(Error::dims("confusion", &[pred.len()], &[label.len()]));
        }
        let mut c = Confusion::default();
        for (&p, &y) in pred.iter().zip(label) {
            match (p, y) {
                (1, 1) => c.tp += 1,
                (1, 0) => c.fp += 1,
                (0, 1) => c.fn_ += 1,
                (0, 0) => c.tn += 1,
                _ => return Err(Error::data(format!("non-binary map value (prediction {p}, label {y})"))),
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn report(&self) -> MetricsReport {
        let mut flags = Vec::new();
        let ratio = |num: u64, den: u64, flag: &str, flags: &mut Vec<String>| {
            if den == 0 {
                flags.push(flag.to_string());
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(self.tp, self.tp + self.fp, "precision_undefined", &mut flags);
        let recall = ratio(self.tp, self.tp + self.fn_, "recall_undefined", &mut flags);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        let iou = ratio(self.tp, self.tp + self.fp + self.fn_, "iou_undefined", &mut flags);
        let oa = ratio(self.tp + self.tn, self.total(), "empty", &mut flags);
        MetricsReport { confusion: *self, precision, recall, f1, iou, oa, flags }
    }
}

impl std::ops::AddAssign for Confusion {
    fn add_assign(&mut self, o: Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

/// Change-class scores. A ratio whose denominator is zero is reported as 0
/// and named in `flags`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    pub oa: f64,
    pub flags: Vec<String>,
}

pub fn evaluate_maps(pred: &[u8], label: &[u8]) -> Result<MetricsReport> {
    Ok(Confusion::from_maps(pred, label)?.report())
}

pub const TP_COLOR: [u8; 3] = [255, 255, 255];
pub const TN_COLOR: [u8; 3] = [0, 0, 0];
pub const FP_COLOR: [u8; 3] = [255, 0, 0];
pub const FN_COLOR: [u8; 3] = [0, 255, 0];

/// Per-pixel outcome colours: TP white, TN black, FP red, FN green.
pub fn error_map(pred: &[u8], label: &[u8]) -> Result<Vec<[u8; 3]>> {
    Confusion::from_maps(pred, label)?;
    Ok(pred
        .iter()
        .zip(label)
        .map(|(&p, &y)| match (p, y) {
            (1, 1) => TP_COLOR,
            (1, 0) => FP_COLOR,
            (0, 1) => FN_COLOR,
            _ => TN_COLOR,
        })
        .collect())
}
