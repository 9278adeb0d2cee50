//! Temporal IoU and recall evaluation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::TimeSpan;
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLDS: [f64; 4] = [0.1, 0.3, 0.5, 0.7];

/// Intersection over union of two normalized spans; zero when the union has
/// zero length.
pub fn iou(a: &TimeSpan, b: &TimeSpan) -> f64 {
    let inter = (a.e.min(b.e) - a.s.max(b.s)).max(0.0);
    let union = (a.e.max(b.e) - a.s.min(b.s)).max(0.0);
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecallEntry {
    pub iou: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall_at: Vec<RecallEntry>,
    pub mean_iou: f64,
    pub n_samples: usize,
}

/// R@1 over IoU thresholds (strict `IoU > M`) plus mean IoU. Predictions and
/// ground truth are matched by id and must cover the same id set.
pub fn evaluate(
    predictions: &[(String, TimeSpan)],
    ground_truth: &[(String, TimeSpan)],
    thresholds: &[f64],
) -> Result<EvalReport> {
    if predictions.len() != ground_truth.len() {
        return Err(Error::IdMismatch(format!(
            "{} predictions vs {} ground-truth spans",
            predictions.len(),
            ground_truth.len()
        )));
    }
    let gt: HashMap<&str, &TimeSpan> = ground_truth
        .iter()
        .map(|(id, s)| (id.as_str(), s))
        .collect();
    let mut ious = Vec::with_capacity(predictions.len());
    for (id, pred) in predictions {
        let g = gt
            .get(id.as_str())
            .ok_or_else(|| Error::IdMismatch(id.clone()))?;
        ious.push(iou(pred, g));
    }
    let n = ious.len();
    let mean_iou = if n == 0 {
        0.0
    } else {
        ious.iter().sum::<f64>() / n as f64
    };
    let recall_at = thresholds
        .iter()
        .map(|&m| RecallEntry {
            iou: m,
            recall: if n == 0 {
                0.0
            } else {
                ious.iter().filter(|&&x| x > m).count() as f64 / n as f64
            },
        })
        .collect();
    Ok(EvalReport {
        recall_at,
        mean_iou,
        n_samples: n,
    })
}
