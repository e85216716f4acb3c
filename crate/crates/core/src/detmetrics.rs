//! Detection accuracy: greedy one-to-one IoU matching against ground truth,
//! then thresholded TP/FP/FN counting with precision, recall and F1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruthSet {
    pub image_id: String,
    pub boxes: Vec<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_labels: Option<Vec<String>>,
}

impl GroundTruthSet {
    pub fn new(image_id: impl Into<String>, boxes: Vec<BoundingBox>) -> Self {
        Self {
            image_id: image_id.into(),
            boxes,
            class_labels: None,
        }
    }

    pub fn label(&self, i: usize) -> Option<&str> {
        self.class_labels
            .as_ref()
            .and_then(|l| l.get(i))
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub prediction: usize,
    pub truth: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_predictions: Vec<usize>,
    pub unmatched_ground_truths: Vec<usize>,
}

/// Greedy one-to-one assignment over an IoU matrix `iou[prediction][truth]`.
///
/// Candidates with IoU > 0 are taken in descending IoU order, ties broken by
/// lower prediction index and then lower truth index. Pairs are returned in
/// the order they were taken.
pub fn greedy_assign(iou_matrix: &[Vec<f64>], n_truths: usize) -> MatchResult {
    let mut candidates: Vec<MatchedPair> = Vec::new();
    for (p, row) in iou_matrix.iter().enumerate() {
        for (t, &v) in row.iter().enumerate().take(n_truths) {
            if v > 0.0 {
                candidates.push(MatchedPair {
                    prediction: p,
                    truth: t,
                    iou: v,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.iou
            .total_cmp(&a.iou)
            .then(a.prediction.cmp(&b.prediction))
            .then(a.truth.cmp(&b.truth))
    });

    let mut pred_used = vec![false; iou_matrix.len()];
    let mut truth_used = vec![false; n_truths];
    let mut pairs = Vec::new();
    for c in candidates {
        if !pred_used[c.prediction] && !truth_used[c.truth] {
            pred_used[c.prediction] = true;
            truth_used[c.truth] = true;
            pairs.push(c);
        }
    }
    MatchResult {
        pairs,
        unmatched_predictions: unused(&pred_used),
        unmatched_ground_truths: unused(&truth_used),
    }
}

fn unused(flags: &[bool]) -> Vec<usize> {
    flags
        .iter()
        .enumerate()
        .filter(|(_, used)| !**used)
        .map(|(i, _)| i)
        .collect()
}

/// Class-agnostic matching of predicted boxes to ground truth.
pub fn match_boxes(predictions: &[BoundingBox], truths: &GroundTruthSet) -> MatchResult {
    let matrix: Vec<Vec<f64>> = predictions
        .iter()
        .map(|p| truths.boxes.iter().map(|t| iou(p, t)).collect())
        .collect();
    greedy_assign(&matrix, truths.boxes.len())
}

/// Class-aware matching: a prediction may only pair with a truth carrying
/// the same label. Unlabeled items on either side never pair.
pub fn match_boxes_by_class(
    predictions: &[BoundingBox],
    prediction_labels: &[Option<String>],
    truths: &GroundTruthSet,
) -> Result<MatchResult> {
    if prediction_labels.len() != predictions.len() {
        return Err(Error::LengthMismatch(
            predictions.len(),
            prediction_labels.len(),
        ));
    }
    let matrix: Vec<Vec<f64>> = predictions
        .iter()
        .zip(prediction_labels)
        .map(|(p, pl)| {
            truths
                .boxes
                .iter()
                .enumerate()
                .map(|(ti, t)| match (pl.as_deref(), truths.label(ti)) {
                    (Some(a), Some(b)) if a == b => iou(p, t),
                    _ => 0.0,
                })
                .collect()
        })
        .collect();
    Ok(greedy_assign(&matrix, truths.boxes.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub image_id: String,
    pub avg_iou: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidThreshold(t))
    }
}

/// Score a finished matching. A pair with IoU below `t` fails the
/// correctness test: its prediction counts as FP and its truth as FN.
pub fn score_matching(
    image_id: &str,
    matching: &MatchResult,
    n_predictions: usize,
    n_truths: usize,
    t: f64,
) -> Result<EvaluationRecord> {
    check_threshold(t)?;
    let tp = matching.pairs.iter().filter(|p| p.iou >= t).count();
    let avg_iou = if matching.pairs.is_empty() {
        0.0
    } else {
        matching.pairs.iter().map(|p| p.iou).sum::<f64>() / matching.pairs.len() as f64
    };
    let fp = n_predictions - tp;
    let fn_ = n_truths - tp;
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(EvaluationRecord {
        image_id: image_id.to_string(),
        avg_iou,
        tp,
        fp,
        fn_,
        precision,
        recall,
        f1: harmonic(precision, recall),
        threshold: t,
    })
}

pub fn evaluate(
    predictions: &[BoundingBox],
    truths: &GroundTruthSet,
    t: f64,
) -> Result<EvaluationRecord> {
    check_threshold(t)?;
    let m = match_boxes(predictions, truths);
    score_matching(
        &truths.image_id,
        &m,
        predictions.len(),
        truths.boxes.len(),
        t,
    )
}

pub fn evaluate_by_class(
    predictions: &[BoundingBox],
    prediction_labels: &[Option<String>],
    truths: &GroundTruthSet,
    t: f64,
) -> Result<EvaluationRecord> {
    check_threshold(t)?;
    let m = match_boxes_by_class(predictions, prediction_labels, truths)?;
    score_matching(
        &truths.image_id,
        &m,
        predictions.len(),
        truths.boxes.len(),
        t,
    )
}

/// Dataset-level aggregates, reported both ways since neither is canonical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_images: usize,
    pub per_image_mean: MeanMetrics,
    pub pooled: PooledMetrics,
}

/// Unweighted mean of per-image metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub avg_iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Metrics recomputed from TP/FP/FN summed over all images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledMetrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn summarize(records: &[EvaluationRecord]) -> DatasetSummary {
    let n = records.len();
    let mean = |f: fn(&EvaluationRecord) -> f64| {
        if n == 0 {
            0.0
        } else {
            records.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let tp: usize = records.iter().map(|r| r.tp).sum();
    let fp: usize = records.iter().map(|r| r.fp).sum();
    let fn_: usize = records.iter().map(|r| r.fn_).sum();
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    DatasetSummary {
        n_images: n,
        per_image_mean: MeanMetrics {
            avg_iou: mean(|r| r.avg_iou),
            precision: mean(|r| r.precision),
            recall: mean(|r| r.recall),
            f1: mean(|r| r.f1),
        },
        pooled: PooledMetrics {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1: harmonic(precision, recall),
        },
    }
}
