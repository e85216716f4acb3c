//! Per-image analysis shared by the CLI and the experiment harnesses.

use rayon::prelude::*;

use crate::clustering::DbscanParams;
use crate::detmetrics::{
    check_threshold, match_boxes, match_boxes_by_class, score_matching, EvaluationRecord,
    GroundTruthSet, MatchResult, DEFAULT_IOU_THRESHOLD,
};
use crate::error::Result;
use crate::geometry::BoundingBox;
use crate::io::{ReportHeader, ReportRow};
use crate::surface::{
    quantify, representative_boxes, PredictionSet, RepresentativeBox, UncertaintyReport,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub dbscan: DbscanParams,
    pub iou_threshold: f64,
    pub class_aware: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dbscan: DbscanParams::default(),
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            class_aware: false,
        }
    }
}

impl PipelineConfig {
    pub fn header(&self, t_runs: Option<usize>, with_evaluation: bool) -> ReportHeader {
        ReportHeader {
            t_runs,
            epsilon: self.dbscan.epsilon,
            min_samples: self.dbscan.min_samples,
            iou_threshold: with_evaluation.then_some(self.iou_threshold),
            class_aware: self.class_aware,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub record: EvaluationRecord,
    pub matching: MatchResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageResult {
    pub report: UncertaintyReport,
    pub representatives: Vec<RepresentativeBox>,
    pub evaluation: Option<Evaluation>,
}

impl ImageResult {
    pub fn row(&self) -> ReportRow {
        ReportRow::new(&self.report, self.evaluation.as_ref().map(|e| &e.record))
    }
}

/// Quantify one image and, when ground truth is given, score its
/// representative boxes against it.
pub fn analyze_image(
    ps: &PredictionSet,
    truths: Option<&GroundTruthSet>,
    cfg: &PipelineConfig,
) -> Result<ImageResult> {
    let report = quantify(ps, &cfg.dbscan)?;
    let representatives = if report.defined() {
        representative_boxes(&report)?
    } else {
        Vec::new()
    };
    let evaluation = match truths {
        None => None,
        Some(gt) => {
            check_threshold(cfg.iou_threshold)?;
            let boxes: Vec<BoundingBox> = representatives.iter().map(|r| r.bbox).collect();
            let matching = if cfg.class_aware {
                let labels: Vec<Option<String>> =
                    representatives.iter().map(|r| r.label.clone()).collect();
                match_boxes_by_class(&boxes, &labels, gt)?
            } else {
                match_boxes(&boxes, gt)
            };
            let record = score_matching(
                &ps.image_id,
                &matching,
                boxes.len(),
                gt.boxes.len(),
                cfg.iou_threshold,
            )?;
            Some(Evaluation { record, matching })
        }
    };
    Ok(ImageResult {
        report,
        representatives,
        evaluation,
    })
}

/// Analyze many images in parallel. Output is sorted by image id.
pub fn analyze_batch<'a, F>(
    sets: &[PredictionSet],
    truths: F,
    cfg: &PipelineConfig,
) -> Result<Vec<ImageResult>>
where
    F: Fn(&str) -> Option<&'a GroundTruthSet> + Sync,
{
    let mut results = sets
        .par_iter()
        .map(|ps| analyze_image(ps, truths(&ps.image_id), cfg))
        .collect::<Result<Vec<_>>>()?;
    results.sort_by(|a, b| a.report.image_id.cmp(&b.report.image_id));
    Ok(results)
}

/// `(uncertainty, avg_iou)` for every image with a defined uncertainty and
/// an evaluation.
pub fn image_pairs(results: &[ImageResult]) -> (Vec<f64>, Vec<f64>) {
    results
        .iter()
        .filter_map(|r| Some((r.report.uncertainty?, r.evaluation.as_ref()?.record.avg_iou)))
        .unzip()
}

/// `(cluster_uncertainty, iou)` per cluster; a cluster whose representative
/// box matched no truth contributes IoU 0.
pub fn object_pairs(results: &[ImageResult]) -> (Vec<f64>, Vec<f64>) {
    let mut us = Vec::new();
    let mut ious = Vec::new();
    for r in results {
        let Some(eval) = &r.evaluation else { continue };
        for (pi, rep) in r.representatives.iter().enumerate() {
            let Some(cluster) = r
                .report
                .clusters
                .iter()
                .find(|c| c.cluster_id == rep.cluster_id)
            else {
                continue;
            };
            let iou = eval
                .matching
                .pairs
                .iter()
                .find(|p| p.prediction == pi)
                .map_or(0.0, |p| p.iou);
            us.push(cluster.cluster_uncertainty);
            ious.push(iou);
        }
    }
    (us, ious)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::Detection;

    fn det(x1: f64, y1: f64, x2: f64, y2: f64, run: usize) -> Detection {
        Detection::new(BoundingBox::new(x1, y1, x2, y2).unwrap(), run)
    }

    #[test]
    fn representative_boxes_are_scored() {
        let dets = vec![
            det(0.0, 0.0, 10.0, 10.0, 0),
            det(2.0, 0.0, 12.0, 10.0, 1),
            det(1.0, 0.0, 11.0, 10.0, 2),
        ];
        let ps = PredictionSet::new("a", 3, dets).unwrap();
        let gt = GroundTruthSet::new("a", vec![BoundingBox::new(1.0, 0.0, 11.0, 10.0).unwrap()]);
        let r = analyze_image(&ps, Some(&gt), &PipelineConfig::default()).unwrap();
        let eval = r.evaluation.unwrap();
        assert_eq!(eval.record.tp, 1);
        assert_eq!(eval.record.avg_iou, 1.0);
        assert_eq!(r.representatives[0].bbox, gt.boxes[0]);
    }

    #[test]
    fn undefined_image_has_only_misses() {
        let ps = PredictionSet::new("a", 20, vec![]).unwrap();
        let gt = GroundTruthSet::new("a", vec![BoundingBox::new(1.0, 0.0, 11.0, 10.0).unwrap()]);
        let r = analyze_image(&ps, Some(&gt), &PipelineConfig::default()).unwrap();
        let rec = r.evaluation.unwrap().record;
        assert_eq!((rec.tp, rec.fp, rec.fn_), (0, 0, 1));
        assert!(image_pairs(&[]).0.is_empty());
    }

    #[test]
    fn batch_sorted_by_id() {
        let sets = vec![
            PredictionSet::new("b", 1, vec![]).unwrap(),
            PredictionSet::new("a", 1, vec![]).unwrap(),
        ];
        let out = analyze_batch(&sets, |_| None, &PipelineConfig::default()).unwrap();
        let ids: Vec<&str> = out.iter().map(|r| r.report.image_id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
    }
}
