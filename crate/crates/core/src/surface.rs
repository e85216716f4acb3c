//! Prediction-surface uncertainty.
//!
//! Every detection from every Monte-Carlo run is reduced to its box center,
//! the centers are clustered with DBSCAN, and each cluster is treated as one
//! object. For each of the four box corners the convex hull of that corner
//! across the cluster's members is measured; the cluster's uncertainty is the
//! mean of the four hull areas and the image's uncertainty is the unweighted
//! mean over clusters. Units are squared pixels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clustering::{dbscan, DbscanParams, Label};
use crate::error::{Error, Result};
use crate::geometry::{box_center, convex_hull, polygon_area, BoundingBox, Point2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub run: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Detection {
    pub fn new(bbox: BoundingBox, run: usize) -> Self {
        Self {
            bbox,
            run,
            confidence: None,
            label: None,
        }
    }
}

/// All detections for one image across `t_runs` Monte-Carlo runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub image_id: String,
    pub t_runs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout_ratio: Option<f64>,
    pub detections: Vec<Detection>,
}

impl PredictionSet {
    pub fn new(
        image_id: impl Into<String>,
        t_runs: usize,
        detections: Vec<Detection>,
    ) -> Result<Self> {
        let ps = Self {
            image_id: image_id.into(),
            t_runs,
            dropout_ratio: None,
            detections,
        };
        ps.validate()?;
        Ok(ps)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_id.is_empty() {
            return Err(Error::InvalidParameter("image_id must be non-empty".into()));
        }
        if self.t_runs < 1 {
            return Err(Error::InvalidParameter("t_runs must be >= 1".into()));
        }
        if let Some(p) = self.dropout_ratio {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!(
                    "dropout ratio {p} outside [0, 1]"
                )));
            }
        }
        for d in &self.detections {
            if d.run >= self.t_runs {
                return Err(Error::InvalidParameter(format!(
                    "detection run {} >= t_runs {} in image {}",
                    d.run, self.t_runs, self.image_id
                )));
            }
            if !d.bbox.is_valid() {
                let b = d.bbox;
                return Err(Error::InvalidBox {
                    x1: b.x1,
                    y1: b.y1,
                    x2: b.x2,
                    y2: b.y2,
                    line: None,
                });
            }
        }
        Ok(())
    }
}

/// One object hypothesis: detections whose centers DBSCAN grouped together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectCluster {
    pub cluster_id: usize,
    pub members: Vec<Detection>,
    /// Corner clouds in the order `(x1,y1)`, `(x1,y2)`, `(x2,y1)`, `(x2,y2)`.
    pub corner_points: [Vec<Point2>; 4],
    pub corner_areas: [f64; 4],
    pub cluster_uncertainty: f64,
}

impl ObjectCluster {
    /// Measure the corner hulls of a non-empty member list.
    pub fn from_members(cluster_id: usize, members: Vec<Detection>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut corner_points: [Vec<Point2>; 4] = Default::default();
        for m in &members {
            for (cloud, corner) in corner_points.iter_mut().zip(m.bbox.corners()) {
                cloud.push(corner);
            }
        }
        let mut corner_areas = [0.0; 4];
        for (area, cloud) in corner_areas.iter_mut().zip(&corner_points) {
            *area = polygon_area(&convex_hull(cloud)?);
        }
        let cluster_uncertainty = corner_areas.iter().sum::<f64>() / 4.0;
        Ok(Self {
            cluster_id,
            members,
            corner_points,
            corner_areas,
            cluster_uncertainty,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub image_id: String,
    pub clusters: Vec<ObjectCluster>,
    pub noise_count: usize,
    /// Mean cluster uncertainty; `None` when no cluster was found.
    pub uncertainty: Option<f64>,
}

impl UncertaintyReport {
    pub fn defined(&self) -> bool {
        self.uncertainty.is_some()
    }

    fn from_clusters(image_id: String, clusters: Vec<ObjectCluster>, noise_count: usize) -> Self {
        let uncertainty = if clusters.is_empty() {
            None
        } else {
            Some(
                clusters.iter().map(|c| c.cluster_uncertainty).sum::<f64>() / clusters.len() as f64,
            )
        };
        Self {
            image_id,
            clusters,
            noise_count,
            uncertainty,
        }
    }
}

/// Per-cluster mean box, the Monte-Carlo predictive mean of one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentativeBox {
    pub cluster_id: usize,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    /// Most frequent member label (lexicographically smallest on ties).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Box centers paired with their detection index, in input order.
pub fn collect_centers(ps: &PredictionSet) -> Vec<(Point2, usize)> {
    ps.detections
        .iter()
        .enumerate()
        .map(|(i, d)| (box_center(&d.bbox), i))
        .collect()
}

pub fn quantify(ps: &PredictionSet, params: &DbscanParams) -> Result<UncertaintyReport> {
    params.validate()?;
    let centers: Vec<Point2> = collect_centers(ps).into_iter().map(|(c, _)| c).collect();
    if centers.is_empty() {
        return Ok(UncertaintyReport::from_clusters(
            ps.image_id.clone(),
            Vec::new(),
            0,
        ));
    }

    let assignment = dbscan(&centers, params)?;
    let clusters = assignment
        .members()
        .into_iter()
        .enumerate()
        .map(|(id, idx)| {
            let members = idx.into_iter().map(|i| ps.detections[i].clone()).collect();
            ObjectCluster::from_members(id, members)
        })
        .collect::<Result<Vec<_>>>()?;
    let noise_count = assignment
        .labels
        .iter()
        .filter(|l| **l == Label::Noise)
        .count();
    Ok(UncertaintyReport::from_clusters(
        ps.image_id.clone(),
        clusters,
        noise_count,
    ))
}

pub fn representative_boxes(report: &UncertaintyReport) -> Result<Vec<RepresentativeBox>> {
    let mut clusters: Vec<&ObjectCluster> = report.clusters.iter().collect();
    clusters.sort_by_key(|c| c.cluster_id);
    clusters
        .into_iter()
        .map(|c| {
            let n = c.members.len() as f64;
            let mut sum = [0.0; 4];
            for m in &c.members {
                sum[0] += m.bbox.x1;
                sum[1] += m.bbox.y1;
                sum[2] += m.bbox.x2;
                sum[3] += m.bbox.y2;
            }
            let [x1, y1, x2, y2] = sum.map(|s| s / n);
            let bbox = BoundingBox { x1, y1, x2, y2 };
            if !bbox.is_valid() {
                return Err(Error::DegenerateBox {
                    cluster_id: c.cluster_id,
                    x1,
                    y1,
                    x2,
                    y2,
                });
            }
            Ok(RepresentativeBox {
                cluster_id: c.cluster_id,
                bbox,
                label: majority_label(&c.members),
            })
        })
        .collect()
}

fn majority_label(members: &[Detection]) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for m in members {
        if let Some(l) = &m.label {
            *counts.entry(l.as_str()).or_default() += 1;
        }
    }
    // BTreeMap iterates in key order, so max_by_key keeps the last maximum;
    // reverse to prefer the smallest label on ties.
    counts
        .into_iter()
        .rev()
        .max_by_key(|(_, n)| *n)
        .map(|(l, _)| l.to_string())
}

/// Sample variance `sum((y - mean)^2) / (n - 1)`, the single-output baseline.
pub fn prediction_variance(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: values.len(),
        });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok(ss / (n - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x1: f64, y1: f64, x2: f64, y2: f64, run: usize) -> Detection {
        Detection::new(BoundingBox::new(x1, y1, x2, y2).unwrap(), run)
    }

    #[test]
    fn centers_follow_input_order() {
        let empty = PredictionSet::new("a", 1, vec![]).unwrap();
        assert!(collect_centers(&empty).is_empty());

        let one = PredictionSet::new("a", 1, vec![det(0.0, 0.0, 10.0, 20.0, 0)]).unwrap();
        assert_eq!(collect_centers(&one), vec![(Point2::new(5.0, 10.0), 0)]);

        let three = PredictionSet::new(
            "a",
            2,
            vec![
                det(0.0, 0.0, 10.0, 10.0, 0),
                det(100.0, 100.0, 120.0, 140.0, 0),
                det(1.0, 1.0, 11.0, 13.0, 1),
            ],
        )
        .unwrap();
        assert_eq!(
            collect_centers(&three),
            vec![
                (Point2::new(5.0, 5.0), 0),
                (Point2::new(110.0, 120.0), 1),
                (Point2::new(6.0, 7.0), 2),
            ]
        );
    }

    #[test]
    fn identical_runs_have_zero_surface() {
        let dets = (0..20).map(|r| det(50.0, 60.0, 150.0, 200.0, r)).collect();
        let ps = PredictionSet::new("img", 20, dets).unwrap();
        let report = quantify(&ps, &DbscanParams::default()).unwrap();
        assert_eq!(report.clusters.len(), 1);
        assert_eq!(report.clusters[0].corner_areas, [0.0; 4]);
        assert_eq!(report.uncertainty, Some(0.0));
        assert_eq!(report.noise_count, 0);
    }

    #[test]
    fn no_detections_is_undefined() {
        let ps = PredictionSet::new("img", 20, vec![]).unwrap();
        let report = quantify(&ps, &DbscanParams::default()).unwrap();
        assert!(!report.defined());
        assert_eq!(report.uncertainty, None);
        assert_eq!(report.noise_count, 0);
    }

    #[test]
    fn unit_square_corner_clouds() {
        // Each corner visits the 4 extremes of a unit square plus interior points.
        let offsets = [
            (0.0, 0.0),
            (1.0, 0.0),
            (1.0, 1.0),
            (0.0, 1.0),
            (0.5, 0.5),
            (0.25, 0.75),
            (0.75, 0.25),
            (0.5, 0.1),
            (0.1, 0.5),
            (0.9, 0.5),
            (0.5, 0.9),
            (0.3, 0.3),
        ];
        let dets: Vec<Detection> = offsets
            .iter()
            .enumerate()
            .map(|(i, &(dx, dy))| det(100.0 + dx, 100.0 + dy, 200.0 + dx, 180.0 + dy, i))
            .collect();
        let ps = PredictionSet::new("img", 12, dets).unwrap();
        let report = quantify(&ps, &DbscanParams::default()).unwrap();
        assert_eq!(report.clusters.len(), 1);
        for a in report.clusters[0].corner_areas {
            assert!((a - 1.0).abs() < 1e-9, "{a}");
        }
        assert!((report.clusters[0].cluster_uncertainty - 1.0).abs() < 1e-9);
        assert!((report.uncertainty.unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn noise_is_counted_not_clustered() {
        let mut dets: Vec<Detection> = (0..5).map(|r| det(0.0, 0.0, 10.0, 10.0, r)).collect();
        dets.push(det(900.0, 900.0, 910.0, 910.0, 0));
        let ps = PredictionSet::new("img", 5, dets).unwrap();
        let report = quantify(&ps, &DbscanParams::default()).unwrap();
        assert_eq!(report.clusters.len(), 1);
        assert_eq!(report.noise_count, 1);
        assert_eq!(report.clusters[0].members.len(), 5);
    }

    #[test]
    fn representatives() {
        let same = PredictionSet::new("a", 3, (0..3).map(|r| det(0.0, 0.0, 2.0, 2.0, r)).collect())
            .unwrap();
        let rep =
            representative_boxes(&quantify(&same, &DbscanParams::default()).unwrap()).unwrap();
        assert_eq!(rep.len(), 1);
        assert_eq!(rep[0].bbox, BoundingBox::new(0.0, 0.0, 2.0, 2.0).unwrap());

        let members = vec![det(0.0, 0.0, 2.0, 2.0, 0), det(2.0, 2.0, 4.0, 4.0, 1)];
        let cluster = ObjectCluster::from_members(0, members).unwrap();
        let report = UncertaintyReport::from_clusters("a".into(), vec![cluster], 0);
        let rep = representative_boxes(&report).unwrap();
        assert_eq!(rep[0].bbox, BoundingBox::new(1.0, 1.0, 3.0, 3.0).unwrap());
    }

    #[test]
    fn degenerate_mean_box_is_reported() {
        // A malformed member drags the mean to x1 == x2.
        let good = det(0.0, 0.0, 2.0, 2.0, 0);
        let bad = Detection::new(
            BoundingBox {
                x1: 4.0,
                y1: 0.0,
                x2: 2.0,
                y2: 2.0,
            },
            1,
        );
        let cluster = ObjectCluster::from_members(7, vec![good, bad]).unwrap();
        let report = UncertaintyReport::from_clusters("a".into(), vec![cluster], 0);
        assert!(matches!(
            representative_boxes(&report),
            Err(Error::DegenerateBox { cluster_id: 7, .. })
        ));
    }

    #[test]
    fn majority_label_prefers_smallest_on_tie() {
        let mut a = det(0.0, 0.0, 1.0, 1.0, 0);
        a.label = Some("Van".into());
        let mut b = det(0.0, 0.0, 1.0, 1.0, 1);
        b.label = Some("Car".into());
        assert_eq!(majority_label(&[a.clone(), b.clone()]), Some("Car".into()));
        assert_eq!(majority_label(&[a.clone(), a, b]), Some("Van".into()));
        assert_eq!(majority_label(&[det(0.0, 0.0, 1.0, 1.0, 0)]), None);
    }

    #[test]
    fn variance() {
        assert_eq!(prediction_variance(&[3.5; 7]).unwrap(), 0.0);
        assert_eq!(prediction_variance(&[1.0, 3.0]).unwrap(), 2.0);
        let v = prediction_variance(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert!((v - 32.0 / 7.0).abs() < 1e-12);
        assert_eq!(
            prediction_variance(&[1.0]),
            Err(Error::InsufficientSamples { needed: 2, got: 1 })
        );
    }

    #[test]
    fn invalid_sets_rejected() {
        assert!(PredictionSet::new("", 1, vec![]).is_err());
        assert!(PredictionSet::new("a", 0, vec![]).is_err());
        assert!(PredictionSet::new("a", 2, vec![det(0.0, 0.0, 1.0, 1.0, 2)]).is_err());
    }
}
