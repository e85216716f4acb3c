//! DBSCAN over box centers.
//!
//! Neighborhoods are closed Euclidean balls (`distance <= epsilon`) and
//! include the query point itself. Points are scanned in input order, so a
//! border point reachable from several clusters joins the one created first.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;

pub const DEFAULT_EPSILON: f64 = 100.0;
pub const DEFAULT_MIN_SAMPLES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    pub epsilon: f64,
    pub min_samples: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            min_samples: DEFAULT_MIN_SAMPLES,
        }
    }
}

impl DbscanParams {
    pub fn new(epsilon: f64, min_samples: usize) -> Result<Self> {
        let p = Self {
            epsilon,
            min_samples,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        if self.min_samples < 1 {
            return Err(Error::InvalidParameter("min_samples must be >= 1".into()));
        }
        Ok(())
    }
}

/// Cluster label of one point. Serialized as the cluster id, or `-1` for noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Noise,
    Cluster(usize),
}

impl Label {
    pub const NOISE_ID: i64 = -1;

    pub fn cluster(self) -> Option<usize> {
        match self {
            Label::Cluster(id) => Some(id),
            Label::Noise => None,
        }
    }

    pub fn is_noise(self) -> bool {
        matches!(self, Label::Noise)
    }

    pub fn as_i64(self) -> i64 {
        match self {
            Label::Noise => Self::NOISE_ID,
            Label::Cluster(id) => id as i64,
        }
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i64(self.as_i64())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        match v {
            Self::NOISE_ID => Ok(Label::Noise),
            id if id >= 0 => Ok(Label::Cluster(id as usize)),
            other => Err(serde::de::Error::custom(format!(
                "invalid cluster label {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<Label>,
    /// `core[i]` is true when point `i` has at least `min_samples` neighbors.
    pub core: Vec<bool>,
    pub n_clusters: usize,
}

impl ClusterAssignment {
    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_noise()).count()
    }

    /// Point indices grouped by cluster id, in input order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_clusters];
        for (i, label) in self.labels.iter().enumerate() {
            if let Label::Cluster(c) = label {
                out[*c].push(i);
            }
        }
        out
    }
}

/// Uniform grid with cells of side `2 * epsilon`; any epsilon-neighbor of a
/// point lies in the same or an adjacent cell even after rounding of the
/// cell index.
struct Grid {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl Grid {
    fn build(points: &[Point2], epsilon: f64) -> Self {
        let cell = 2.0 * epsilon;
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(cell, p)).or_default().push(i);
        }
        Self { cell, buckets }
    }

    fn key(cell: f64, p: &Point2) -> (i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
    }

    /// Indices within `epsilon` of `points[i]`, ascending, including `i`.
    fn neighbors(&self, points: &[Point2], i: usize, eps_sq: f64) -> Vec<usize> {
        let (cx, cy) = Self::key(self.cell, &points[i]);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(bucket) = self.buckets.get(&(cx + dx, cy + dy)) {
                    out.extend(
                        bucket
                            .iter()
                            .copied()
                            .filter(|&j| points[i].distance_squared(&points[j]) <= eps_sq),
                    );
                }
            }
        }
        out.sort_unstable();
        out
    }
}

pub fn dbscan(points: &[Point2], params: &DbscanParams) -> Result<ClusterAssignment> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    params.validate()?;
    if let Some(p) = points
        .iter()
        .find(|p| !(p.x.is_finite() && p.y.is_finite()))
    {
        return Err(Error::NonFinitePoint { x: p.x, y: p.y });
    }

    let n = points.len();
    let eps_sq = params.epsilon * params.epsilon;
    let grid = Grid::build(points, params.epsilon);
    let neighborhoods: Vec<Vec<usize>> =
        (0..n).map(|i| grid.neighbors(points, i, eps_sq)).collect();
    let core: Vec<bool> = neighborhoods
        .iter()
        .map(|nb| nb.len() >= params.min_samples)
        .collect();

    let mut labels: Vec<Option<Label>> = vec![None; n];
    let mut n_clusters = 0;
    let mut queue = VecDeque::new();

    for start in 0..n {
        if labels[start].is_some() {
            continue;
        }
        if !core[start] {
            // May still be claimed as a border point by a later cluster.
            labels[start] = Some(Label::Noise);
            continue;
        }
        let id = n_clusters;
        n_clusters += 1;
        labels[start] = Some(Label::Cluster(id));
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for &q in &neighborhoods[p] {
                match labels[q] {
                    Some(Label::Cluster(_)) => {}
                    Some(Label::Noise) => labels[q] = Some(Label::Cluster(id)),
                    None => {
                        labels[q] = Some(Label::Cluster(id));
                        if core[q] {
                            queue.push_back(q);
                        }
                    }
                }
            }
        }
    }

    Ok(ClusterAssignment {
        labels: labels
            .into_iter()
            .map(|l| l.unwrap_or(Label::Noise))
            .collect(),
        core,
        n_clusters,
    })
}
