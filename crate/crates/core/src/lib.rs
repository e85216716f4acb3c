//! Prediction-surface uncertainty for multi-output detectors.
//!
//! Given `T` Monte-Carlo dropout runs of a box detector over one image, the
//! box centers are clustered into objects and each object's uncertainty is
//! the mean convex-hull area swept by its four corners. The per-image score
//! can then be correlated with detection accuracy (IoU).

pub mod cli;
pub mod clustering;
pub mod detmetrics;
pub mod error;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod simulator;
pub mod stats;
pub mod surface;

pub use clustering::{dbscan, ClusterAssignment, DbscanParams, Label};
pub use detmetrics::{evaluate, match_boxes, EvaluationRecord, GroundTruthSet, MatchResult};
pub use error::{Error, Result};
pub use geometry::{box_center, convex_hull, iou, polygon_area, BoundingBox, Point2, Polygon};
pub use stats::{pearson, spearman, CorrelationResult};
pub use surface::{
    collect_centers, prediction_variance, quantify, representative_boxes, Detection, ObjectCluster,
    PredictionSet, RepresentativeBox, UncertaintyReport,
};
