//! File formats.
//!
//! **Predictions** are JSON Lines, one detection per line:
//!
//! ```text
//! {"image_id":"000001","run":0,"x1":10.5,"y1":20,"x2":50,"y2":80,"confidence":0.9,"label":"Car"}
//! ```
//!
//! `confidence` and `label` are optional. The number of runs of an image is
//! `1 + max(run)` unless a metadata line declares it; metadata lines have no
//! box and carry `t_runs` (plus optional `image_id` and `dropout_ratio`):
//!
//! ```text
//! {"t_runs":20}                          default for every image
//! {"image_id":"000002","t_runs":20}      declares an image, even one with no detections
//! ```
//!
//! Blank lines are ignored. Any other line must parse or the whole stream is
//! rejected with the 1-based line number.
//!
//! **Ground truth** uses the KITTI object label layout, one file per image
//! named `<image_id>.txt`. Field 1 is the class, fields 5-8 are
//! left, top, right, bottom in pixels; `DontCare` lines are skipped.
//!
//! **Reports** are CSV with the fixed header
//! `image_id,uncertainty,defined,noise_count,n_clusters,avg_iou,precision,recall,f1`
//! (missing values are empty cells), or one JSON document that also carries
//! the run parameters and dataset summary. Numbers use the shortest decimal
//! form that round-trips.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detmetrics::{DatasetSummary, EvaluationRecord, GroundTruthSet};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::surface::{Detection, PredictionSet, UncertaintyReport};

/// One detection on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub image_id: String,
    pub run: usize,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_id: Option<String>,
    t_runs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dropout_ratio: Option<f64>,
}

enum Line {
    Detection(PredictionRecord),
    Meta(MetaRecord),
}

fn parse_line(text: &str, line: usize) -> Result<Line> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        reason: format!("invalid JSON: {e}"),
    })?;
    let obj = value.as_object().ok_or_else(|| Error::Parse {
        line,
        reason: "expected a JSON object".into(),
    })?;
    let is_meta = !obj.contains_key("run") && obj.contains_key("t_runs");
    let schema_err = |e: serde_json::Error| Error::Parse {
        line,
        reason: e.to_string(),
    };
    if is_meta {
        let m: MetaRecord = serde_json::from_value(value).map_err(schema_err)?;
        if m.t_runs < 1 {
            return Err(Error::Parse {
                line,
                reason: "t_runs must be >= 1".into(),
            });
        }
        if matches!(&m.image_id, Some(id) if id.is_empty()) {
            return Err(Error::Parse {
                line,
                reason: "empty image_id".into(),
            });
        }
        if let Some(p) = m.dropout_ratio {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Parse {
                    line,
                    reason: format!("dropout_ratio {p} outside [0, 1]"),
                });
            }
        }
        return Ok(Line::Meta(m));
    }
    let rec: PredictionRecord = serde_json::from_value(value).map_err(schema_err)?;
    if rec.image_id.is_empty() {
        return Err(Error::Parse {
            line,
            reason: "empty image_id".into(),
        });
    }
    if let Some(c) = rec.confidence {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::Parse {
                line,
                reason: format!("confidence {c} outside [0, 1]"),
            });
        }
    }
    BoundingBox::new(rec.x1, rec.y1, rec.x2, rec.y2).map_err(|e| e.at_line(line))?;
    Ok(Line::Detection(rec))
}

#[derive(Default)]
struct ImageAccumulator {
    declared_runs: Option<(usize, usize)>, // (t_runs, line)
    dropout_ratio: Option<f64>,
    detections: Vec<(Detection, usize)>,
}

/// Parse a prediction stream, collecting every located error.
pub fn parse_predictions_collect(
    text: &str,
) -> std::result::Result<Vec<PredictionSet>, Vec<Error>> {
    let mut errors = Vec::new();
    let mut order: Vec<String> = Vec::new();
    let mut images: HashMap<String, ImageAccumulator> = HashMap::new();
    let mut default_runs: Option<usize> = None;
    let mut default_dropout: Option<f64> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        match parse_line(raw, line) {
            Err(e) => errors.push(e),
            Ok(Line::Meta(m)) => match m.image_id {
                None => {
                    default_runs = Some(m.t_runs);
                    default_dropout = m.dropout_ratio.or(default_dropout);
                }
                Some(id) => {
                    if !images.contains_key(&id) {
                        order.push(id.clone());
                    }
                    let acc = images.entry(id).or_default();
                    acc.declared_runs = Some((m.t_runs, line));
                    if m.dropout_ratio.is_some() {
                        acc.dropout_ratio = m.dropout_ratio;
                    }
                }
            },
            Ok(Line::Detection(rec)) => {
                if !images.contains_key(&rec.image_id) {
                    order.push(rec.image_id.clone());
                }
                let acc = images.entry(rec.image_id.clone()).or_default();
                let det = Detection {
                    bbox: BoundingBox {
                        x1: rec.x1,
                        y1: rec.y1,
                        x2: rec.x2,
                        y2: rec.y2,
                    },
                    run: rec.run,
                    confidence: rec.confidence,
                    label: rec.label,
                };
                acc.detections.push((det, line));
            }
        }
    }

    let mut sets = Vec::with_capacity(order.len());
    for id in order {
        let acc = images.remove(&id).unwrap_or_default();
        let observed = acc.detections.iter().map(|(d, _)| d.run + 1).max();
        let t_runs = match (acc.declared_runs, default_runs, observed) {
            (Some((declared, _)), _, _) | (None, Some(declared), _) => {
                for (d, line) in &acc.detections {
                    if d.run >= declared {
                        errors.push(Error::Parse {
                            line: *line,
                            reason: format!(
                                "run {} >= declared t_runs {declared} for image {id}",
                                d.run
                            ),
                        });
                    }
                }
                declared
            }
            (None, None, Some(obs)) => obs,
            (None, None, None) => 1,
        };
        sets.push(PredictionSet {
            image_id: id,
            t_runs,
            dropout_ratio: acc.dropout_ratio.or(default_dropout),
            detections: acc.detections.into_iter().map(|(d, _)| d).collect(),
        });
    }

    if errors.is_empty() {
        Ok(sets)
    } else {
        errors.sort_by_key(|e| e.line());
        Err(errors)
    }
}

/// Parse a prediction stream, failing on the first malformed line.
pub fn parse_predictions(text: &str) -> Result<Vec<PredictionSet>> {
    parse_predictions_collect(text).map_err(|mut errs| errs.swap_remove(0))
}

/// Serialize prediction sets: a metadata line per image, then its detections.
pub fn write_predictions(sets: &[PredictionSet]) -> String {
    let mut out = String::new();
    for ps in sets {
        let meta = MetaRecord {
            image_id: Some(ps.image_id.clone()),
            t_runs: ps.t_runs,
            dropout_ratio: ps.dropout_ratio,
        };
        out.push_str(&serde_json::to_string(&meta).expect("serializable"));
        out.push('\n');
        for d in &ps.detections {
            let rec = PredictionRecord {
                image_id: ps.image_id.clone(),
                run: d.run,
                x1: d.bbox.x1,
                y1: d.bbox.y1,
                x2: d.bbox.x2,
                y2: d.bbox.y2,
                confidence: d.confidence,
                label: d.label.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("serializable"));
            out.push('\n');
        }
    }
    out
}

/// Parse one KITTI label file.
pub fn parse_kitti_labels(text: &str, image_id: &str) -> Result<GroundTruthSet> {
    let mut boxes = Vec::new();
    let mut labels = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields[0] == "DontCare" {
            continue;
        }
        if fields.len() < 8 {
            return Err(Error::Parse {
                line,
                reason: format!("expected at least 8 fields, found {}", fields.len()),
            });
        }
        let mut coords = [0.0; 4];
        for (c, (k, f)) in coords.iter_mut().zip(fields[4..8].iter().enumerate()) {
            *c = f.parse::<f64>().map_err(|_| Error::Parse {
                line,
                reason: format!("field {} is not a number: {f:?}", k + 5),
            })?;
        }
        let [left, top, right, bottom] = coords;
        boxes.push(BoundingBox::new(left, top, right, bottom).map_err(|e| e.at_line(line))?);
        labels.push(fields[0].to_string());
    }
    Ok(GroundTruthSet {
        image_id: image_id.to_string(),
        boxes,
        class_labels: Some(labels),
    })
}

/// Write ground truth as KITTI label lines. Fields other than class and box
/// are zero-filled.
pub fn write_kitti_labels(gt: &GroundTruthSet) -> String {
    let mut out = String::new();
    for (i, b) in gt.boxes.iter().enumerate() {
        let label = gt.label(i).unwrap_or("Car");
        let _ = writeln!(
            out,
            "{label} 0.00 0 0.00 {} {} {} {} 0.00 0.00 0.00 0.00 0.00 0.00 0.00",
            b.x1, b.y1, b.x2, b.y2
        );
    }
    out
}

pub const REPORT_CSV_HEADER: [&str; 9] = [
    "image_id",
    "uncertainty",
    "defined",
    "noise_count",
    "n_clusters",
    "avg_iou",
    "precision",
    "recall",
    "f1",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub image_id: String,
    pub uncertainty: Option<f64>,
    pub defined: bool,
    pub noise_count: usize,
    pub n_clusters: usize,
    pub avg_iou: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl ReportRow {
    pub fn new(report: &UncertaintyReport, eval: Option<&EvaluationRecord>) -> Self {
        Self {
            image_id: report.image_id.clone(),
            uncertainty: report.uncertainty,
            defined: report.defined(),
            noise_count: report.noise_count,
            n_clusters: report.clusters.len(),
            avg_iou: eval.map(|e| e.avg_iou),
            precision: eval.map(|e| e.precision),
            recall: eval.map(|e| e.recall),
            f1: eval.map(|e| e.f1),
        }
    }
}

/// Noise configuration echoed into reports of simulated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseEcho {
    pub corner_sigma: Option<f64>,
    pub sigma_range: Option<(f64, f64)>,
    pub miss_rate: f64,
    pub spurious_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub t_runs: Option<usize>,
    pub epsilon: f64,
    pub min_samples: usize,
    pub iou_threshold: Option<f64>,
    pub class_aware: bool,
    pub dropout_ratio: Option<f64>,
    pub noise: Option<NoiseEcho>,
}

impl Default for ReportHeader {
    fn default() -> Self {
        Self {
            t_runs: None,
            epsilon: crate::clustering::DEFAULT_EPSILON,
            min_samples: crate::clustering::DEFAULT_MIN_SAMPLES,
            iou_threshold: None,
            class_aware: false,
            dropout_ratio: None,
            noise: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportDocument {
    pub header: ReportHeader,
    pub rows: Vec<ReportRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<DatasetSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

fn num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_report(doc: &ReportDocument, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(doc).expect("serializable");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(Vec::new());
            w.write_record(REPORT_CSV_HEADER).expect("in-memory write");
            for r in &doc.rows {
                w.write_record([
                    r.image_id.clone(),
                    num(r.uncertainty),
                    r.defined.to_string(),
                    r.noise_count.to_string(),
                    r.n_clusters.to_string(),
                    num(r.avg_iou),
                    num(r.precision),
                    num(r.recall),
                    num(r.f1),
                ])
                .expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
        }
    }
}

fn cell_f64(s: &str, line: usize, col: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|_| Error::Parse {
        line,
        reason: format!("{col}: not a number: {s:?}"),
    })
}

fn cell_usize(s: &str, line: usize, col: &str) -> Result<usize> {
    s.parse::<usize>().map_err(|_| Error::Parse {
        line,
        reason: format!("{col}: not a count: {s:?}"),
    })
}

/// Read rows back from a CSV report. The header row must match exactly.
pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 1;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            reason: e.to_string(),
        })?;
        if idx == 0 {
            if rec.iter().ne(REPORT_CSV_HEADER) {
                return Err(Error::Parse {
                    line,
                    reason: format!(
                        "unexpected header, expected {}",
                        REPORT_CSV_HEADER.join(",")
                    ),
                });
            }
            continue;
        }
        if rec.len() != REPORT_CSV_HEADER.len() {
            return Err(Error::Parse {
                line,
                reason: format!(
                    "expected {} columns, found {}",
                    REPORT_CSV_HEADER.len(),
                    rec.len()
                ),
            });
        }
        let defined = match &rec[2] {
            "true" => true,
            "false" => false,
            other => {
                return Err(Error::Parse {
                    line,
                    reason: format!("defined: expected true/false, found {other:?}"),
                })
            }
        };
        rows.push(ReportRow {
            image_id: rec[0].to_string(),
            uncertainty: cell_f64(&rec[1], line, "uncertainty")?,
            defined,
            noise_count: cell_usize(&rec[3], line, "noise_count")?,
            n_clusters: cell_usize(&rec[4], line, "n_clusters")?,
            avg_iou: cell_f64(&rec[5], line, "avg_iou")?,
            precision: cell_f64(&rec[6], line, "precision")?,
            recall: cell_f64(&rec[7], line, "recall")?,
            f1: cell_f64(&rec[8], line, "f1")?,
        });
    }
    Ok(rows)
}

pub fn parse_report_json(text: &str) -> Result<ReportDocument> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_stream() {
        assert_eq!(parse_predictions("").unwrap(), vec![]);
        assert_eq!(parse_predictions("\n  \n").unwrap(), vec![]);
    }

    #[test]
    fn groups_and_infers_runs() {
        let text = r#"{"image_id":"a","run":0,"x1":0,"y1":0,"x2":10,"y2":10}
{"image_id":"a","run":1,"x1":1,"y1":1,"x2":11,"y2":11}
{"image_id":"a","run":1,"x1":2,"y1":2,"x2":12,"y2":12,"confidence":0.5,"label":"Car"}
"#;
        let sets = parse_predictions(text).unwrap();
        assert_eq!(sets.len(), 1);
        assert_eq!(sets[0].t_runs, 2);
        assert_eq!(sets[0].detections.len(), 3);
        assert_eq!(sets[0].detections[2].label.as_deref(), Some("Car"));
        assert_eq!(sets[0].detections[1].bbox.x1, 1.0);
    }

    #[test]
    fn inverted_box_names_line() {
        let text = r#"{"image_id":"a","run":0,"x1":0,"y1":0,"x2":10,"y2":10}
{"image_id":"a","run":0,"x1":20,"y1":0,"x2":10,"y2":10}"#;
        match parse_predictions(text) {
            Err(Error::InvalidBox { line: Some(2), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn meta_lines_declare_runs_and_empty_images() {
        let text = r#"{"t_runs":20,"dropout_ratio":0.3}
{"image_id":"empty","t_runs":20}
{"image_id":"a","run":4,"x1":0,"y1":0,"x2":10,"y2":10}"#;
        let sets = parse_predictions(text).unwrap();
        assert_eq!(sets.len(), 2);
        assert_eq!(sets[0].image_id, "empty");
        assert!(sets[0].detections.is_empty());
        assert_eq!(sets[1].t_runs, 20);
        assert_eq!(sets[1].dropout_ratio, Some(0.3));

        let bad = r#"{"image_id":"a","t_runs":2}
{"image_id":"a","run":2,"x1":0,"y1":0,"x2":10,"y2":10}"#;
        assert!(matches!(
            parse_predictions(bad),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn collects_all_errors() {
        let text = "not json\n{\"image_id\":\"a\",\"run\":-1,\"x1\":0,\"y1\":0,\"x2\":1,\"y2\":1}\n{\"image_id\":\"a\",\"run\":0,\"x1\":0,\"y1\":0,\"x2\":1,\"y2\":1}\n[1]\n";
        let errs = parse_predictions_collect(text).unwrap_err();
        let lines: Vec<Option<usize>> = errs.iter().map(Error::line).collect();
        assert_eq!(lines, vec![Some(1), Some(2), Some(4)]);
    }

    #[test]
    fn write_then_parse_predictions() {
        let text = r#"{"image_id":"b","run":0,"x1":0.1,"y1":0,"x2":10,"y2":10,"label":"Car"}
{"image_id":"b","run":2,"x1":1,"y1":1,"x2":11,"y2":11.25}"#;
        let sets = parse_predictions(text).unwrap();
        let written = write_predictions(&sets);
        assert_eq!(parse_predictions(&written).unwrap(), sets);
        assert!(written.starts_with("{\"image_id\":\"b\",\"t_runs\":3}\n"));
    }

    #[test]
    fn kitti_fields() {
        let text = "Car 0.00 0 1.55 100.0 150.0 300.0 280.0 1.5 1.6 3.9 1.0 1.7 40.0 1.5\n\
                    DontCare -1 -1 -10 500.0 100.0 520.0 120.0 -1 -1 -1 -1000 -1000 -1000 -10\n\
                    Pedestrian 0.00 0 -0.2 700.5 160 720.25 230 1.7 0.6 0.8 2.0 1.6 20.0 0.1\n";
        let gt = parse_kitti_labels(text, "000007").unwrap();
        assert_eq!(gt.image_id, "000007");
        assert_eq!(
            gt.boxes,
            vec![
                BoundingBox::new(100.0, 150.0, 300.0, 280.0).unwrap(),
                BoundingBox::new(700.5, 160.0, 720.25, 230.0).unwrap(),
            ]
        );
        assert_eq!(
            gt.class_labels,
            Some(vec!["Car".to_string(), "Pedestrian".to_string()])
        );
        assert!(parse_kitti_labels("", "x").unwrap().boxes.is_empty());
    }

    #[test]
    fn kitti_errors() {
        assert!(matches!(
            parse_kitti_labels("Car 0 0 0 1 2 3\n", "x"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_kitti_labels("\nCar 0 0 0 1 2 abc 4\n", "x"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_kitti_labels("Car 0 0 0 300 2 100 4\n", "x"),
            Err(Error::InvalidBox { line: Some(1), .. })
        ));
    }

    #[test]
    fn kitti_write_read() {
        let gt = GroundTruthSet {
            image_id: "1".into(),
            boxes: vec![BoundingBox::new(1.5, 2.0, 30.125, 40.0).unwrap()],
            class_labels: Some(vec!["Van".into()]),
        };
        assert_eq!(
            parse_kitti_labels(&write_kitti_labels(&gt), "1").unwrap(),
            gt
        );
    }

    fn row(id: &str, u: Option<f64>) -> ReportRow {
        ReportRow {
            image_id: id.into(),
            uncertainty: u,
            defined: u.is_some(),
            noise_count: 2,
            n_clusters: 3,
            avg_iou: Some(0.1 + 0.2),
            precision: Some(2.0 / 3.0),
            recall: None,
            f1: Some(1.0),
        }
    }

    #[test]
    fn csv_shapes() {
        let empty = write_report(&ReportDocument::default(), ReportFormat::Csv);
        assert_eq!(
            empty,
            "image_id,uncertainty,defined,noise_count,n_clusters,avg_iou,precision,recall,f1\n"
        );
        let doc = ReportDocument {
            rows: vec![row("img,1", Some(12.5))],
            ..Default::default()
        };
        let csv = write_report(&doc, ReportFormat::Csv);
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(
            csv.lines().nth(1).unwrap(),
            "\"img,1\",12.5,true,2,3,0.30000000000000004,0.6666666666666666,,1"
        );
        assert_eq!(parse_report_csv(&csv).unwrap(), doc.rows);
    }

    #[test]
    fn csv_rejects_wrong_header() {
        assert!(parse_report_csv("a,b\n").is_err());
    }

    #[test]
    fn json_round_trip() {
        let doc = ReportDocument {
            rows: vec![row("a", None), row("b", Some(1e-7))],
            ..Default::default()
        };
        let text = write_report(&doc, ReportFormat::Json);
        let back = parse_report_json(&text).unwrap();
        assert_eq!(back, doc);
        assert_eq!(write_report(&back, ReportFormat::Json), text);
    }
}
