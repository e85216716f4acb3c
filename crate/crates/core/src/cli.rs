//! `predsurf` command line.
//!
//! Exit codes: 0 success, 2 input error (I/O, parse, invalid parameters,
//! missing ground truth), 3 insufficient data for a correlation.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::clustering::{DbscanParams, DEFAULT_EPSILON, DEFAULT_MIN_SAMPLES};
use crate::detmetrics::{summarize, GroundTruthSet, DEFAULT_IOU_THRESHOLD};
use crate::error::Error;
use crate::io::{
    parse_kitti_labels, parse_predictions_collect, parse_report_csv, parse_report_json,
    write_kitti_labels, write_predictions, write_report, NoiseEcho, ReportDocument, ReportFormat,
    ReportRow,
};
use crate::pipeline::{analyze_batch, image_pairs, object_pairs, ImageResult, PipelineConfig};
use crate::simulator::{derive_seed, simulate_dataset, DatasetConfig, NoiseModel, SceneSpec};
use crate::stats::{pearson, CorrelationResult};
use crate::surface::PredictionSet;

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_INSUFFICIENT: u8 = 3;

const DEFAULT_T_RUNS: usize = 20;

#[derive(Debug, Parser)]
#[command(
    name = "predsurf",
    version,
    about = "Prediction-surface uncertainty for MC-dropout detectors"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-image uncertainty from a predictions file.
    Quantify(QuantifyArgs),
    /// Uncertainty plus accuracy of the cluster mean boxes against ground truth.
    Evaluate(EvaluateArgs),
    /// Pearson correlation between uncertainty and IoU.
    Correlate(CorrelateArgs),
    /// Write simulated ground truth and predictions.
    Simulate(SimulateArgs),
    /// Simulate, quantify and evaluate one dataset per noise level.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ClusterArgs {
    /// DBSCAN radius in pixels.
    #[arg(long = "eps", default_value_t = DEFAULT_EPSILON)]
    pub eps: f64,
    /// DBSCAN minimum neighborhood size (self-inclusive).
    #[arg(long, default_value_t = DEFAULT_MIN_SAMPLES)]
    pub min_samples: usize,
}

impl ClusterArgs {
    fn params(&self) -> Result<DbscanParams, CliError> {
        Ok(DbscanParams::new(self.eps, self.min_samples)?)
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
    pub format: ReportFormat,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
    pub iou_threshold: f64,
    /// Only pair predictions with ground truth of the same class.
    #[arg(long)]
    pub class_aware: bool,
    /// Keep images without a ground-truth file (metric columns left empty).
    #[arg(long)]
    pub allow_missing: bool,
}

#[derive(Debug, Clone, Args)]
pub struct QuantifyArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[command(flatten)]
    pub cluster: ClusterArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    /// Directory of KITTI label files named `<image_id>.txt`.
    #[arg(long)]
    pub ground_truth: PathBuf,
    #[command(flatten)]
    pub cluster: ClusterArgs,
    #[command(flatten)]
    pub eval: EvalArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Pairing {
    /// One (uncertainty, avg IoU) pair per image.
    Image,
    /// One (cluster uncertainty, IoU) pair per detected object.
    Object,
}

#[derive(Debug, Clone, Args)]
pub struct CorrelateArgs {
    /// Report from `evaluate` (CSV, or JSON when the name ends in `.json`).
    #[arg(long, conflicts_with_all = ["predictions", "ground_truth"])]
    pub report: Option<PathBuf>,
    #[arg(long, requires = "ground_truth")]
    pub predictions: Option<PathBuf>,
    #[arg(long, requires = "predictions")]
    pub ground_truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Pairing::Image)]
    pub pairing: Pairing,
    #[command(flatten)]
    pub cluster: ClusterArgs,
    #[command(flatten)]
    pub eval: EvalArgs,
    /// Also write the result as JSON to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    #[arg(long, default_value_t = 100)]
    pub n_images: usize,
    #[arg(long, default_value_t = DEFAULT_T_RUNS)]
    pub t_runs: usize,
    /// Corner jitter in pixels; a comma list yields one dataset per level.
    #[arg(long, value_delimiter = ',', default_value = "5")]
    pub noise_sigma: Vec<f64>,
    /// Draw each image's jitter uniformly from `LO:HI` instead.
    #[arg(long, value_parser = parse_range, conflicts_with = "noise_sigma")]
    pub sigma_range: Option<(f64, f64)>,
    #[arg(long, default_value_t = 0.0)]
    pub miss_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub spurious_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dropout ratio recorded as metadata in the predictions.
    #[arg(long)]
    pub dropout_ratio: Option<f64>,
    #[arg(long, default_value_t = 1280.0)]
    pub width: f64,
    #[arg(long, default_value_t = 720.0)]
    pub height: f64,
    #[arg(long, default_value_t = 2)]
    pub min_objects: usize,
    #[arg(long, default_value_t = 6)]
    pub max_objects: usize,
    #[arg(long, default_value_t = 40.0)]
    pub min_box: f64,
    #[arg(long, default_value_t = 160.0)]
    pub max_box: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    /// Output directory; receives `ground_truth/` and the predictions file(s).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[command(flatten)]
    pub cluster: ClusterArgs,
    #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
    pub iou_threshold: f64,
    /// Directory for one report per noise level; only the summary is printed when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
    pub format: ReportFormat,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| format!("expected LO:HI, got {s:?}"))?;
    let lo: f64 = lo
        .trim()
        .parse()
        .map_err(|_| format!("bad number {lo:?}"))?;
    let hi: f64 = hi
        .trim()
        .parse()
        .map_err(|_| format!("bad number {hi:?}"))?;
    if !(lo >= 0.0 && lo <= hi) {
        return Err(format!("need 0 <= LO <= HI, got {lo}:{hi}"));
    }
    Ok((lo, hi))
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    fn insufficient(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INSUFFICIENT,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::TooFewSamples(_) | Error::ConstantSeries => {
                CliError::insufficient(e.to_string())
            }
            other => CliError::input(other.to_string()),
        }
    }
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Quantify(a) => cmd_quantify(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Correlate(a) => cmd_correlate(&a).map(|_| ()),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Sweep(a) => cmd_sweep(&a),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn emit(output: &OutputArgs, doc: &ReportDocument) -> Result<(), CliError> {
    let text = write_report(doc, output.format);
    match &output.out {
        Some(p) => write(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_predictions(path: &Path) -> Result<Vec<PredictionSet>, CliError> {
    let text = read(path)?;
    parse_predictions_collect(&text).map_err(|errs| {
        const SHOWN: usize = 20;
        let mut msg = format!("{}: {} malformed line(s)", path.display(), errs.len());
        for e in errs.iter().take(SHOWN) {
            msg.push_str(&format!("\n  {e}"));
        }
        if errs.len() > SHOWN {
            msg.push_str(&format!("\n  ... {} more", errs.len() - SHOWN));
        }
        CliError::input(msg)
    })
}

fn uniform_t_runs(sets: &[PredictionSet]) -> Option<usize> {
    let first = sets.first()?.t_runs;
    sets.iter().all(|s| s.t_runs == first).then_some(first)
}

fn uniform_dropout(sets: &[PredictionSet]) -> Option<f64> {
    let first = sets.first()?.dropout_ratio;
    if sets.iter().all(|s| s.dropout_ratio == first) {
        first
    } else {
        None
    }
}

fn load_ground_truth(
    dir: &Path,
    sets: &[PredictionSet],
    allow_missing: bool,
) -> Result<HashMap<String, GroundTruthSet>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::input(format!(
            "{}: not a directory",
            dir.display()
        )));
    }
    let mut out = HashMap::new();
    for ps in sets {
        let path = dir.join(format!("{}.txt", ps.image_id));
        if !path.exists() {
            if allow_missing {
                continue;
            }
            return Err(CliError::input(format!(
                "missing ground truth for image {} ({})",
                ps.image_id,
                path.display()
            )));
        }
        let gt = parse_kitti_labels(&read(&path)?, &ps.image_id)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        out.insert(ps.image_id.clone(), gt);
    }
    Ok(out)
}

fn evaluated_results(
    predictions: &Path,
    ground_truth: &Path,
    cluster: &ClusterArgs,
    eval: &EvalArgs,
) -> Result<(Vec<PredictionSet>, PipelineConfig, Vec<ImageResult>), CliError> {
    let cfg = PipelineConfig {
        dbscan: cluster.params()?,
        iou_threshold: eval.iou_threshold,
        class_aware: eval.class_aware,
    };
    crate::detmetrics::check_threshold(cfg.iou_threshold)?;
    let sets = load_predictions(predictions)?;
    let truths = load_ground_truth(ground_truth, &sets, eval.allow_missing)?;
    let results = analyze_batch(&sets, |id| truths.get(id), &cfg)?;
    Ok((sets, cfg, results))
}

pub fn cmd_quantify(a: &QuantifyArgs) -> Result<(), CliError> {
    let cfg = PipelineConfig {
        dbscan: a.cluster.params()?,
        ..Default::default()
    };
    let sets = load_predictions(&a.predictions)?;
    let results = analyze_batch(&sets, |_| None, &cfg)?;
    let mut header = cfg.header(uniform_t_runs(&sets), false);
    header.dropout_ratio = uniform_dropout(&sets);
    let doc = ReportDocument {
        header,
        rows: results.iter().map(ImageResult::row).collect(),
        summary: None,
    };
    emit(&a.output, &doc)
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let (sets, cfg, results) =
        evaluated_results(&a.predictions, &a.ground_truth, &a.cluster, &a.eval)?;
    let mut header = cfg.header(uniform_t_runs(&sets), true);
    header.dropout_ratio = uniform_dropout(&sets);
    let records: Vec<_> = results
        .iter()
        .filter_map(|r| r.evaluation.as_ref().map(|e| e.record.clone()))
        .collect();
    let summary = summarize(&records);
    eprintln!(
        "{} images; per-image mean: avg_iou={} precision={} recall={} f1={}; pooled: tp={} fp={} fn={} precision={} recall={} f1={}",
        summary.n_images,
        summary.per_image_mean.avg_iou,
        summary.per_image_mean.precision,
        summary.per_image_mean.recall,
        summary.per_image_mean.f1,
        summary.pooled.tp,
        summary.pooled.fp,
        summary.pooled.fn_,
        summary.pooled.precision,
        summary.pooled.recall,
        summary.pooled.f1,
    );
    let doc = ReportDocument {
        header,
        rows: results.iter().map(ImageResult::row).collect(),
        summary: Some(summary),
    };
    emit(&a.output, &doc)
}

#[derive(Debug, Serialize)]
struct CorrelationOutput {
    pairing: &'static str,
    #[serde(flatten)]
    result: CorrelationResult,
}

fn usable_rows(rows: &[ReportRow]) -> (Vec<f64>, Vec<f64>) {
    rows.iter()
        .filter(|r| r.defined)
        .filter_map(|r| Some((r.uncertainty?, r.avg_iou?)))
        .unzip()
}

pub fn cmd_correlate(a: &CorrelateArgs) -> Result<CorrelationResult, CliError> {
    let (xs, ys) = match (&a.report, &a.predictions, &a.ground_truth) {
        (Some(report), _, _) => {
            if a.pairing == Pairing::Object {
                return Err(CliError::input(
                    "object pairing needs --predictions and --ground-truth",
                ));
            }
            let text = read(report)?;
            let rows = if report.extension().is_some_and(|e| e == "json") {
                parse_report_json(&text)?.rows
            } else {
                parse_report_csv(&text)?
            };
            usable_rows(&rows)
        }
        (None, Some(p), Some(g)) => {
            let (_, _, results) = evaluated_results(p, g, &a.cluster, &a.eval)?;
            match a.pairing {
                Pairing::Image => image_pairs(&results),
                Pairing::Object => object_pairs(&results),
            }
        }
        _ => {
            return Err(CliError::input(
                "need --report, or --predictions with --ground-truth",
            ))
        }
    };
    if xs.len() < 3 {
        return Err(CliError::insufficient(format!(
            "only {} usable rows; need at least 3",
            xs.len()
        )));
    }
    let result = pearson(&xs, &ys)?;
    println!("r={} p_value={} n={}", result.r, result.p_value, result.n);
    let json = serde_json::to_string_pretty(&CorrelationOutput {
        pairing: match a.pairing {
            Pairing::Image => "image",
            Pairing::Object => "object",
        },
        result,
    })
    .expect("serializable");
    println!("{json}");
    if let Some(out) = &a.out {
        write(out, &format!("{json}\n"))?;
    }
    Ok(result)
}

impl SimArgs {
    fn levels(&self) -> Vec<Option<f64>> {
        if self.sigma_range.is_some() {
            vec![None]
        } else {
            self.noise_sigma.iter().map(|&s| Some(s)).collect()
        }
    }

    fn dataset(&self, sigma: Option<f64>) -> Result<DatasetConfig, CliError> {
        let scene = SceneSpec {
            image_width: self.width,
            image_height: self.height,
            min_objects: self.min_objects,
            max_objects: self.max_objects,
            min_box: self.min_box,
            max_box: self.max_box,
            seed: self.seed,
            ..Default::default()
        };
        scene.validate()?;
        let noise = NoiseModel {
            corner_sigma: sigma.unwrap_or(0.0),
            miss_rate: self.miss_rate,
            spurious_rate: self.spurious_rate,
            seed: derive_seed(self.seed, u64::MAX),
        };
        noise.validate()?;
        if self.t_runs < 1 {
            return Err(CliError::input("--t-runs must be >= 1"));
        }
        if let Some(p) = self.dropout_ratio {
            if !(0.0..=1.0).contains(&p) {
                return Err(CliError::input(format!(
                    "--dropout-ratio {p} outside [0, 1]"
                )));
            }
        }
        Ok(DatasetConfig {
            n_images: self.n_images,
            t_runs: self.t_runs,
            scene,
            noise,
            sigma_range: self.sigma_range,
            dropout_ratio: self.dropout_ratio,
        })
    }

    fn echo(&self, cfg: &DatasetConfig) -> NoiseEcho {
        NoiseEcho {
            corner_sigma: cfg.sigma_range.is_none().then_some(cfg.noise.corner_sigma),
            sigma_range: cfg.sigma_range,
            miss_rate: cfg.noise.miss_rate,
            spurious_rate: cfg.noise.spurious_rate,
            seed: self.seed,
        }
    }
}

fn level_name(prefix: &str, sigma: Option<f64>, multi: bool, ext: &str) -> String {
    match sigma {
        Some(s) if multi => format!("{prefix}_sigma_{s}.{ext}"),
        _ => format!("{prefix}.{ext}"),
    }
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let levels = a.sim.levels();
    let multi = levels.len() > 1;
    let gt_dir = a.out.join("ground_truth");
    fs::create_dir_all(&gt_dir)
        .map_err(|e| CliError::input(format!("{}: {e}", gt_dir.display())))?;
    for (k, sigma) in levels.iter().enumerate() {
        let cfg = a.sim.dataset(*sigma)?;
        let images = simulate_dataset(&cfg)?;
        // scenes do not depend on the noise level
        if k == 0 {
            for img in &images {
                write(
                    &gt_dir.join(format!("{}.txt", img.truths.image_id)),
                    &write_kitti_labels(&img.truths),
                )?;
            }
        }
        let sets: Vec<PredictionSet> = images.into_iter().map(|i| i.predictions).collect();
        let name = level_name("predictions", *sigma, multi, "jsonl");
        write(&a.out.join(name), &write_predictions(&sets))?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct LevelSummary {
    corner_sigma: Option<f64>,
    mean_uncertainty: Option<f64>,
    mean_avg_iou: f64,
    per_image_f1: f64,
    pooled_f1: f64,
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<(), CliError> {
    let levels = a.sim.levels();
    let multi = levels.len() > 1;
    let pipeline = PipelineConfig {
        dbscan: a.cluster.params()?,
        iou_threshold: a.iou_threshold,
        class_aware: false,
    };
    crate::detmetrics::check_threshold(a.iou_threshold)?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
    }
    let mut summaries = Vec::new();
    for sigma in levels {
        let cfg = a.sim.dataset(sigma)?;
        let images = simulate_dataset(&cfg)?;
        let truths: HashMap<&str, &GroundTruthSet> = images
            .iter()
            .map(|i| (i.truths.image_id.as_str(), &i.truths))
            .collect();
        let sets: Vec<PredictionSet> = images.iter().map(|i| i.predictions.clone()).collect();
        let results = analyze_batch(&sets, |id| truths.get(id).copied(), &pipeline)?;
        let records: Vec<_> = results
            .iter()
            .filter_map(|r| r.evaluation.as_ref().map(|e| e.record.clone()))
            .collect();
        let summary = summarize(&records);
        let defined: Vec<f64> = results
            .iter()
            .filter_map(|r| r.report.uncertainty)
            .collect();
        summaries.push(LevelSummary {
            corner_sigma: sigma,
            mean_uncertainty: (!defined.is_empty())
                .then(|| defined.iter().sum::<f64>() / defined.len() as f64),
            mean_avg_iou: summary.per_image_mean.avg_iou,
            per_image_f1: summary.per_image_mean.f1,
            pooled_f1: summary.pooled.f1,
        });
        if let Some(dir) = &a.out {
            let mut header = pipeline.header(Some(cfg.t_runs), true);
            header.dropout_ratio = cfg.dropout_ratio;
            header.noise = Some(a.sim.echo(&cfg));
            let doc = ReportDocument {
                header,
                rows: results.iter().map(ImageResult::row).collect(),
                summary: Some(summary),
            };
            let ext = match a.format {
                ReportFormat::Csv => "csv",
                ReportFormat::Json => "json",
            };
            write(
                &dir.join(level_name("report", sigma, multi, ext)),
                &write_report(&doc, a.format),
            )?;
        }
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&summaries).expect("serializable")
    );
    Ok(())
}
