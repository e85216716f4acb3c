//! Seeded stand-in for a Monte-Carlo dropout detector.
//!
//! Scenes are random, well-separated ground-truth boxes. Each simulated run
//! re-emits every truth box with independent Gaussian jitter on each corner,
//! drops it with probability `miss_rate`, and adds a Poisson number of
//! spurious boxes.
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`), a counter-based
//! stream cipher generator. Each 64-bit seed is expanded with
//! `SeedableRng::seed_from_u64`; independent sub-streams are selected with
//! `set_stream`:
//!
//! | stream | use |
//! |--------|-----|
//! | 0 | scene layout, or per-truth miss draw + four corner normals |
//! | 1 | spurious boxes |
//! | 2 | per-image sigma draw in mixed-noise datasets |
//!
//! Per-truth draws are made whether or not the truth is emitted, so two
//! noise models that differ only in `corner_sigma` see the same standard
//! normals (common random numbers).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::DEFAULT_EPSILON;
use crate::detmetrics::GroundTruthSet;
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::surface::{Detection, PredictionSet};

const STREAM_MAIN: u64 = 0;
const STREAM_SPURIOUS: u64 = 1;
const STREAM_SIGMA: u64 = 2;

const OBJECT_ATTEMPTS: usize = 200;
const SCENE_ATTEMPTS: usize = 50;

pub const DEFAULT_LABEL: &str = "Car";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub image_width: f64,
    pub image_height: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Side lengths of generated boxes are drawn from `[min_box, max_box]`.
    pub min_box: f64,
    pub max_box: f64,
    /// Pairwise center distance every scene must exceed.
    pub min_separation: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            image_width: 1280.0,
            image_height: 720.0,
            min_objects: 2,
            max_objects: 6,
            min_box: 40.0,
            max_box: 160.0,
            min_separation: 2.0 * DEFAULT_EPSILON,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.image_width.is_finite() && self.image_height.is_finite())
            || self.image_width <= 0.0
            || self.image_height <= 0.0
        {
            return bad(format!(
                "image size must be positive, got {}x{}",
                self.image_width, self.image_height
            ));
        }
        if self.min_objects > self.max_objects {
            return bad(format!(
                "empty object range [{}, {}]",
                self.min_objects, self.max_objects
            ));
        }
        if !(self.min_box >= 1.0 && self.min_box <= self.max_box) {
            return bad(format!(
                "invalid box size range [{}, {}]",
                self.min_box, self.max_box
            ));
        }
        if self.max_box > self.image_width || self.max_box > self.image_height {
            return bad(format!(
                "box size {} does not fit a {}x{} image",
                self.max_box, self.image_width, self.image_height
            ));
        }
        if self.min_separation.is_nan() || self.min_separation < 0.0 {
            return bad(format!("negative separation {}", self.min_separation));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Standard deviation of the Gaussian jitter on each corner coordinate, in pixels.
    pub corner_sigma: f64,
    /// Probability that a truth box is omitted from a run.
    pub miss_rate: f64,
    /// Expected number of false boxes per run.
    pub spurious_rate: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            corner_sigma: 0.0,
            miss_rate: 0.0,
            spurious_rate: 0.0,
            seed: 0,
        }
    }
}

impl NoiseModel {
    /// Surrogate noise for a dropout ratio `p`: jitter of `40 p` pixels and
    /// a miss rate of `0.4 p`, so the usual 0.1..0.5 sweep spans 4..20 px.
    pub fn from_dropout_ratio(p: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!(
                "dropout ratio {p} outside [0, 1]"
            )));
        }
        Ok(Self {
            corner_sigma: 40.0 * p,
            miss_rate: 0.4 * p,
            spurious_rate: 0.0,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.corner_sigma.is_finite() && self.corner_sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "corner_sigma {} must be >= 0",
                self.corner_sigma
            )));
        }
        if !(0.0..1.0).contains(&self.miss_rate) {
            return Err(Error::InvalidParameter(format!(
                "miss_rate {} outside [0, 1)",
                self.miss_rate
            )));
        }
        if !(self.spurious_rate.is_finite() && self.spurious_rate >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "spurious_rate {} must be >= 0",
                self.spurious_rate
            )));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer over `base + index * golden`, for partitioning one
/// base seed into per-image seeds.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn random_box(rng: &mut ChaCha8Rng, spec: &SceneSpec) -> BoundingBox {
    let w = uniform(rng, spec.min_box, spec.max_box);
    let h = uniform(rng, spec.min_box, spec.max_box);
    let x1 = uniform(rng, 0.0, spec.image_width - w);
    let y1 = uniform(rng, 0.0, spec.image_height - h);
    BoundingBox {
        x1,
        y1,
        x2: x1 + w,
        y2: y1 + h,
    }
}

/// Random ground truth with pairwise center distances above
/// `spec.min_separation`.
pub fn generate_scene(spec: &SceneSpec, image_id: &str) -> Result<GroundTruthSet> {
    spec.validate()?;
    let mut rng = rng(spec.seed, STREAM_MAIN);
    let n = if spec.max_objects > spec.min_objects {
        rng.random_range(spec.min_objects..=spec.max_objects)
    } else {
        spec.min_objects
    };
    let sep_sq = spec.min_separation * spec.min_separation;

    'scene: for _ in 0..SCENE_ATTEMPTS {
        let mut boxes: Vec<BoundingBox> = Vec::with_capacity(n);
        while boxes.len() < n {
            let placed = (0..OBJECT_ATTEMPTS).find_map(|_| {
                let candidate = random_box(&mut rng, spec);
                let c = candidate.center();
                boxes
                    .iter()
                    .all(|b| b.center().distance_squared(&c) > sep_sq)
                    .then_some(candidate)
            });
            match placed {
                Some(b) => boxes.push(b),
                None => continue 'scene,
            }
        }
        return Ok(GroundTruthSet {
            image_id: image_id.to_string(),
            class_labels: Some(vec![DEFAULT_LABEL.to_string(); boxes.len()]),
            boxes,
        });
    }
    Err(Error::InfeasibleScene {
        objects: n,
        separation: spec.min_separation,
        attempts: SCENE_ATTEMPTS,
    })
}

/// Clamp one axis to `[0, limit]` keeping at least a one-pixel extent.
fn clamp_axis(lo: f64, hi: f64, limit: f64) -> (f64, f64) {
    let lo = lo.clamp(0.0, limit - 1.0);
    let mut hi = hi.clamp(0.0, limit);
    if hi - lo < 1.0 {
        hi = lo + 1.0;
    }
    (lo, hi)
}

fn clamp_box(x1: f64, y1: f64, x2: f64, y2: f64, spec: &SceneSpec) -> BoundingBox {
    let (x1, x2) = clamp_axis(x1, x2, spec.image_width);
    let (y1, y2) = clamp_axis(y1, y2, spec.image_height);
    BoundingBox { x1, y1, x2, y2 }
}

/// Simulate `t_runs` noisy detector passes over one scene.
pub fn simulate_runs(
    truths: &GroundTruthSet,
    spec: &SceneSpec,
    noise: &NoiseModel,
    t_runs: usize,
) -> Result<PredictionSet> {
    spec.validate()?;
    noise.validate()?;
    if t_runs < 1 {
        return Err(Error::InvalidParameter("t_runs must be >= 1".into()));
    }
    let mut main = rng(noise.seed, STREAM_MAIN);
    let mut spurious = rng(noise.seed, STREAM_SPURIOUS);
    let poisson = if noise.spurious_rate > 0.0 {
        Some(
            Poisson::new(noise.spurious_rate)
                .map_err(|e| Error::InvalidParameter(e.to_string()))?,
        )
    } else {
        None
    };

    let mut detections = Vec::new();
    for run in 0..t_runs {
        for (i, b) in truths.boxes.iter().enumerate() {
            let keep = main.random::<f64>() >= noise.miss_rate;
            let z: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut main));
            if !keep {
                continue;
            }
            let s = noise.corner_sigma;
            let bbox = clamp_box(
                b.x1 + s * z[0],
                b.y1 + s * z[1],
                b.x2 + s * z[2],
                b.y2 + s * z[3],
                spec,
            );
            detections.push(Detection {
                bbox,
                run,
                confidence: None,
                label: truths.label(i).map(str::to_string),
            });
        }
        if let Some(p) = &poisson {
            let k: f64 = p.sample(&mut spurious);
            for _ in 0..k as usize {
                detections.push(Detection::new(random_box(&mut spurious, spec), run));
            }
        }
    }

    Ok(PredictionSet {
        image_id: truths.image_id.clone(),
        t_runs,
        dropout_ratio: None,
        detections,
    })
}

/// A batch of simulated images sharing one scene and noise configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_images: usize,
    pub t_runs: usize,
    /// Base seeds live in `scene.seed` and `noise.seed`.
    pub scene: SceneSpec,
    pub noise: NoiseModel,
    /// When set, each image draws its own `corner_sigma` uniformly from this range.
    pub sigma_range: Option<(f64, f64)>,
    pub dropout_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedImage {
    pub truths: GroundTruthSet,
    pub predictions: PredictionSet,
    pub corner_sigma: f64,
}

pub fn image_id(index: usize) -> String {
    format!("{index:06}")
}

/// Simulate every image of a dataset. Image `i` uses seeds derived from the
/// base seeds and `i`, so scenes and noise draws are shared between configs
/// that differ only in noise magnitudes.
pub fn simulate_dataset(cfg: &DatasetConfig) -> Result<Vec<SimulatedImage>> {
    if let Some((lo, hi)) = cfg.sigma_range {
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
            return Err(Error::InvalidParameter(format!(
                "invalid sigma range [{lo}, {hi}]"
            )));
        }
    }
    (0..cfg.n_images)
        .into_par_iter()
        .map(|i| {
            let id = image_id(i);
            let scene = SceneSpec {
                seed: derive_seed(cfg.scene.seed, i as u64),
                ..cfg.scene.clone()
            };
            let noise_seed = derive_seed(cfg.noise.seed, i as u64);
            let corner_sigma = match cfg.sigma_range {
                Some((lo, hi)) => uniform(&mut rng(noise_seed, STREAM_SIGMA), lo, hi),
                None => cfg.noise.corner_sigma,
            };
            let noise = NoiseModel {
                corner_sigma,
                seed: noise_seed,
                ..cfg.noise
            };
            let truths = generate_scene(&scene, &id)?;
            let mut predictions = simulate_runs(&truths, &scene, &noise, cfg.t_runs)?;
            predictions.dropout_ratio = cfg.dropout_ratio;
            Ok(SimulatedImage {
                truths,
                predictions,
                corner_sigma,
            })
        })
        .collect()
}
