//! Synthetic multi-dataset suites.
//!
//! Every dataset shares one latent quality (the rank of an image's
//! degradation level) but reports it through its own monotone warp plus
//! rating noise, and renders its images under its own capture environment
//! (texture scale, brightness, contrast). Two procedural texture families
//! stand in for photographic and generated content.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{build_relativity_pairs, Preference, TaskIdentifier};
use crate::indicators::{degrade, extract_features, Degradation, FeatureVector, ImageBuffer, FEATURE_LEN};
use crate::ingest::{normalize_scores, split_random, AnnotatedImage, DatasetKind, DatasetManifest, Metric, ScoreRange, Split};
use crate::ranker::{CurriculumPlan, StageId, StageSpec, TaskPools, TrainItem, DEFAULT_HIDDEN};
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid warp: {0}")]
    InvalidWarp(String),
    #[error("invalid latent spec: {0}")]
    InvalidLatent(String),
    #[error("need at least 2 datasets, got {0}")]
    TooFewDatasets(usize),
    #[error("anchor index {index} out of range for {count} datasets")]
    AnchorOutOfRange { index: usize, count: usize },
    #[error("{0}")]
    Pipeline(String),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// Procedural texture family. Value noise stands in for photographs,
/// sinusoidal interference for generated images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TextureFamily {
    ValueNoise,
    Sinusoidal,
}

impl TextureFamily {
    pub fn photographic(self) -> bool {
        self == TextureFamily::ValueNoise
    }
}

/// Capture conditions shared by one dataset's images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    /// Dominant feature size in pixels.
    pub scale: f64,
    /// Mean luma on `[0, 1]`.
    pub brightness: f64,
    /// Luma standard deviation on `[0, 1]`.
    pub contrast: f64,
    /// Per-image variation; 0 renders every image under identical settings.
    pub jitter: f64,
    /// Multiplier on the grid's noise sigma.
    pub noise_gain: f64,
    /// Multiplier on the grid's blur extent (`width - 1`).
    pub blur_gain: f64,
    /// Luma shift at full severity, on `[0, 1]`; negative darkens.
    pub exposure_shift: f64,
    /// Fraction of contrast lost at full severity.
    pub haze: f64,
}

impl Default for Environment {
    fn default() -> Self {
        Self {
            scale: 8.0,
            brightness: 0.5,
            contrast: 0.16,
            jitter: 0.0,
            noise_gain: 1.0,
            blur_gain: 1.0,
            exposure_shift: 0.0,
            haze: 0.0,
        }
    }
}

impl Environment {
    /// Noise sigma and odd blur width this environment renders `level` with.
    pub fn render(&self, level: DegradationLevel) -> (f64, usize) {
        let extent = (level.blur_width - 1) as f64 * self.blur_gain;
        (level.noise_sigma * self.noise_gain, 2 * (extent / 2.0).round() as usize + 1)
    }

    /// Applies the exposure shift and haze for `severity` in `[0, 1]`.
    pub fn tone(&self, img: &ImageBuffer, severity: f64) -> ImageBuffer {
        if self.exposure_shift == 0.0 && self.haze == 0.0 {
            return img.clone();
        }
        let px = img.pixels();
        let mean = px.iter().map(|&v| f64::from(v)).sum::<f64>() / px.len() as f64;
        let keep = 1.0 - self.haze * severity;
        let shift = self.exposure_shift * severity * 255.0;
        let out = px
            .iter()
            .map(|&v| (mean + (f64::from(v) - mean) * keep + shift).round().clamp(0.0, 255.0) as u8)
            .collect();
        ImageBuffer::from_rgb(img.width(), img.height(), out).expect("same dimensions")
    }
}

/// Environment used by dataset `index` of a default suite.
pub fn environment_preset(index: usize) -> Environment {
    let (scale, brightness, contrast, noise_gain, blur_gain, exposure_shift, haze) = match index % 4 {
        0 => (8.0, 0.50, 0.16, 1.0, 1.0, 0.0, 0.0),
        1 => (4.5, 0.40, 0.22, 1.5, 0.3, 0.25, 0.0),
        2 => (13.0, 0.60, 0.11, 0.3, 1.6, -0.4, 0.0),
        _ => (6.0, 0.45, 0.19, 0.6, 0.6, 0.0, 0.6),
    };
    Environment {
        scale,
        brightness,
        contrast,
        jitter: 1.0,
        noise_gain,
        blur_gain,
        exposure_shift,
        haze,
    }
}

/// Smooth lattice noise sampled at `size` x `size`, one lattice per octave.
fn value_noise(size: usize, scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = vec![0.0; size * size];
    let octaves = [(1.0, 1.0), (0.5, 0.5), (0.25, 0.25)];
    for (rel, amp) in octaves {
        let s = (scale * rel).max(1.0);
        let n = (size as f64 / s).ceil() as usize + 2;
        let lattice: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        for y in 0..size {
            let fy = y as f64 / s;
            let (iy, ty) = (fy.floor() as usize, smooth(fy.fract()));
            for x in 0..size {
                let fx = x as f64 / s;
                let (ix, tx) = (fx.floor() as usize, smooth(fx.fract()));
                let v00 = lattice[iy * n + ix];
                let v10 = lattice[iy * n + ix + 1];
                let v01 = lattice[(iy + 1) * n + ix];
                let v11 = lattice[(iy + 1) * n + ix + 1];
                let top = v00 + (v10 - v00) * tx;
                let bottom = v01 + (v11 - v01) * tx;
                out[y * size + x] += amp * (top + (bottom - top) * ty);
            }
        }
    }
    out
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Sum of three plane waves with random orientation, wavelength and phase.
fn interference(size: usize, scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let k = std::f64::consts::TAU / (scale * rng.random_range(1.5..3.0));
            (k * theta.cos(), k * theta.sin(), rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            out[y * size + x] = waves.iter().map(|(kx, ky, ph)| (kx * x as f64 + ky * y as f64 + ph).sin()).sum();
        }
    }
    out
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mu = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    v.iter_mut().for_each(|x| *x = (*x - mu) / sd);
}

fn to_byte(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Seeded square texture of side `size` (at least 3).
pub fn texture(family: TextureFamily, size: usize, env: &Environment, seed: u64) -> ImageBuffer {
    let size = size.max(3);
    let mut rng = seed::rng(seed, &[0x5445_5854]);
    let j = env.jitter;
    let brightness = env.brightness + j * rng.random_range(-0.08..0.08);
    let contrast = env.contrast * (1.0 + j * rng.random_range(-0.3..0.3));
    let scale = env.scale * (1.0 + j * rng.random_range(-0.2..0.2));

    let mut luma = match family {
        TextureFamily::ValueNoise => value_noise(size, scale, &mut rng),
        TextureFamily::Sinusoidal => interference(size, scale, &mut rng),
    };
    standardize(&mut luma);
    let mut px = Vec::with_capacity(size * size * 3);
    match family {
        TextureFamily::ValueNoise => {
            // Muted, slowly varying tint.
            let mut tint = value_noise(size, scale * 4.0, &mut rng);
            standardize(&mut tint);
            let warmth = rng.random_range(-0.02..0.02);
            for (l, t) in luma.iter().zip(&tint) {
                let base = brightness + contrast * l;
                let c = 0.02 * t + warmth;
                px.extend([to_byte(base + c), to_byte(base - 0.3 * c), to_byte(base - c)]);
            }
        }
        TextureFamily::Sinusoidal => {
            // Saturated hue cycling with the pattern phase.
            let mut hue = interference(size, scale * 2.0, &mut rng);
            standardize(&mut hue);
            let sat = rng.random_range(0.15..0.22);
            let third = std::f64::consts::TAU / 3.0;
            for (l, h) in luma.iter().zip(&hue) {
                let base = brightness + contrast * l;
                let ph = 1.5 * h;
                px.extend([
                    to_byte(base + sat * ph.sin()),
                    to_byte(base + sat * (ph + third).sin()),
                    to_byte(base + sat * (ph + 2.0 * third).sin()),
                ]);
            }
        }
    }
    ImageBuffer::from_rgb(size, size, px).expect("buffer sized from dimensions")
}

/// One degradation level: Gaussian noise sigma (grey levels) after a box
/// blur of odd width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationLevel {
    pub noise_sigma: f64,
    pub blur_width: usize,
}

/// Shape of every dataset in a suite. The grid is ordered from mildest to
/// most severe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSpec {
    pub n_images: usize,
    pub image_size: usize,
    pub degradation_grid: Vec<DegradationLevel>,
    pub seed: u64,
}

pub fn default_grid() -> Vec<DegradationLevel> {
    [(0.0, 1), (2.0, 1), (4.0, 3), (6.0, 3), (8.0, 5), (10.0, 5), (12.0, 7), (15.0, 7), (18.0, 9), (22.0, 9)]
        .into_iter()
        .map(|(noise_sigma, blur_width)| DegradationLevel { noise_sigma, blur_width })
        .collect()
}

impl Default for LatentSpec {
    fn default() -> Self {
        Self {
            n_images: 200,
            image_size: 64,
            degradation_grid: default_grid(),
            seed: 0,
        }
    }
}

impl LatentSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::InvalidLatent(m));
        if self.n_images < 20 {
            return bad(format!("n_images must be at least 20, got {}", self.n_images));
        }
        if self.image_size < 3 {
            return bad(format!("image_size must be at least 3, got {}", self.image_size));
        }
        if self.degradation_grid.is_empty() {
            return bad("degradation grid is empty".into());
        }
        for (i, l) in self.degradation_grid.iter().enumerate() {
            if !(l.noise_sigma.is_finite() && l.noise_sigma >= 0.0) || l.blur_width % 2 == 0 {
                return bad(format!("level {i} needs sigma >= 0 and an odd blur width"));
            }
            if self.degradation_grid[..i].contains(l) {
                return bad(format!("level {i} repeats an earlier level"));
            }
        }
        Ok(())
    }

    /// Latent quality of grid level `k`: 1 for the mildest, 0 for the most
    /// severe.
    pub fn latent_of_level(&self, k: usize) -> f64 {
        let n = self.degradation_grid.len();
        if n == 1 {
            1.0
        } else {
            1.0 - k as f64 / (n - 1) as f64
        }
    }
}

/// Strictly increasing map of `[0, 1]` latent quality onto `[0, 1]`-ish
/// annotation units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Warp {
    Identity,
    /// `slope * x + intercept / 100`; the intercept is in rating units.
    Affine { slope: f64, intercept: f64 },
    Power { exponent: f64 },
    /// Logistic curve centred at 0.5, rescaled to pass through (0,0) and (1,1).
    Logistic { steepness: f64 },
}

impl Warp {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Warp::Identity => true,
            Warp::Affine { slope, intercept } => slope > 0.0 && slope.is_finite() && intercept.is_finite(),
            Warp::Power { exponent } => exponent > 0.0 && exponent.is_finite(),
            Warp::Logistic { steepness } => steepness > 0.0 && steepness.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(SynthError::InvalidWarp(format!("{self} is not strictly increasing")))
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Warp::Identity => x,
            Warp::Affine { slope, intercept } => slope * x + intercept / 100.0,
            Warp::Power { exponent } => x.powf(exponent),
            Warp::Logistic { steepness } => {
                let s = |t: f64| 1.0 / (1.0 + (-steepness * (t - 0.5)).exp());
                (s(x) - s(0.0)) / (s(1.0) - s(0.0))
            }
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Warp::Identity => "identity",
            Warp::Affine { .. } => "affine",
            Warp::Power { .. } => "power",
            Warp::Logistic { .. } => "logistic",
        }
    }
}

impl fmt::Display for Warp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warp::Identity => write!(f, "identity"),
            Warp::Affine { slope, intercept } => write!(f, "affine:{slope}:{intercept}"),
            Warp::Power { exponent } => write!(f, "power:{exponent}"),
            Warp::Logistic { steepness } => write!(f, "logistic:{steepness}"),
        }
    }
}

impl FromStr for Warp {
    type Err = SynthError;

    /// `identity`, `affine:<slope>:<intercept>`, `power:<exponent>`, `logistic:<steepness>`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| t.parse::<f64>().map_err(|_| SynthError::InvalidWarp(format!("bad number `{t}` in `{s}`")));
        let w = match parts.as_slice() {
            ["identity"] => Warp::Identity,
            ["affine", a, b] => Warp::Affine {
                slope: num(a)?,
                intercept: num(b)?,
            },
            ["power", e] => Warp::Power { exponent: num(e)? },
            ["logistic", k] => Warp::Logistic { steepness: num(k)? },
            _ => return Err(SynthError::InvalidWarp(format!("unrecognised warp `{s}`"))),
        };
        w.validate()?;
        Ok(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarpSpec {
    pub warp: Warp,
    /// Rating noise standard deviation, in rating units.
    pub noise_sd: f64,
}

impl WarpSpec {
    pub fn validate(&self) -> Result<()> {
        self.warp.validate()?;
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(SynthError::InvalidWarp(format!("noise_sd {} must be >= 0", self.noise_sd)));
        }
        Ok(())
    }
}

pub const DEFAULT_NOISE_SD: f64 = 3.0;

/// identity, affine(0.6, 20), power(2), logistic(8), each with noise sd 3.
pub fn default_warps() -> Vec<WarpSpec> {
    [
        Warp::Identity,
        Warp::Affine {
            slope: 0.6,
            intercept: 20.0,
        },
        Warp::Power { exponent: 2.0 },
        Warp::Logistic { steepness: 8.0 },
    ]
    .into_iter()
    .map(|warp| WarpSpec {
        warp,
        noise_sd: DEFAULT_NOISE_SD,
    })
    .collect()
}

/// Per-dataset generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub warp: WarpSpec,
    pub environment: Environment,
}

/// Datasets named `syn<i>_<warp>` with the preset environments.
pub fn default_dataset_specs(warps: &[WarpSpec]) -> Vec<DatasetSpec> {
    warps
        .iter()
        .enumerate()
        .map(|(i, w)| DatasetSpec {
            name: format!("syn{i}_{}", w.warp.kind_name()),
            warp: *w,
            environment: environment_preset(i),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub spec: DatasetSpec,
    /// Raw annotations on `[0, 100]`, unnormalized and unsplit.
    pub manifest: DatasetManifest,
    /// Hidden ground truth, for evaluation only.
    pub latent_quality: BTreeMap<String, f64>,
    pub images: BTreeMap<String, ImageBuffer>,
}

const FAMILY_STREAM: u64 = 0x4641_4D49;
const IMAGE_STREAM: u64 = 0x494D_4147;
const DEGRADE_STREAM: u64 = 0x4445_4752;
const RATING_STREAM: u64 = 0x5241_5445;

/// Default-environment suite with one dataset per warp.
pub fn generate_synthetic_suite(latent: &LatentSpec, warps: &[WarpSpec], seed: u64) -> Result<Vec<SyntheticDataset>> {
    generate_suite_with(latent, &default_dataset_specs(warps), seed)
}

pub fn generate_suite_with(latent: &LatentSpec, datasets: &[DatasetSpec], seed: u64) -> Result<Vec<SyntheticDataset>> {
    latent.validate()?;
    if datasets.len() < 2 {
        return Err(SynthError::TooFewDatasets(datasets.len()));
    }
    for d in datasets {
        d.warp.validate()?;
    }
    let base = seed::derive(latent.seed, &[seed]);
    datasets
        .iter()
        .enumerate()
        .map(|(di, spec)| generate_dataset(latent, spec, seed::derive(base, &[di as u64])))
        .collect()
}

struct Item {
    id: String,
    image: ImageBuffer,
    latent: f64,
    annotation: f64,
    photographic: bool,
}

fn generate_dataset(latent: &LatentSpec, spec: &DatasetSpec, base: u64) -> Result<SyntheticDataset> {
    let levels = latent.degradation_grid.len();
    let noise = Normal::new(0.0, spec.warp.noise_sd).map_err(|e| SynthError::InvalidWarp(e.to_string()))?;
    let items: Vec<Item> = (0..latent.n_images)
        .into_par_iter()
        .map(|i| {
            let item_seed = seed::derive(base, &[i as u64]);
            let family = if seed::rng(item_seed, &[FAMILY_STREAM]).random_bool(0.5) {
                TextureFamily::ValueNoise
            } else {
                TextureFamily::Sinusoidal
            };
            let k = i % levels;
            let level = latent.degradation_grid[k];
            let clean = texture(family, latent.image_size, &spec.environment, seed::derive(item_seed, &[IMAGE_STREAM]));
            let (sigma, width) = spec.environment.render(level);
            let toned = spec.environment.tone(&clean, 1.0 - latent.latent_of_level(k));
            let blurred = degrade(&toned, Degradation::BoxBlur, width as f64, 0)
                .map_err(|e| SynthError::Pipeline(e.to_string()))?;
            let image = degrade(&blurred, Degradation::GaussianNoise, sigma, seed::derive(item_seed, &[DEGRADE_STREAM]))
                .map_err(|e| SynthError::Pipeline(e.to_string()))?;
            let lq = latent.latent_of_level(k);
            let mut annotation = spec.warp.warp.apply(lq) * 100.0;
            if spec.warp.noise_sd > 0.0 {
                annotation += noise.sample(&mut seed::rng(item_seed, &[RATING_STREAM]));
            }
            Ok(Item {
                id: format!("{}_{i:04}", spec.name),
                image,
                latent: lq,
                annotation: annotation.clamp(0.0, 100.0),
                photographic: family.photographic(),
            })
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::with_capacity(items.len());
    let mut latent_quality = BTreeMap::new();
    let mut images = BTreeMap::new();
    for it in items {
        let mut r = AnnotatedImage::new(it.id.clone(), spec.name.clone(), image_path(&spec.name, &it.id), it.annotation);
        r.authenticity = Some(it.photographic);
        records.push(r);
        latent_quality.insert(it.id.clone(), it.latent);
        images.insert(it.id, it.image);
    }
    let manifest = DatasetManifest {
        name: spec.name.clone(),
        kind: DatasetKind::PhotographicArtificial,
        score_range: ScoreRange::new(0.0, 100.0).expect("valid range"),
        attribute_ranges: BTreeMap::new(),
        records,
    };
    manifest.validate().map_err(|e| SynthError::Pipeline(e.to_string()))?;
    Ok(SyntheticDataset {
        spec: spec.clone(),
        manifest,
        latent_quality,
        images,
    })
}

/// Manifest-relative path of a generated image.
pub fn image_path(dataset: &str, id: &str) -> String {
    format!("images/{dataset}/{id}.ppm")
}

/// `id<TAB>latent` lines for the evaluation harness.
pub fn write_latent_sidecar(d: &SyntheticDataset) -> String {
    let mut s = String::from("id\tlatent\n");
    for (id, v) in &d.latent_quality {
        s.push_str(&format!("{id}\t{v}\n"));
    }
    s
}

/// The four stage-1/stage-2 combinations compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    MultiFuncJoint,
    MultiFuncSingle,
    RelatJoint,
    RelatSingle,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::MultiFuncJoint,
        Strategy::MultiFuncSingle,
        Strategy::RelatJoint,
        Strategy::RelatSingle,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::MultiFuncJoint => "MultiFunc_joint",
            Strategy::MultiFuncSingle => "MultiFunc_single",
            Strategy::RelatJoint => "Relat. + MultiFunc_joint",
            Strategy::RelatSingle => "Relat. + MultiFunc_single",
        }
    }

    /// File-name form of the label.
    pub fn slug(self) -> &'static str {
        match self {
            Strategy::MultiFuncJoint => "multifunc_joint",
            Strategy::MultiFuncSingle => "multifunc_single",
            Strategy::RelatJoint => "relat_multifunc_joint",
            Strategy::RelatSingle => "relat_multifunc_single",
        }
    }

    pub fn uses_relativity(self) -> bool {
        matches!(self, Strategy::RelatJoint | Strategy::RelatSingle)
    }

    pub fn joint(self) -> bool {
        matches!(self, Strategy::MultiFuncJoint | Strategy::RelatJoint)
    }
}

/// Step count, batch size and learning rate of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSettings {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub hidden_size: usize,
    pub relativity: StageSettings,
    pub multifunctional: StageSettings,
    /// `None` skips refinement.
    pub refinement: Option<StageSettings>,
    pub train_fraction: f64,
    /// Relativity pairs per train record.
    pub pairs_per_record: usize,
    /// Also build relativity pairs on every attribute a manifest carries.
    pub attribute_pairs: bool,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            hidden_size: DEFAULT_HIDDEN,
            relativity: StageSettings {
                steps: 2000,
                batch_size: 32,
                learning_rate: 0.05,
            },
            multifunctional: StageSettings {
                steps: 1000,
                batch_size: 32,
                learning_rate: 0.02,
            },
            refinement: Some(StageSettings {
                steps: 200,
                batch_size: 32,
                learning_rate: 0.002,
            }),
            train_fraction: 0.8,
            pairs_per_record: 10,
            attribute_pairs: false,
            seed: 0,
        }
    }
}

/// Held-out records of one dataset with precomputed features.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    pub dataset_id: String,
    pub ids: Vec<String>,
    pub features: Vec<FeatureVector>,
    pub mos: Vec<f64>,
    pub photographic: Vec<bool>,
    /// Index pairs `(i, j)` with `i < j` and distinct MOS, labelled by MOS.
    pub pairs: Vec<(usize, usize, Preference)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyPlan {
    pub strategy: Strategy,
    pub plan: CurriculumPlan,
}

/// One cell of the source-to-target matrix: the plan trains on `source`
/// and is evaluated on `target`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferCell {
    pub source: usize,
    pub target: usize,
    pub plan: CurriculumPlan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentBundle {
    pub datasets: Vec<String>,
    pub anchor: String,
    pub config: BenchmarkConfig,
    pub strategies: Vec<StrategyPlan>,
    /// Row-major `[source][target]`.
    pub transfer: Vec<TransferCell>,
    pub pools: TaskPools,
    pub tests: Vec<TestSet>,
}

const PLAN_STREAM: u64 = 0x504C_414E;

fn stage(id: StageId, tasks: &[TaskIdentifier], datasets: Vec<String>, s: StageSettings, seed: u64) -> StageSpec {
    StageSpec {
        stage_id: id,
        tasks: tasks.iter().copied().collect(),
        dataset_ids: datasets,
        steps: s.steps,
        batch_size: s.batch_size,
        learning_rate: s.learning_rate,
        seed: seed::derive(seed, &[PLAN_STREAM, id as u64]),
    }
}

const STAGE2_TASKS: [TaskIdentifier; 2] = [TaskIdentifier::IqaQuant, TaskIdentifier::Authenticity];

/// Plan with an optional relativity stage over `all`, then absolute and
/// authenticity training (and refinement) over `calib`.
pub fn build_plan(config: &BenchmarkConfig, all: &[String], calib: &[String], anchor: &str, relativity: bool) -> CurriculumPlan {
    let mut stages = Vec::new();
    if relativity {
        stages.push(stage(StageId::Relativity, &[TaskIdentifier::Relativity], all.to_vec(), config.relativity, config.seed));
    }
    stages.push(stage(StageId::Multifunctional, &STAGE2_TASKS, calib.to_vec(), config.multifunctional, config.seed));
    if let Some(r) = config.refinement {
        stages.push(stage(StageId::Refinement, &STAGE2_TASKS, calib.to_vec(), r, config.seed));
    }
    CurriculumPlan::new(stages, anchor).expect("benchmark plans are valid by construction")
}

/// Default-config bundle.
pub fn make_inconformity_benchmark(suite: &[SyntheticDataset], anchor_index: usize) -> Result<ExperimentBundle> {
    make_inconformity_benchmark_with(suite, anchor_index, &BenchmarkConfig::default())
}

/// Extracts features from the suite's images and builds the bundle.
pub fn make_inconformity_benchmark_with(suite: &[SyntheticDataset], anchor_index: usize, config: &BenchmarkConfig) -> Result<ExperimentBundle> {
    let features: Vec<BTreeMap<String, FeatureVector>> = suite.iter().map(suite_features).collect();
    let sources: Vec<BenchmarkSource> = suite
        .iter()
        .zip(&features)
        .map(|(d, f)| BenchmarkSource {
            manifest: &d.manifest,
            features: f,
        })
        .collect();
    make_benchmark(&sources, anchor_index, config)
}

/// Features of every image in a synthetic dataset, keyed by id.
pub fn suite_features(d: &SyntheticDataset) -> BTreeMap<String, FeatureVector> {
    let ids: Vec<&String> = d.images.keys().collect();
    let feats: Vec<FeatureVector> = ids.par_iter().map(|id| extract_features(&d.images[*id])).collect();
    ids.into_iter().cloned().zip(feats).collect()
}

/// One dataset as the benchmark builder sees it: a manifest (raw or already
/// normalized, split or not) and the features of its images.
#[derive(Debug, Clone, Copy)]
pub struct BenchmarkSource<'a> {
    pub manifest: &'a DatasetManifest,
    pub features: &'a BTreeMap<String, FeatureVector>,
}

/// Seed of the random split of the `index`-th dataset in a bundle.
pub fn split_seed(seed: u64, index: usize) -> u64 {
    seed::derive(seed, &[0x5350_4C54, index as u64])
}

/// Normalizes unnormalized manifests and splits unsplit ones; existing
/// normalization and splits are kept.
pub fn prepare_manifest(m: &DatasetManifest, train_fraction: f64, seed: u64) -> Result<DatasetManifest> {
    let pipe = |e: &dyn fmt::Display| SynthError::Pipeline(e.to_string());
    let m = if m.is_normalized() { m.clone() } else { normalize_scores(m).map_err(|e| pipe(&e))? };
    if m.records.iter().any(|r| r.split != Split::Unassigned) {
        return Ok(m);
    }
    split_random(&m, train_fraction, seed).map_err(|e| pipe(&e))
}

/// Splits every dataset, builds the task pools and test sets, and emits the
/// four strategy plans plus the source-to-target matrix.
pub fn make_benchmark(sources: &[BenchmarkSource], anchor_index: usize, config: &BenchmarkConfig) -> Result<ExperimentBundle> {
    if sources.len() < 2 {
        return Err(SynthError::TooFewDatasets(sources.len()));
    }
    if anchor_index >= sources.len() {
        return Err(SynthError::AnchorOutOfRange {
            index: anchor_index,
            count: sources.len(),
        });
    }
    let pipe = |e: &dyn fmt::Display| SynthError::Pipeline(e.to_string());
    let names: Vec<String> = sources.iter().map(|d| d.manifest.name.clone()).collect();
    let anchor = names[anchor_index].clone();
    let mut pools = TaskPools::new();
    let mut tests = Vec::new();

    for (di, d) in sources.iter().enumerate() {
        let m = prepare_manifest(d.manifest, config.train_fraction, split_seed(config.seed, di))?;
        let feature_of = |id: &str| {
            d.features
                .get(id)
                .copied()
                .ok_or_else(|| SynthError::Pipeline(format!("no features for `{id}` in dataset `{}`", m.name)))
        };

        let n_train = m.train_records().count();
        let mut metrics = vec![Metric::Mos];
        if config.attribute_pairs {
            let mut attrs: Vec<_> = m.records.iter().flat_map(|r| r.attributes.keys().copied()).collect();
            attrs.sort();
            attrs.dedup();
            metrics.extend(attrs.into_iter().map(Metric::Attr));
        }
        for metric in metrics {
            let pair_seed = seed::derive(config.seed, &[0x5041_4952, di as u64]);
            let pairs = build_relativity_pairs(&m, n_train * config.pairs_per_record, metric, pair_seed).map_err(|e| pipe(&e))?;
            for p in pairs {
                pools
                    .push(
                        TaskIdentifier::Relativity,
                        TrainItem::Pair {
                            a: feature_of(&p.img_a.id)?,
                            b: feature_of(&p.img_b.id)?,
                            label: p.label,
                            dataset_id: m.name.clone(),
                        },
                    )
                    .map_err(|e| pipe(&e))?;
            }
        }
        for r in m.train_records() {
            let f = feature_of(&r.id)?;
            let target = r.mos.expect("normalized");
            pools
                .push(
                    TaskIdentifier::IqaQuant,
                    TrainItem::Absolute {
                        features: f,
                        target,
                        dataset_id: r.dataset_id.clone(),
                    },
                )
                .map_err(|e| pipe(&e))?;
            if let Some(y) = r.authenticity {
                pools
                    .push(
                        TaskIdentifier::Authenticity,
                        TrainItem::Authenticity {
                            features: f,
                            photographic: y,
                            dataset_id: r.dataset_id.clone(),
                        },
                    )
                    .map_err(|e| pipe(&e))?;
            }
        }

        let test: Vec<&AnnotatedImage> = m.test_records().collect();
        let mos: Vec<f64> = test.iter().map(|r| r.mos.expect("normalized")).collect();
        let mut pairs = Vec::new();
        for i in 0..test.len() {
            for j in i + 1..test.len() {
                if let Some(p) = Preference::from_values(mos[i], mos[j]) {
                    pairs.push((i, j, p));
                }
            }
        }
        tests.push(TestSet {
            dataset_id: m.name.clone(),
            ids: test.iter().map(|r| r.id.clone()).collect(),
            features: test.iter().map(|r| feature_of(&r.id)).collect::<Result<_>>()?,
            mos,
            photographic: test.iter().map(|r| r.authenticity.unwrap_or(true)).collect(),
            pairs,
        });
    }

    let strategies = Strategy::ALL
        .into_iter()
        .map(|s| {
            let calib: Vec<String> = if s.joint() { names.clone() } else { vec![anchor.clone()] };
            StrategyPlan {
                strategy: s,
                plan: build_plan(config, &names, &calib, &anchor, s.uses_relativity()),
            }
        })
        .collect();

    let mut transfer = Vec::new();
    for (si, source) in names.iter().enumerate() {
        let plan = build_plan(config, &names, std::slice::from_ref(source), source, false);
        for ti in 0..names.len() {
            transfer.push(TransferCell {
                source: si,
                target: ti,
                plan: plan.clone(),
            });
        }
    }

    Ok(ExperimentBundle {
        datasets: names,
        anchor,
        config: config.clone(),
        strategies,
        transfer,
        pools,
        tests,
    })
}

/// Items whose features follow a hidden linear quality direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparablePool {
    pub pools: TaskPools,
    pub held_out: Vec<(FeatureVector, FeatureVector, Preference)>,
}

/// Relativity pool whose labels are the order of `w . f` for a fixed
/// random direction `w`; held-out pairs use fresh feature vectors.
pub fn separable_relativity_pool(n_pairs: usize, n_held_out: usize, seed: u64) -> SeparablePool {
    let mut rng = seed::rng(seed, &[0x5345_5041]);
    let w: Vec<f64> = (0..FEATURE_LEN).map(|_| rng.random_range(-1.0..1.0)).collect();
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
        let mut f = [0.0; FEATURE_LEN];
        f.iter_mut().for_each(|x| *x = rng.random_range(0.0..1.0));
        FeatureVector(f)
    };
    let value = |f: &FeatureVector| f.0.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
    let pair = |rng: &mut rand_chacha::ChaCha8Rng| loop {
        let (a, b) = (draw(rng), draw(rng));
        if let Some(p) = Preference::from_values(value(&a), value(&b)) {
            return (a, b, p);
        }
    };
    let mut pools = TaskPools::new();
    for _ in 0..n_pairs {
        let (a, b, label) = pair(&mut rng);
        pools
            .push(
                TaskIdentifier::Relativity,
                TrainItem::Pair {
                    a,
                    b,
                    label,
                    dataset_id: "separable".into(),
                },
            )
            .expect("pair item");
    }
    let held_out = (0..n_held_out).map(|_| pair(&mut rng)).collect();
    SeparablePool { pools, held_out }
}
