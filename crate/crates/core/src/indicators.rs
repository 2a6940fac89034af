//! Image decoding, perceptual attribute estimates and model features.
//!
//! All estimators work on Rec. 601 luma (`0.299 R + 0.587 G + 0.114 B`)
//! except colorfulness, which uses the opponent channels. Every indicator is
//! reported on `[0, 100]`:
//!
//! | indicator    | statistic                                   | map to `[0, 100]`           |
//! |--------------|---------------------------------------------|-----------------------------|
//! | brightness   | mean luma                                   | `× 100 / 255`               |
//! | colorfulness | Hasler–Süsstrunk `σ_rgyb + 0.3 μ_rgyb`      | `÷ 109 × 100`, clamped      |
//! | contrast     | RMS contrast (luma std)                     | `× 100 / 127.5`, clamped    |
//! | noisiness    | Immerkær fast noise σ estimate              | `÷ 30 × 100`, clamped       |
//! | sharpness    | variance of the 3×3 Laplacian response      | `log10(1 + v) / 4 × 100`    |
//!
//! Convolutions replicate edge pixels. The Immerkær estimate is taken over
//! the `(W-2)(H-2)` interior where the mask fits without padding.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("cannot read image {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("image is {width}x{height}; both sides must be at least 3 pixels")]
    TooSmall { width: usize, height: usize },
    #[error("pixel buffer has {actual} bytes, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("invalid degradation magnitude {0}")]
    InvalidMagnitude(f64),
    #[error("cannot write image {path}: {message}")]
    Encode { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, ImageError>;

/// An 8-bit RGB raster, row-major, three bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn from_rgb(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width < 3 || height < 3 {
            return Err(ImageError::TooSmall { width, height });
        }
        let expected = width * height * 3;
        if pixels.len() != expected {
            return Err(ImageError::BufferSize {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::from_rgb(width, height, rgb.repeat(width * height))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Copies the `w`×`h` window whose top-left corner is `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Self> {
        if x + w > self.width || y + h > self.height {
            return Err(ImageError::TooSmall { width: w, height: h });
        }
        let mut pixels = Vec::with_capacity(w * h * 3);
        for row in y..y + h {
            let start = (row * self.width + x) * 3;
            pixels.extend_from_slice(&self.pixels[start..start + w * 3]);
        }
        Self::from_rgb(w, h, pixels)
    }

    /// Luma plane as `f64`, row-major.
    pub fn luma(&self) -> Vec<f64> {
        self.pixels
            .chunks_exact(3)
            .map(|p| 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
            .collect()
    }

    /// Writes a binary PPM (P6).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Decodes a PNG or binary PPM into RGB. Grey sources are replicated across
/// channels and alpha is dropped.
pub fn decode_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let decode_err = |message: String| ImageError::Decode {
        path: path.to_path_buf(),
        message,
    };
    let reader = image::ImageReader::open(path)
        .map_err(|e| decode_err(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| decode_err(e.to_string()))?;
    let img = reader.decode().map_err(|e| decode_err(e.to_string()))?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    ImageBuffer::from_rgb(w, h, rgb.into_raw())
}

/// The five attribute estimates, each on `[0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicatorVector {
    pub brightness: f64,
    pub colorfulness: f64,
    pub contrast: f64,
    pub noisiness: f64,
    pub sharpness: f64,
}

impl IndicatorVector {
    pub fn as_array(&self) -> [f64; 5] {
        [self.brightness, self.colorfulness, self.contrast, self.noisiness, self.sharpness]
    }
}

pub const FEATURE_LEN: usize = 12;

/// Fixed-length model input; see [`extract_features`] for the layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURE_LEN]);

impl FeatureVector {
    pub fn values(&self) -> &[f64; FEATURE_LEN] {
        &self.0
    }
}

fn clamp100(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 100.0)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance about a known mean.
fn variance(xs: &[f64], mu: f64) -> f64 {
    xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / xs.len() as f64
}

/// Replicate-padded sample.
fn at(plane: &[f64], w: usize, h: usize, x: isize, y: isize) -> f64 {
    let xi = x.clamp(0, w as isize - 1) as usize;
    let yi = y.clamp(0, h as isize - 1) as usize;
    plane[yi * w + xi]
}

fn colorfulness_raw(img: &ImageBuffer) -> f64 {
    let (rg, yb): (Vec<f64>, Vec<f64>) = img
        .pixels
        .chunks_exact(3)
        .map(|p| {
            let (r, g, b) = (f64::from(p[0]), f64::from(p[1]), f64::from(p[2]));
            (r - g, 0.5 * (r + g) - b)
        })
        .unzip();
    let (mu_rg, mu_yb) = (mean(&rg), mean(&yb));
    let spread = (variance(&rg, mu_rg) + variance(&yb, mu_yb)).sqrt();
    spread + 0.3 * (mu_rg * mu_rg + mu_yb * mu_yb).sqrt()
}

/// Immerkær noise standard deviation estimate on a luma plane.
pub fn immerkaer_sigma(plane: &[f64], w: usize, h: usize) -> f64 {
    const MASK: [[f64; 3]; 3] = [[1.0, -2.0, 1.0], [-2.0, 4.0, -2.0], [1.0, -2.0, 1.0]];
    let mut total = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let mut acc = 0.0;
            for (dy, row) in MASK.iter().enumerate() {
                for (dx, k) in row.iter().enumerate() {
                    acc += k * plane[(y + dy - 1) * w + (x + dx - 1)];
                }
            }
            total += acc.abs();
        }
    }
    (std::f64::consts::PI / 2.0).sqrt() * total / (6.0 * ((w - 2) * (h - 2)) as f64)
}

fn laplacian(plane: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let c = at(plane, w, h, x, y);
            let n = at(plane, w, h, x, y - 1) + at(plane, w, h, x, y + 1) + at(plane, w, h, x - 1, y) + at(plane, w, h, x + 1, y);
            out.push(n - 4.0 * c);
        }
    }
    out
}

fn indicators_from_luma(img: &ImageBuffer, luma: &[f64]) -> IndicatorVector {
    let (w, h) = (img.width, img.height);
    let mu = mean(luma);
    let lap = laplacian(luma, w, h);
    let lap_var = variance(&lap, mean(&lap));
    IndicatorVector {
        brightness: clamp100(mu * 100.0 / 255.0),
        colorfulness: clamp100(colorfulness_raw(img) / 109.0 * 100.0),
        contrast: clamp100(variance(luma, mu).sqrt() * 100.0 / 127.5),
        noisiness: clamp100(immerkaer_sigma(luma, w, h) / 30.0 * 100.0),
        sharpness: clamp100((1.0 + lap_var).log10() / 4.0 * 100.0),
    }
}

pub fn compute_indicators(img: &ImageBuffer) -> IndicatorVector {
    indicators_from_luma(img, &img.luma())
}

/// Computes the 12 model features:
///
/// 0..5 the indicators divided by 100; 5 luma mean / 255; 6 luma std / 255;
/// 7 skewness squashed by `s / (1 + |s|)`; 8 kurtosis mapped by `1 - 1/κ`;
/// 9 8-bin luma histogram entropy / 3 bits; 10 mean gradient magnitude / 255;
/// 11 Immerkær σ on luma relative to luma std, `σ_n / (σ_n + std)`.
///
/// Degenerate distributions (constant luma) give 0 for every moment,
/// entropy and gradient component.
pub fn extract_features(img: &ImageBuffer) -> FeatureVector {
    let (w, h) = (img.width, img.height);
    let luma = img.luma();
    let ind = indicators_from_luma(img, &luma);
    let n = luma.len() as f64;
    let mu = mean(&luma);
    let var = variance(&luma, mu);
    let sd = var.sqrt();
    let (skew, kurt) = if var > 1e-12 {
        let m3 = luma.iter().map(|x| (x - mu).powi(3)).sum::<f64>() / n;
        let m4 = luma.iter().map(|x| (x - mu).powi(4)).sum::<f64>() / n;
        let s = m3 / var.powf(1.5);
        let k = m4 / (var * var);
        (s / (1.0 + s.abs()), 1.0 - 1.0 / k)
    } else {
        (0.0, 0.0)
    };

    let mut hist = [0usize; 8];
    for &l in &luma {
        hist[((l / 32.0) as usize).min(7)] += 1;
    }
    let entropy = -hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.log2()
        })
        .sum::<f64>();

    let mut grad = 0.0;
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(&luma, w, h, x + 1, y) - at(&luma, w, h, x - 1, y)) / 2.0;
            let gy = (at(&luma, w, h, x, y + 1) - at(&luma, w, h, x, y - 1)) / 2.0;
            grad += (gx * gx + gy * gy).sqrt();
        }
    }
    let sigma_n = immerkaer_sigma(&luma, w, h);
    let noise_ratio = if sigma_n + sd > 1e-12 { sigma_n / (sigma_n + sd) } else { 0.0 };

    let [b, c, ct, nz, sh] = ind.as_array();
    FeatureVector([
        b / 100.0,
        c / 100.0,
        ct / 100.0,
        nz / 100.0,
        sh / 100.0,
        mu / 255.0,
        sd / 255.0,
        skew,
        kurt,
        entropy.max(0.0) / 3.0,
        grad / n / 255.0,
        noise_ratio,
    ])
}

/// Synthetic degradation applied by [`degrade`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degradation {
    GaussianNoise,
    BoxBlur,
}

/// Applies seeded Gaussian noise (magnitude = σ per channel) or a normalized
/// square box blur (magnitude = odd kernel width).
pub fn degrade(img: &ImageBuffer, kind: Degradation, magnitude: f64, seed: u64) -> Result<ImageBuffer> {
    if !magnitude.is_finite() || magnitude < 0.0 {
        return Err(ImageError::InvalidMagnitude(magnitude));
    }
    match kind {
        Degradation::GaussianNoise => Ok(gaussian_noise(img, magnitude, seed)),
        Degradation::BoxBlur => {
            if magnitude.fract() != 0.0 || magnitude < 1.0 || (magnitude as u64).is_multiple_of(2) {
                return Err(ImageError::InvalidMagnitude(magnitude));
            }
            Ok(box_blur(img, magnitude as usize))
        }
    }
}

fn gaussian_noise(img: &ImageBuffer, sigma: f64, seed: u64) -> ImageBuffer {
    if sigma == 0.0 {
        return img.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    let mut rng = seed::rng(seed, &[0x4E_4F49_5345]);
    let pixels = img
        .pixels
        .iter()
        .map(|&p| (f64::from(p) + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
        .collect();
    ImageBuffer { pixels, ..*img }
}

fn box_blur(img: &ImageBuffer, width: usize) -> ImageBuffer {
    if width == 1 {
        return img.clone();
    }
    let (w, h) = (img.width, img.height);
    let r = (width / 2) as isize;
    let norm = (width * width) as f64;
    let mut pixels = vec![0u8; img.pixels.len()];
    for c in 0..3 {
        let plane: Vec<f64> = img.pixels.iter().skip(c).step_by(3).map(|&p| f64::from(p)).collect();
        // Separable: horizontal sums, then vertical sums of those.
        let mut rows = vec![0.0; w * h];
        for y in 0..h as isize {
            for x in 0..w as isize {
                rows[y as usize * w + x as usize] = (-r..=r).map(|d| at(&plane, w, h, x + d, y)).sum();
            }
        }
        for y in 0..h as isize {
            for x in 0..w as isize {
                let s: f64 = (-r..=r).map(|d| at(&rows, w, h, x, y + d)).sum();
                pixels[(y as usize * w + x as usize) * 3 + c] = (s / norm).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    ImageBuffer { pixels, ..*img }
}

const FEATURE_HEADER: &str = "# features v1";

/// Feature table text: a header line, then `id` and the feature values
/// tab-separated, one record per line. Values use the shortest decimal form
/// that reads back to the same bits.
pub fn write_feature_table(features: &BTreeMap<String, FeatureVector>) -> String {
    let mut out = format!("{FEATURE_HEADER}\n");
    for (id, f) in features {
        out.push_str(id);
        for v in f.values() {
            out.push_str(&format!("\t{v}"));
        }
        out.push('\n');
    }
    out
}

/// Inverse of [`write_feature_table`]. Errors name the 1-based line.
pub fn parse_feature_table(text: &str) -> std::result::Result<BTreeMap<String, FeatureVector>, String> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, FEATURE_HEADER)) => {}
        _ => return Err(format!("line 1: expected `{FEATURE_HEADER}`")),
    }
    let mut out = BTreeMap::new();
    for (i, line) in lines {
        let mut parts = line.split('\t');
        let id = parts.next().filter(|s| !s.is_empty()).ok_or_else(|| format!("line {}: missing id", i + 1))?;
        let mut f = [0.0; FEATURE_LEN];
        let mut n = 0;
        for part in parts {
            if n == FEATURE_LEN {
                return Err(format!("line {}: more than {FEATURE_LEN} values", i + 1));
            }
            f[n] = part.parse().map_err(|_| format!("line {}: `{part}` is not a number", i + 1))?;
            n += 1;
        }
        if n != FEATURE_LEN {
            return Err(format!("line {}: expected {FEATURE_LEN} values, found {n}", i + 1));
        }
        if out.insert(id.to_string(), FeatureVector(f)).is_some() {
            return Err(format!("line {}: duplicate id `{id}`", i + 1));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn feature_table_round_trips_bits(rows in prop::collection::btree_map("[a-z0-9_]{1,8}", prop::array::uniform12(any::<f64>().prop_filter("finite", |v| v.is_finite())), 0..6)) {
            let map: BTreeMap<String, FeatureVector> = rows.into_iter().map(|(k, v)| (k, FeatureVector(v))).collect();
            let back = parse_feature_table(&write_feature_table(&map)).unwrap();
            prop_assert_eq!(back.len(), map.len());
            for (k, f) in &map {
                let g = &back[k];
                prop_assert!(f.0.iter().zip(&g.0).all(|(a, b)| a.to_bits() == b.to_bits()));
            }
        }
    }

    #[test]
    fn immerkaer_matches_external_convolution() {
        // scipy.signal.convolve2d(mode="valid") on the same plane.
        let (w, h) = (64, 48);
        let plane: Vec<f64> = (0..h)
            .flat_map(|y| (0..w).map(move |x| ((x * x * 13 + y * 31 + x * y * 7) % 97) as f64 * 2.0))
            .collect();
        assert!((immerkaer_sigma(&plane, w, h) - 54.78957379714716).abs() < 1e-9);
    }

    #[test]
    fn feature_table_errors_name_lines() {
        assert!(parse_feature_table("id\t1").unwrap_err().starts_with("line 1"));
        let short = "# features v1\na\t1\t2\n";
        assert!(parse_feature_table(short).unwrap_err().starts_with("line 2"));
    }

    fn textured(seed: u64, size: usize) -> ImageBuffer {
        crate::synth::texture(crate::synth::TextureFamily::ValueNoise, size, &crate::synth::Environment::default(), seed)
    }

    #[test]
    fn uniform_gray_has_no_chroma_contrast_or_detail() {
        let img = ImageBuffer::filled(16, 16, [128, 128, 128]).unwrap();
        let ind = compute_indicators(&img);
        assert_eq!(ind.colorfulness, 0.0);
        assert_eq!(ind.contrast, 0.0);
        assert_eq!(ind.sharpness, 0.0);
        assert_eq!(ind.noisiness, 0.0);
    }

    #[test]
    fn white_is_full_brightness() {
        let img = ImageBuffer::filled(8, 8, [255, 255, 255]).unwrap();
        assert!((compute_indicators(&img).brightness - 100.0).abs() < 1e-9);
    }

    #[test]
    fn too_small_buffers_are_rejected() {
        assert!(matches!(ImageBuffer::filled(2, 2, [0, 0, 0]), Err(ImageError::TooSmall { .. })));
        assert!(matches!(ImageBuffer::from_rgb(3, 3, vec![0; 10]), Err(ImageError::BufferSize { .. })));
    }

    #[test]
    fn noise_estimate_matches_independent_oracle() {
        // 64x64 mid-grey plus N(0, 10) noise; value pinned from an
        // independent numpy evaluation of the same pixel array
        // (see `noise_fixture_oracle` below for the in-crate cross-check).
        let gray = ImageBuffer::filled(64, 64, [128, 128, 128]).unwrap();
        let noisy = degrade(&gray, Degradation::GaussianNoise, 10.0, 2024).unwrap();
        let got = compute_indicators(&noisy).noisiness;
        let expected = noise_fixture_oracle(&noisy);
        assert!((got - expected).abs() <= 0.01 * expected, "{got} vs {expected}");
        // Immerkær on pure Gaussian noise recovers σ≈10 (luma averages the
        // three channels, so the luma σ is about 10·‖(0.299,0.587,0.114)‖).
        let luma_sigma = 10.0 * (0.299f64.powi(2) + 0.587f64.powi(2) + 0.114f64.powi(2)).sqrt();
        assert!((got - luma_sigma / 30.0 * 100.0).abs() < 2.0, "{got}");
    }

    /// Direct transcription of the estimator: explicit 3x3 loop over the
    /// valid interior, no shared helpers.
    fn noise_fixture_oracle(img: &ImageBuffer) -> f64 {
        let (w, h) = (img.width(), img.height());
        let px = |x: usize, y: usize| {
            let p = img.pixel(x, y);
            0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
        };
        let mut sum = 0.0;
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let v = px(x - 1, y - 1) - 2.0 * px(x, y - 1) + px(x + 1, y - 1) - 2.0 * px(x - 1, y) + 4.0 * px(x, y)
                    - 2.0 * px(x + 1, y)
                    + px(x - 1, y + 1)
                    - 2.0 * px(x, y + 1)
                    + px(x + 1, y + 1);
                sum += v.abs();
            }
        }
        let sigma = (std::f64::consts::FRAC_PI_2).sqrt() * sum / (6.0 * ((w - 2) * (h - 2)) as f64);
        (sigma / 30.0 * 100.0).min(100.0)
    }

    #[test]
    fn uniform_image_features_are_degenerate_zero() {
        let f = extract_features(&ImageBuffer::filled(10, 10, [77, 77, 77]).unwrap());
        for i in [6, 7, 8, 9, 10, 11] {
            assert_eq!(f.0[i], 0.0, "component {i}");
        }
        assert!((f.0[5] - 77.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn checkerboard_entropy_is_one_bit() {
        let mut px = Vec::new();
        for y in 0..64 {
            for x in 0..64 {
                let v = if (x + y) % 2 == 0 { 20 } else { 230 };
                px.extend_from_slice(&[v, v, v]);
            }
        }
        let f = extract_features(&ImageBuffer::from_rgb(64, 64, px).unwrap());
        // Two equally populated bins: H = 1 bit, rescaled by 1/3.
        assert!((f.0[9] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn features_are_deterministic() {
        let img = textured(3, 32);
        assert_eq!(extract_features(&img), extract_features(&img.clone()));
    }

    #[test]
    fn identity_degradations() {
        let img = textured(11, 24);
        assert_eq!(degrade(&img, Degradation::GaussianNoise, 0.0, 5).unwrap(), img);
        assert_eq!(degrade(&img, Degradation::BoxBlur, 1.0, 5).unwrap(), img);
        let flat = ImageBuffer::filled(9, 7, [10, 200, 33]).unwrap();
        assert_eq!(degrade(&flat, Degradation::BoxBlur, 3.0, 0).unwrap(), flat);
    }

    #[test]
    fn noise_is_seeded() {
        let img = textured(1, 16);
        let a = degrade(&img, Degradation::GaussianNoise, 7.0, 99).unwrap();
        assert_eq!(a, degrade(&img, Degradation::GaussianNoise, 7.0, 99).unwrap());
        assert_ne!(a, degrade(&img, Degradation::GaussianNoise, 7.0, 100).unwrap());
    }

    #[test]
    fn invalid_magnitudes() {
        let img = textured(1, 8);
        for (kind, m) in [
            (Degradation::GaussianNoise, -1.0),
            (Degradation::BoxBlur, 2.0),
            (Degradation::BoxBlur, 0.0),
            (Degradation::BoxBlur, 3.5),
            (Degradation::GaussianNoise, f64::NAN),
        ] {
            assert!(degrade(&img, kind, m, 0).is_err(), "{kind:?} {m}");
        }
    }

    #[test]
    fn monotone_in_degradation_strength() {
        for s in 0..10 {
            let img = textured(100 + s, 64);
            let noise: Vec<f64> = [0.0, 5.0, 10.0, 20.0]
                .iter()
                .map(|&sig| compute_indicators(&degrade(&img, Degradation::GaussianNoise, sig, s).unwrap()).noisiness)
                .collect();
            assert!(noise.windows(2).all(|p| p[0] < p[1]), "noisiness {noise:?}");
            let sharp: Vec<f64> = [1.0, 3.0, 5.0, 9.0]
                .iter()
                .map(|&wd| compute_indicators(&degrade(&img, Degradation::BoxBlur, wd, s).unwrap()).sharpness)
                .collect();
            assert!(sharp.windows(2).all(|p| p[0] > p[1]), "sharpness {sharp:?}");
        }
    }

    #[test]
    fn brightness_shift_equivariance() {
        // Values stay inside [0, 255] after the shift, so nothing clamps.
        let base = textured(8, 32);
        let k = 17u8;
        let dark: Vec<u8> = base.pixels().iter().map(|&p| p / 2).collect();
        let lifted: Vec<u8> = dark.iter().map(|&p| p + k).collect();
        let a = compute_indicators(&ImageBuffer::from_rgb(32, 32, dark).unwrap()).brightness;
        let b = compute_indicators(&ImageBuffer::from_rgb(32, 32, lifted).unwrap()).brightness;
        assert!((b - a - 100.0 * f64::from(k) / 255.0).abs() < 1e-9);
    }

    #[test]
    fn interior_crops_agree() {
        // Two 128x128 windows offset by 4 px; tolerance is 1% of the
        // [0, 100] scale.
        for seed in 0..10 {
            let big = textured(seed, 132);
            let a = compute_indicators(&big.crop(0, 0, 128, 128).unwrap()).as_array();
            let b = compute_indicators(&big.crop(4, 4, 128, 128).unwrap()).as_array();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1.0, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn ppm_round_trip_through_decoder() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageBuffer::filled(4, 4, [255, 0, 0]).unwrap();
        let path = dir.path().join("red.ppm");
        std::fs::write(&path, img.to_ppm()).unwrap();
        let back = decode_image(&path).unwrap();
        assert_eq!(back, img);
        assert!(back.pixels().chunks(3).all(|p| p == [255, 0, 0]));
    }

    #[test]
    fn decoder_rejects_small_truncated_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let small = dir.path().join("small.ppm");
        std::fs::write(&small, ImageBuffer { width: 2, height: 2, pixels: vec![9; 12] }.to_ppm()).unwrap();
        assert!(matches!(decode_image(&small), Err(ImageError::TooSmall { .. })));

        let truncated = dir.path().join("cut.ppm");
        let mut bytes = ImageBuffer::filled(8, 8, [1, 2, 3]).unwrap().to_ppm();
        bytes.truncate(bytes.len() - 40);
        std::fs::write(&truncated, bytes).unwrap();
        assert!(matches!(decode_image(&truncated), Err(ImageError::Decode { .. })));

        assert!(decode_image(dir.path().join("absent.png")).is_err());
    }

    #[test]
    fn png_grey_source_is_replicated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let grey = image::GrayImage::from_fn(5, 4, |x, y| image::Luma([(x * 10 + y) as u8]));
        grey.save(&path).unwrap();
        let img = decode_image(&path).unwrap();
        assert_eq!((img.width(), img.height()), (5, 4));
        assert_eq!(img.pixel(3, 2), [32, 32, 32]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn indicators_stay_in_range(w in 3usize..24, h in 3usize..24, seed in any::<u64>()) {
            use rand::RngCore;
            let mut px = vec![0u8; w * h * 3];
            crate::seed::rng(seed, &[]).fill_bytes(&mut px);
            let img = ImageBuffer::from_rgb(w, h, px).unwrap();
            for v in compute_indicators(&img).as_array() {
                prop_assert!((0.0..=100.0).contains(&v));
            }
            prop_assert!(extract_features(&img).0.iter().all(|v| v.is_finite()));
        }
    }
}
