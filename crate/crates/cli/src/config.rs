//! Run configuration read from a TOML file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use iqa_core::synth::{BenchmarkConfig, LatentSpec, StageSettings, Warp, WarpSpec, DEFAULT_NOISE_SD};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Manifest files to ingest. Mutually exclusive with `[synth]`.
    pub manifests: Vec<PathBuf>,
    pub synth: Option<SynthSection>,
    /// Dataset used for absolute calibration; the first dataset by name
    /// when unset.
    pub anchor: Option<String>,
    /// Also train and evaluate the source-to-target matrix.
    pub transfer: bool,
    pub split: SplitSection,
    pub corpus: CorpusSection,
    pub training: TrainingSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            manifests: Vec::new(),
            synth: None,
            anchor: None,
            transfer: true,
            split: SplitSection::default(),
            corpus: CorpusSection::default(),
            training: TrainingSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub n_images: usize,
    pub image_size: usize,
    /// `identity`, `affine:<slope>:<intercept>`, `power:<exponent>` or
    /// `logistic:<steepness>`, one per dataset.
    pub warps: Vec<String>,
    pub noise_sd: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let latent = LatentSpec::default();
        Self {
            n_images: latent.n_images,
            image_size: latent.image_size,
            warps: iqa_core::synth::default_warps().iter().map(|w| w.warp.to_string()).collect(),
            noise_sd: DEFAULT_NOISE_SD,
        }
    }
}

impl SynthSection {
    pub fn latent(&self, seed: u64) -> LatentSpec {
        LatentSpec {
            n_images: self.n_images,
            image_size: self.image_size,
            seed,
            ..LatentSpec::default()
        }
    }

    pub fn warp_specs(&self) -> Result<Vec<WarpSpec>> {
        self.warps
            .iter()
            .map(|w| {
                let warp: Warp = w.parse().with_context(|| format!("synth.warps: `{w}`"))?;
                let spec = WarpSpec { warp, noise_sd: self.noise_sd };
                spec.validate().with_context(|| format!("synth.warps: `{w}`"))?;
                Ok(spec)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub train_fraction: f64,
    /// Split by reference group instead, putting this many groups in train.
    pub reference_count: Option<usize>,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            reference_count: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub pairs_per_record: usize,
    pub attribute_pairs: bool,
}

impl Default for CorpusSection {
    fn default() -> Self {
        let b = BenchmarkConfig::default();
        Self {
            pairs_per_record: b.pairs_per_record,
            attribute_pairs: b.attribute_pairs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub hidden_size: usize,
    pub relativity: StageSettings,
    pub multifunctional: StageSettings,
    /// Omitted refinement settings fall back to the defaults; set
    /// `skip_refinement` to drop the stage.
    pub refinement: StageSettings,
    pub skip_refinement: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let b = BenchmarkConfig::default();
        Self {
            hidden_size: b.hidden_size,
            relativity: b.relativity,
            multifunctional: b.multifunctional,
            refinement: b.refinement.expect("default has refinement"),
            skip_refinement: false,
        }
    }
}

impl RunConfig {
    /// Reads `path`; relative manifest paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("{}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for m in &mut cfg.manifests {
            if m.is_relative() {
                *m = base.join(&*m);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.manifests.is_empty() && self.synth.is_some() {
            bail!("config names both `manifests` and `[synth]`; a run uses exactly one data source");
        }
        for m in &self.manifests {
            if !m.is_file() {
                bail!("manifest {} does not exist", m.display());
            }
        }
        if let Some(s) = &self.synth {
            s.latent(self.seed).validate()?;
            if s.warp_specs()?.len() < 2 {
                bail!("synth.warps needs at least 2 entries");
            }
        }
        let f = self.split.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            bail!("split.train_fraction must lie strictly between 0 and 1, got {f}");
        }
        if self.corpus.pairs_per_record == 0 {
            bail!("corpus.pairs_per_record must be at least 1");
        }
        if self.training.hidden_size == 0 {
            bail!("training.hidden_size must be at least 1");
        }
        let t = &self.training;
        for (name, s) in [("relativity", &t.relativity), ("multifunctional", &t.multifunctional), ("refinement", &t.refinement)] {
            if s.steps == 0 || s.batch_size == 0 || !(s.learning_rate.is_finite() && s.learning_rate >= 0.0) {
                bail!("training.{name}: steps and batch_size must be positive and learning_rate finite and non-negative");
            }
        }
        Ok(())
    }

    /// The synth section in effect: the configured one, or the defaults when
    /// the config names no manifests.
    pub fn synth_source(&self) -> Option<SynthSection> {
        match (&self.synth, self.manifests.is_empty()) {
            (Some(s), _) => Some(s.clone()),
            (None, true) => Some(SynthSection::default()),
            (None, false) => None,
        }
    }

    pub fn benchmark(&self) -> BenchmarkConfig {
        BenchmarkConfig {
            hidden_size: self.training.hidden_size,
            relativity: self.training.relativity,
            multifunctional: self.training.multifunctional,
            refinement: (!self.training.skip_refinement).then_some(self.training.refinement),
            train_fraction: self.split.train_fraction,
            pairs_per_record: self.corpus.pairs_per_record,
            attribute_pairs: self.corpus.attribute_pairs,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default_synth_run() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
        assert_eq!(cfg.synth_source(), Some(SynthSection::default()));
        assert_eq!(cfg.benchmark(), BenchmarkConfig::default());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 7\n[training.relativity]\nsteps = 10\nbatch_size = 4\nlearning_rate = 0.1\n").unwrap();
        assert_eq!(cfg.training.relativity.steps, 10);
        assert_eq!(cfg.training.multifunctional, BenchmarkConfig::default().multifunctional);
        assert_eq!(cfg.benchmark().seed, 7);
    }

    #[test]
    fn rejects_both_sources_and_unknown_keys() {
        let both = RunConfig {
            manifests: vec!["x.tsv".into()],
            synth: Some(SynthSection::default()),
            ..RunConfig::default()
        };
        assert!(both.validate().unwrap_err().to_string().contains("exactly one"));
        assert!(toml::from_str::<RunConfig>("sede = 1").is_err());
        let bad_warp: RunConfig = toml::from_str("[synth]\nwarps = [\"identity\", \"power:-1\"]").unwrap();
        assert!(bad_warp.validate().is_err());
    }
}
