//! Data construction, curriculum training and evaluation tools for
//! subjective image quality assessment.
//!
//! The crate is organised as a pipeline:
//!
//! * [`ingest`] loads rating manifests, normalizes scores to `[0, 100]` and
//!   assigns deterministic train/test splits.
//! * [`corpus`] builds relativity pairs and dialogue-format training samples.
//! * [`indicators`] decodes images and computes classical perceptual
//!   attributes plus a fixed-length feature vector.
//! * [`ranker`] is a small feature-based scorer trained through a staged
//!   curriculum (pairwise relativity first, absolute calibration second).
//! * [`metrics`] provides SRCC/PLCC and the report formatting.
//! * [`synth`] generates multi-dataset suites with per-dataset annotation
//!   warps, and [`experiment`] runs the strategy comparisons on them.

pub mod corpus;
pub mod experiment;
pub mod indicators;
pub mod ingest;
pub mod metrics;
pub mod ranker;
pub mod seed;
pub mod synth;
pub mod text;

pub use indicators::{FeatureVector, ImageBuffer, IndicatorVector};
pub use ingest::{Attribute, AnnotatedImage, DatasetKind, DatasetManifest, ScoreRange, Split};
pub use corpus::TaskIdentifier;
pub use ranker::{CurriculumPlan, ModelParams, StageSpec};
