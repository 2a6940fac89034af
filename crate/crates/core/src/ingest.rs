//! Rating manifests: loading, validation, score normalization and splits.
//!
//! A manifest is a UTF-8 text file. The first non-comment line is a header of
//! tab-separated `key=value` tokens:
//!
//! ```text
//! name=koniq	kind=photographic_wild	score_min=1	score_max=5	attr_range:noisiness=0:10
//! ```
//!
//! Every following line is one record, tab-separated, with fields in fixed
//! order: `id`, `path`, `mos_raw`, any number of `attr:<name>=<value>`, then
//! optionally `auth=<0|1>`, `ref=<reference id>`, `mos=<normalized>` and
//! `split=<train|test>`. The last two are written by the ingest command so
//! that normalized, split manifests can be stored and reloaded. Blank lines
//! and lines starting with `#` are ignored. Unknown fields are rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate record id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("record `{id}`: {field}={value} outside declared range [{min}, {max}]")]
    OutOfRange {
        id: String,
        field: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("invalid score range [{min}, {max}]: min must be below max and both finite")]
    InvalidRange { min: f64, max: f64 },
    #[error("degenerate score range: min == max == {0}")]
    DegenerateRange(f64),
    #[error("split needs at least 2 records, manifest has {0}")]
    TooFewRecords(usize),
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("record `{0}` has no reference id")]
    MissingReference(String),
    #[error("train reference count {count} out of range for {groups} reference groups")]
    ReferenceCount { count: usize, groups: usize },
    #[error("reference ids must be present on all records or none (record `{0}` differs)")]
    MixedReference(String),
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// Nominal rating range of one dataset, in the dataset's native units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRange {
    min: f64,
    max: f64,
}

impl ScoreRange {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || min > max {
            return Err(IngestError::InvalidRange { min, max });
        }
        if min == max {
            return Err(IngestError::DegenerateRange(min));
        }
        Ok(Self { min, max })
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    /// Linear map of `v` onto `[0, 100]`. Endpoints map exactly to 0 and 100.
    pub fn to_percent(&self, v: f64) -> f64 {
        if v == self.max {
            return 100.0;
        }
        (v - self.min) / (self.max - self.min) * 100.0
    }
}

/// The five perceptual attributes rated alongside MOS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Brightness,
    Colorfulness,
    Contrast,
    Noisiness,
    Sharpness,
}

impl Attribute {
    pub const ALL: [Attribute; 5] = [
        Attribute::Brightness,
        Attribute::Colorfulness,
        Attribute::Contrast,
        Attribute::Noisiness,
        Attribute::Sharpness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Brightness => "brightness",
            Attribute::Colorfulness => "colorfulness",
            Attribute::Contrast => "contrast",
            Attribute::Noisiness => "noisiness",
            Attribute::Sharpness => "sharpness",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attribute {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Attribute::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown attribute `{s}`"))
    }
}

/// A rated quantity: overall MOS or one of the attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mos,
    Attr(Attribute),
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Mos => "mos",
            Metric::Attr(a) => a.name(),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "mos" {
            Ok(Metric::Mos)
        } else {
            s.parse().map(Metric::Attr)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    PhotographicWild,
    PhotographicArtificial,
    AiGenerated,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::PhotographicWild => "photographic_wild",
            DatasetKind::PhotographicArtificial => "photographic_artificial",
            DatasetKind::AiGenerated => "ai_generated",
        }
    }
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "photographic_wild" => Ok(DatasetKind::PhotographicWild),
            "photographic_artificial" => Ok(DatasetKind::PhotographicArtificial),
            "ai_generated" => Ok(DatasetKind::AiGenerated),
            _ => Err(format!("unknown dataset kind `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Unassigned,
    Train,
    Test,
}

/// One rated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedImage {
    pub id: String,
    pub dataset_id: String,
    pub image_path: String,
    pub mos_raw: f64,
    /// Normalized MOS on `[0, 100]`; `None` until [`normalize_scores`] runs.
    pub mos: Option<f64>,
    /// Attribute ratings as read from the manifest.
    pub attributes_raw: BTreeMap<Attribute, f64>,
    /// Attribute ratings on `[0, 100]`; empty until [`normalize_scores`] runs.
    pub attributes: BTreeMap<Attribute, f64>,
    pub authenticity: Option<bool>,
    pub reference_id: Option<String>,
    pub split: Split,
}

impl AnnotatedImage {
    pub fn new(id: impl Into<String>, dataset_id: impl Into<String>, path: impl Into<String>, mos_raw: f64) -> Self {
        Self {
            id: id.into(),
            dataset_id: dataset_id.into(),
            image_path: path.into(),
            mos_raw,
            mos: None,
            attributes_raw: BTreeMap::new(),
            attributes: BTreeMap::new(),
            authenticity: None,
            reference_id: None,
            split: Split::Unassigned,
        }
    }

    /// Normalized value of `metric`, if normalized and present.
    pub fn metric_value(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Mos => self.mos,
            Metric::Attr(a) => self.attributes.get(&a).copied(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub kind: DatasetKind,
    pub score_range: ScoreRange,
    /// Declared native ranges for attribute ratings. Attributes without a
    /// declared range are taken to be on `[0, 100]` already.
    pub attribute_ranges: BTreeMap<Attribute, ScoreRange>,
    pub records: Vec<AnnotatedImage>,
}

impl DatasetManifest {
    /// Checks every manifest invariant.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (i, r) in self.records.iter().enumerate() {
            if !seen.insert(r.id.as_str()) {
                return Err(IngestError::DuplicateId { line: i + 1, id: r.id.clone() });
            }
            if !self.score_range.contains(r.mos_raw) {
                return Err(self.out_of_range(r, "mos_raw", r.mos_raw, self.score_range));
            }
            if let Some(m) = r.mos {
                if !(0.0..=100.0).contains(&m) {
                    return Err(self.out_of_range(r, "mos", m, PERCENT));
                }
            }
            for (&a, &v) in &r.attributes_raw {
                let range = self.attribute_ranges.get(&a).copied().unwrap_or(PERCENT);
                if !range.contains(v) {
                    return Err(self.out_of_range(r, &format!("attr:{a}"), v, range));
                }
            }
            for (&a, &v) in &r.attributes {
                if !(0.0..=100.0).contains(&v) {
                    return Err(self.out_of_range(r, &format!("attr:{a}"), v, PERCENT));
                }
            }
        }
        if let Some(first) = self.records.first() {
            let has_ref = first.reference_id.is_some();
            if let Some(r) = self.records.iter().find(|r| r.reference_id.is_some() != has_ref) {
                return Err(IngestError::MixedReference(r.id.clone()));
            }
        }
        Ok(())
    }

    fn out_of_range(&self, r: &AnnotatedImage, field: &str, value: f64, range: ScoreRange) -> IngestError {
        IngestError::OutOfRange {
            id: r.id.clone(),
            field: field.to_string(),
            value,
            min: range.min,
            max: range.max,
        }
    }

    pub fn train_records(&self) -> impl Iterator<Item = &AnnotatedImage> {
        self.records.iter().filter(|r| r.split == Split::Train)
    }

    pub fn test_records(&self) -> impl Iterator<Item = &AnnotatedImage> {
        self.records.iter().filter(|r| r.split == Split::Test)
    }

    pub fn is_normalized(&self) -> bool {
        self.records.iter().all(|r| r.mos.is_some())
    }
}

const PERCENT: ScoreRange = ScoreRange { min: 0.0, max: 100.0 };

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads and validates a manifest file.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    parse_manifest(&read_text(path.as_ref())?)
}

fn malformed(line: usize, message: impl Into<String>) -> IngestError {
    IngestError::Malformed { line, message: message.into() }
}

fn parse_num(line: usize, field: &str, s: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| malformed(line, format!("{field}: `{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(malformed(line, format!("{field}: value must be finite")));
    }
    Ok(v)
}

fn key_value<'a>(line: usize, token: &'a str, key: &str) -> Result<&'a str> {
    token
        .strip_prefix(key)
        .and_then(|t| t.strip_prefix('='))
        .ok_or_else(|| malformed(line, format!("expected `{key}=...`, found `{token}`")))
}

/// Parses manifest text. Line numbers in errors are 1-based.
pub fn parse_manifest(text: &str) -> Result<DatasetManifest> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));

    let (hline, header) = lines.next().ok_or_else(|| malformed(1, "missing header line"))?;
    let mut tokens = header.split('\t');
    let mut next = |key: &str| {
        tokens
            .next()
            .ok_or_else(|| malformed(hline, format!("header is missing `{key}`")))
            .and_then(|t| key_value(hline, t, key))
    };
    let name = next("name")?.to_string();
    if name.is_empty() {
        return Err(malformed(hline, "dataset name is empty"));
    }
    let kind: DatasetKind = next("kind")?.parse().map_err(|e: String| malformed(hline, e))?;
    let smin = parse_num(hline, "score_min", next("score_min")?)?;
    let smax = parse_num(hline, "score_max", next("score_max")?)?;
    let score_range = ScoreRange::new(smin, smax)?;
    let mut attribute_ranges = BTreeMap::new();
    for token in tokens {
        let rest = token
            .strip_prefix("attr_range:")
            .ok_or_else(|| malformed(hline, format!("unknown header field `{token}`")))?;
        let (attr, bounds) = rest
            .split_once('=')
            .ok_or_else(|| malformed(hline, format!("malformed `{token}`")))?;
        let attr: Attribute = attr.parse().map_err(|e: String| malformed(hline, e))?;
        let (lo, hi) = bounds
            .split_once(':')
            .ok_or_else(|| malformed(hline, format!("attribute range `{bounds}` must be `min:max`")))?;
        let range = ScoreRange::new(parse_num(hline, "attr_range", lo)?, parse_num(hline, "attr_range", hi)?)?;
        if attribute_ranges.insert(attr, range).is_some() {
            return Err(malformed(hline, format!("attribute range for `{attr}` declared twice")));
        }
    }

    let mut manifest = DatasetManifest {
        name,
        kind,
        score_range,
        attribute_ranges,
        records: Vec::new(),
    };
    let mut seen = BTreeSet::new();
    for (line, text) in lines {
        let record = parse_record(line, text, &manifest)?;
        if !seen.insert(record.id.clone()) {
            return Err(IngestError::DuplicateId { line, id: record.id });
        }
        manifest.records.push(record);
    }
    manifest.validate()?;
    Ok(manifest)
}

fn parse_record(line: usize, text: &str, manifest: &DatasetManifest) -> Result<AnnotatedImage> {
    let fields: Vec<&str> = text.split('\t').collect();
    if fields.len() < 3 {
        return Err(malformed(line, "record needs at least `id`, `path` and `mos_raw`"));
    }
    let id = fields[0];
    if id.is_empty() || id.contains(char::is_whitespace) {
        return Err(malformed(line, format!("invalid record id `{id}`")));
    }
    if fields[1].is_empty() {
        return Err(malformed(line, "empty image path"));
    }
    let mos_raw = parse_num(line, "mos_raw", fields[2])?;
    let mut record = AnnotatedImage::new(id, manifest.name.clone(), fields[1], mos_raw);

    // Fixed order: attr:* ... auth ref mos split. `stage` tracks the last
    // optional field seen so out-of-order fields are rejected.
    let mut stage = 0;
    for &field in &fields[3..] {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| malformed(line, format!("field `{field}` is not `key=value`")))?;
        let order = match key {
            k if k.starts_with("attr:") => 1,
            "auth" => 2,
            "ref" => 3,
            "mos" => 4,
            "split" => 5,
            _ => return Err(malformed(line, format!("unknown field `{key}`"))),
        };
        if order < stage || (order == stage && order != 1) {
            return Err(malformed(line, format!("field `{key}` out of order or repeated")));
        }
        stage = order;
        match order {
            1 => {
                let attr: Attribute = key["attr:".len()..].parse().map_err(|e: String| malformed(line, e))?;
                let v = parse_num(line, key, value)?;
                if record.attributes_raw.insert(attr, v).is_some() {
                    return Err(malformed(line, format!("attribute `{attr}` repeated")));
                }
            }
            2 => {
                record.authenticity = Some(match value {
                    "1" => true,
                    "0" => false,
                    _ => return Err(malformed(line, format!("auth must be 0 or 1, found `{value}`"))),
                })
            }
            3 => {
                if value.is_empty() {
                    return Err(malformed(line, "empty reference id"));
                }
                record.reference_id = Some(value.to_string());
            }
            4 => record.mos = Some(parse_num(line, "mos", value)?),
            _ => {
                record.split = match value {
                    "train" => Split::Train,
                    "test" => Split::Test,
                    _ => return Err(malformed(line, format!("split must be train or test, found `{value}`"))),
                }
            }
        }
    }
    Ok(record)
}

/// Renders a manifest in the file format accepted by [`parse_manifest`].
pub fn write_manifest(m: &DatasetManifest) -> String {
    let mut out = format!(
        "name={}\tkind={}\tscore_min={}\tscore_max={}",
        m.name,
        m.kind.name(),
        m.score_range.min,
        m.score_range.max
    );
    for (a, r) in &m.attribute_ranges {
        out.push_str(&format!("\tattr_range:{a}={}:{}", r.min, r.max));
    }
    out.push('\n');
    for r in &m.records {
        out.push_str(&format!("{}\t{}\t{}", r.id, r.image_path, r.mos_raw));
        for (a, v) in &r.attributes_raw {
            out.push_str(&format!("\tattr:{a}={v}"));
        }
        if let Some(auth) = r.authenticity {
            out.push_str(if auth { "\tauth=1" } else { "\tauth=0" });
        }
        if let Some(reference) = &r.reference_id {
            out.push_str(&format!("\tref={reference}"));
        }
        if let Some(mos) = r.mos {
            out.push_str(&format!("\tmos={mos}"));
        }
        match r.split {
            Split::Train => out.push_str("\tsplit=train"),
            Split::Test => out.push_str("\tsplit=test"),
            Split::Unassigned => {}
        }
        out.push('\n');
    }
    out
}

/// Which range [`normalize_scores_with`] maps onto `[0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RangeSource {
    /// The range declared in the manifest header.
    #[default]
    Nominal,
    /// The observed min/max of `mos_raw` (attributes keep nominal ranges).
    Empirical,
}

/// Maps every rating onto `[0, 100]` using the declared ranges.
pub fn normalize_scores(manifest: &DatasetManifest) -> Result<DatasetManifest> {
    normalize_scores_with(manifest, RangeSource::Nominal)
}

pub fn normalize_scores_with(manifest: &DatasetManifest, source: RangeSource) -> Result<DatasetManifest> {
    let range = match source {
        RangeSource::Nominal => manifest.score_range,
        RangeSource::Empirical => {
            let (lo, hi) = manifest
                .records
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.mos_raw), hi.max(r.mos_raw)));
            if manifest.records.is_empty() {
                return Err(IngestError::TooFewRecords(0));
            }
            ScoreRange::new(lo, hi)?
        }
    };
    if range.min == range.max {
        return Err(IngestError::DegenerateRange(range.min));
    }
    let mut out = manifest.clone();
    for r in &mut out.records {
        r.mos = Some(range.to_percent(r.mos_raw));
        r.attributes = r
            .attributes_raw
            .iter()
            .map(|(&a, &v)| {
                let v = match manifest.attribute_ranges.get(&a) {
                    Some(ar) => ar.to_percent(v),
                    None => v,
                };
                (a, v)
            })
            .collect();
    }
    out.validate()?;
    Ok(out)
}

const SPLIT_RANDOM_STREAM: u64 = 0x5354_5241_4E44;
const SPLIT_REFERENCE_STREAM: u64 = 0x5354_5245_4653;

/// Assigns `round(train_fraction * N)` records to train, the rest to test.
///
/// The assignment is a seeded permutation of the sorted record ids, so it does
/// not depend on record order in the file. The train count is clamped to
/// `[1, N-1]` so both splits are non-empty.
pub fn split_random(manifest: &DatasetManifest, train_fraction: f64, seed: u64) -> Result<DatasetManifest> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(IngestError::InvalidFraction(train_fraction));
    }
    let n = manifest.records.len();
    if n < 2 {
        return Err(IngestError::TooFewRecords(n));
    }
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut ids: Vec<&str> = manifest.records.iter().map(|r| r.id.as_str()).collect();
    ids.sort_unstable();
    ids.shuffle(&mut seed::rng(seed, &[SPLIT_RANDOM_STREAM]));
    let train: BTreeSet<&str> = ids[..n_train].iter().copied().collect();

    let mut out = manifest.clone();
    for r in &mut out.records {
        r.split = if train.contains(r.id.as_str()) { Split::Train } else { Split::Test };
    }
    Ok(out)
}

/// Assigns whole reference groups to splits: `train_reference_count` groups to
/// train, the remainder to test.
pub fn split_by_reference(manifest: &DatasetManifest, train_reference_count: usize, seed: u64) -> Result<DatasetManifest> {
    let mut groups = BTreeSet::new();
    for r in &manifest.records {
        match &r.reference_id {
            Some(g) => {
                groups.insert(g.as_str());
            }
            None => return Err(IngestError::MissingReference(r.id.clone())),
        }
    }
    if train_reference_count == 0 || train_reference_count >= groups.len() {
        return Err(IngestError::ReferenceCount {
            count: train_reference_count,
            groups: groups.len(),
        });
    }
    let mut order: Vec<&str> = groups.into_iter().collect();
    order.shuffle(&mut seed::rng(seed, &[SPLIT_REFERENCE_STREAM]));
    let train: BTreeSet<&str> = order[..train_reference_count].iter().copied().collect();

    let mut out = manifest.clone();
    for r in &mut out.records {
        let g = r.reference_id.as_deref().unwrap_or_default();
        r.split = if train.contains(g) { Split::Train } else { Split::Test };
    }
    Ok(out)
}
