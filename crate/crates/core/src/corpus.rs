//! Relativity pairs, dialogue-format training samples and their text form.
//!
//! Every sample serializes to
//!
//! ```text
//! Human: <img1>{path1}</img1>[<img2>{path2}</img2>]<TASK>{instruction}
//! Assistant: {answer}
//! ```
//!
//! where the second image block is present only for two-image relativity
//! samples. Relativity reuses the `<IQA_QUANT>` token; the image count tells
//! the two apart when parsing.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Attribute, DatasetManifest, Metric, Split};
use crate::seed;
use crate::text::format_fixed;

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("need at least 2 train records in `{dataset}` with a `{metric}` value, found {found}")]
    TooFewRecords { dataset: String, metric: Metric, found: usize },
    #[error("record `{id}` has no `{metric}` value")]
    MissingMetric { id: String, metric: Metric },
    #[error("record `{0}` has no authenticity flag")]
    MissingAuthenticity(String),
    #[error("pair count must be at least 1")]
    ZeroCount,
    #[error("all train records in `{0}` share one value; no ordered pair exists")]
    NoOrderedPair(String),
    #[error("manifest `{0}` is not normalized")]
    NotNormalized(String),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("byte {offset}: unknown task identifier `{token}`")]
    UnknownTask { offset: usize, token: String },
    #[error("byte {offset}: missing `Assistant: ` line")]
    MissingAssistant { offset: usize },
    #[error("byte {offset}: malformed image tag ({message})")]
    MalformedTag { offset: usize, message: String },
    #[error("byte {offset}: {message}")]
    Malformed { offset: usize, message: String },
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// Task token prefixed to the instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskIdentifier {
    #[serde(rename = "IQA_QUANT")]
    IqaQuant,
    #[serde(rename = "IQA_DES")]
    IqaDes,
    #[serde(rename = "AUTHENTICITY")]
    Authenticity,
    #[serde(rename = "RELATIVITY")]
    Relativity,
}

impl TaskIdentifier {
    pub const ALL: [TaskIdentifier; 4] = [
        TaskIdentifier::IqaQuant,
        TaskIdentifier::IqaDes,
        TaskIdentifier::Authenticity,
        TaskIdentifier::Relativity,
    ];

    /// The serialized token. Relativity shares the quantitative token.
    pub fn token(self) -> &'static str {
        match self {
            TaskIdentifier::IqaQuant | TaskIdentifier::Relativity => "<IQA_QUANT>",
            TaskIdentifier::IqaDes => "<IQA_DES>",
            TaskIdentifier::Authenticity => "<AUTHENTICITY>",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskIdentifier::IqaQuant => "IQA_QUANT",
            TaskIdentifier::IqaDes => "IQA_DES",
            TaskIdentifier::Authenticity => "AUTHENTICITY",
            TaskIdentifier::Relativity => "RELATIVITY",
        }
    }

    pub fn image_count(self) -> usize {
        if self == TaskIdentifier::Relativity {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for TaskIdentifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskIdentifier {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        TaskIdentifier::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown task `{s}`"))
    }
}

/// Pairwise preference label: `[1, 0]` prefers the first image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preference {
    First,
    Second,
}

impl Preference {
    pub fn as_vector(self) -> [u8; 2] {
        match self {
            Preference::First => [1, 0],
            Preference::Second => [0, 1],
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Preference::First => Preference::Second,
            Preference::Second => Preference::First,
        }
    }

    /// Label for values `a` and `b` under "higher is better".
    pub fn from_values(a: f64, b: f64) -> Option<Self> {
        if a > b {
            Some(Preference::First)
        } else if b > a {
            Some(Preference::Second)
        } else {
            None
        }
    }
}

impl TryFrom<[u8; 2]> for Preference {
    type Error = String;

    fn try_from(v: [u8; 2]) -> std::result::Result<Self, String> {
        match v {
            [1, 0] => Ok(Preference::First),
            [0, 1] => Ok(Preference::Second),
            _ => Err(format!("label {v:?} is neither [1,0] nor [0,1]")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub dataset_id: String,
    pub id: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativityPair {
    pub img_a: ImageRef,
    pub img_b: ImageRef,
    pub label: Preference,
    pub target_metric: Metric,
}

impl RelativityPair {
    pub fn swapped(&self) -> Self {
        Self {
            img_a: self.img_b.clone(),
            img_b: self.img_a.clone(),
            label: self.label.flipped(),
            target_metric: self.target_metric,
        }
    }
}

/// One conversation: exactly what the serialized text carries.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DialogueSample {
    task: TaskIdentifier,
    images: Vec<String>,
    instruction: String,
    answer: String,
}

const RESERVED: [&str; 4] = ["<img1>", "</img1>", "<img2>", "</img2>"];

impl DialogueSample {
    pub fn new(task: TaskIdentifier, images: Vec<String>, instruction: impl Into<String>, answer: impl Into<String>) -> Result<Self> {
        let (instruction, answer) = (instruction.into(), answer.into());
        if images.len() != task.image_count() {
            return Err(CorpusError::InvalidSample(format!(
                "{task} needs {} image(s), got {}",
                task.image_count(),
                images.len()
            )));
        }
        if instruction.is_empty() || answer.is_empty() {
            return Err(CorpusError::InvalidSample("instruction and answer must be non-empty".into()));
        }
        for img in &images {
            if img.is_empty() || img.contains(['\n', '\r', '<', '>']) {
                return Err(CorpusError::InvalidSample(format!("image content `{img}` is empty or contains reserved characters")));
            }
        }
        if instruction.contains(['\n', '\r']) || answer.contains(['\n', '\r']) {
            return Err(CorpusError::InvalidSample("instruction and answer must be single lines".into()));
        }
        if RESERVED.iter().any(|t| instruction.contains(t)) {
            return Err(CorpusError::InvalidSample("instruction contains an image tag".into()));
        }
        Ok(Self {
            task,
            images,
            instruction,
            answer,
        })
    }

    pub fn task(&self) -> TaskIdentifier {
        self.task
    }

    pub fn images(&self) -> &[String] {
        &self.images
    }

    pub fn instruction(&self) -> &str {
        &self.instruction
    }

    pub fn answer(&self) -> &str {
        &self.answer
    }
}

/// Five equal-width quality bands on `[0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Band {
    Bad,
    Poor,
    Fair,
    Good,
    Excellent,
}

impl Band {
    pub const ALL: [Band; 5] = [Band::Bad, Band::Poor, Band::Fair, Band::Good, Band::Excellent];

    /// `[0,20)` bad, `[20,40)` poor, `[40,60)` fair, `[60,80)` good, `[80,100]` excellent.
    pub fn of(v: f64) -> Band {
        Band::ALL[((v / 20.0).floor().max(0.0) as usize).min(4)]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Word used for overall quality.
    pub fn quality_word(self) -> &'static str {
        ["bad", "poor", "fair", "good", "excellent"][self.index()]
    }

    /// Word used for attribute levels.
    pub fn level_word(self) -> &'static str {
        ["very low", "low", "moderate", "high", "very high"][self.index()]
    }

    pub fn midpoint(self) -> f64 {
        self.index() as f64 * 20.0 + 10.0
    }
}

/// Machine-readable target behind an answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GroundTruth {
    Score(f64),
    Preference(Preference),
    Bands { overall: Band, attributes: BTreeMap<Attribute, Band> },
    Authenticity(bool),
}

impl GroundTruth {
    /// Compact sidecar rendering.
    pub fn render(&self) -> String {
        match self {
            GroundTruth::Score(v) => format!("score={v}"),
            GroundTruth::Preference(p) => {
                let [a, b] = p.as_vector();
                format!("label={a},{b}")
            }
            GroundTruth::Bands { overall, attributes } => {
                let mut s = format!("bands=overall:{}", overall.quality_word());
                for (a, b) in attributes {
                    s.push_str(&format!(",{a}:{}", b.level_word()));
                }
                s
            }
            GroundTruth::Authenticity(y) => format!("auth={}", u8::from(*y)),
        }
    }
}

/// A sample together with the metadata written to the sidecar file.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub sample: DialogueSample,
    pub dataset_id: String,
    pub image_ids: Vec<String>,
    pub ground_truth: GroundTruth,
}

const PAIR_STREAM: u64 = 0x5041_4952;
const INSTRUCTION_STREAM: u64 = 0x494E_5354;

/// Samples `count` ordered pairs from the train split of one dataset.
///
/// Both images come from the same dataset; pairs whose metric values tie are
/// redrawn, so labels are always strict.
pub fn build_relativity_pairs(manifest: &DatasetManifest, count: usize, metric: Metric, seed: u64) -> Result<Vec<RelativityPair>> {
    if count == 0 {
        return Err(CorpusError::ZeroCount);
    }
    if !manifest.is_normalized() {
        return Err(CorpusError::NotNormalized(manifest.name.clone()));
    }
    let mut train: Vec<(&crate::ingest::AnnotatedImage, f64)> = Vec::new();
    for r in manifest.records.iter().filter(|r| r.split == Split::Train) {
        let v = r.metric_value(metric).ok_or_else(|| CorpusError::MissingMetric {
            id: r.id.clone(),
            metric,
        })?;
        train.push((r, v));
    }
    if train.len() < 2 {
        return Err(CorpusError::TooFewRecords {
            dataset: manifest.name.clone(),
            metric,
            found: train.len(),
        });
    }
    // Sorted by id so the draw does not depend on file order.
    train.sort_by(|a, b| a.0.id.cmp(&b.0.id));
    if train.iter().all(|(_, v)| *v == train[0].1) {
        return Err(CorpusError::NoOrderedPair(manifest.name.clone()));
    }

    let mut rng = seed::rng(seed, &[PAIR_STREAM, seed::hash_str(&manifest.name), seed::hash_str(metric.name())]);
    let n = train.len();
    let mut pairs = Vec::with_capacity(count);
    while pairs.len() < count {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        let ((ra, va), (rb, vb)) = (train[i], train[j]);
        let Some(label) = Preference::from_values(va, vb) else {
            continue;
        };
        pairs.push(RelativityPair {
            img_a: image_ref(ra),
            img_b: image_ref(rb),
            label,
            target_metric: metric,
        });
    }
    Ok(pairs)
}

fn image_ref(r: &crate::ingest::AnnotatedImage) -> ImageRef {
    ImageRef {
        dataset_id: r.dataset_id.clone(),
        id: r.id.clone(),
        path: r.image_path.clone(),
    }
}

fn metric_phrase(metric: Metric) -> &'static str {
    match metric {
        Metric::Mos => "overall quality",
        Metric::Attr(a) => a.name(),
    }
}

const QUANT_INSTRUCTIONS: [&str; 8] = [
    "Rate the {m} of this image on a scale from 0 to 100.",
    "How would you score the {m} of this picture out of 100?",
    "Give a numerical {m} score between 0 and 100 for the image.",
    "Please assess the {m} of this photo and output a score from 0 to 100.",
    "What {m} score, from 0 to 100, does this image deserve?",
    "Estimate the {m} of the given image as a number in [0, 100].",
    "Quantify the {m} of this image with a score between 0 and 100.",
    "On a 0-100 scale, how would you rate the {m} of this image?",
];

const RELATIVITY_INSTRUCTIONS: [&str; 8] = [
    "Which of the two images has better {m}?",
    "Compare the two images: which one shows higher {m}?",
    "Between the first and the second image, which has the better {m}?",
    "Look at both images and tell me which one is superior in {m}.",
    "Rank these two images by {m}. Which comes first?",
    "Which image would a viewer prefer in terms of {m}?",
    "Judge the {m} of both images and pick the better one.",
    "Of the two pictures, which one has the higher {m}?",
];

const QUALITATIVE_INSTRUCTIONS: [&str; 8] = [
    "Describe the visual quality of this image.",
    "How does this image look in terms of quality? Please explain.",
    "Give a qualitative assessment of this picture's quality.",
    "Evaluate the perceptual quality of the image in words.",
    "What can you say about the quality of this photo?",
    "Please comment on the visual quality of the given image.",
    "Assess this image's quality and describe its attributes.",
    "Explain how good or bad this image looks.",
];

const AUTHENTICITY_INSTRUCTIONS: [&str; 8] = [
    "Is this image AI-generated or photographic?",
    "Was this picture taken by a camera or produced by a generative model?",
    "Tell me whether the given image is a real photograph or AI-generated.",
    "Determine the authenticity of this image.",
    "Is the image photographic, or was it generated by AI?",
    "Please judge whether this image is AI-generated.",
    "Decide if this image is a photograph or a synthetic AI creation.",
    "Could this image have been generated by an AI model?",
];

fn instruction_pool(task: TaskIdentifier) -> &'static [&'static str; 8] {
    match task {
        TaskIdentifier::IqaQuant => &QUANT_INSTRUCTIONS,
        TaskIdentifier::Relativity => &RELATIVITY_INSTRUCTIONS,
        TaskIdentifier::IqaDes => &QUALITATIVE_INSTRUCTIONS,
        TaskIdentifier::Authenticity => &AUTHENTICITY_INSTRUCTIONS,
    }
}

/// Instruction for sample `index` of a corpus, drawn from the task's pool.
pub fn pick_instruction(task: TaskIdentifier, metric: Metric, seed: u64, index: usize) -> String {
    let pool = instruction_pool(task);
    let k = seed::rng(seed, &[INSTRUCTION_STREAM, task as u64, index as u64]).random_range(0..pool.len());
    pool[k].replace("{m}", metric_phrase(metric))
}

pub fn quantitative_answer(metric: Metric, value: f64) -> String {
    format!("The {} score of this image is {}.", metric_phrase(metric), format_fixed(value, 1))
}

pub fn relativity_answer(metric: Metric, label: Preference) -> String {
    let which = match label {
        Preference::First => "first",
        Preference::Second => "second",
    };
    format!("The {which} image has better {} than the other one.", metric_phrase(metric))
}

pub fn qualitative_answer(overall: Band, attributes: &BTreeMap<Attribute, Band>) -> String {
    let mut s = format!("Overall, the quality of this image is {}.", overall.quality_word());
    for (a, b) in attributes {
        s.push_str(&format!(" Its {a} level is {}.", b.level_word()));
    }
    s
}

pub fn authenticity_answer(photographic: bool) -> String {
    if photographic {
        "This is a photographic image captured by a camera.".to_string()
    } else {
        "This image is AI-generated.".to_string()
    }
}

fn train_records(manifest: &DatasetManifest) -> Result<Vec<&crate::ingest::AnnotatedImage>> {
    if !manifest.is_normalized() {
        return Err(CorpusError::NotNormalized(manifest.name.clone()));
    }
    Ok(manifest.train_records().collect())
}

/// Relativity pairs rendered as two-image dialogue samples.
pub fn relativity_samples(pairs: &[RelativityPair], seed: u64) -> Result<Vec<CorpusEntry>> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let sample = DialogueSample::new(
                TaskIdentifier::Relativity,
                vec![p.img_a.path.clone(), p.img_b.path.clone()],
                pick_instruction(TaskIdentifier::Relativity, p.target_metric, seed, i),
                relativity_answer(p.target_metric, p.label),
            )?;
            Ok(CorpusEntry {
                sample,
                dataset_id: p.img_a.dataset_id.clone(),
                image_ids: vec![p.img_a.id.clone(), p.img_b.id.clone()],
                ground_truth: GroundTruth::Preference(p.label),
            })
        })
        .collect()
}

/// One `<IQA_QUANT>` sample per train record with the normalized metric as target.
pub fn build_quantitative_samples(manifest: &DatasetManifest, metric: Metric, seed: u64) -> Result<Vec<CorpusEntry>> {
    train_records(manifest)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let v = r.metric_value(metric).ok_or_else(|| CorpusError::MissingMetric {
                id: r.id.clone(),
                metric,
            })?;
            let sample = DialogueSample::new(
                TaskIdentifier::IqaQuant,
                vec![r.image_path.clone()],
                pick_instruction(TaskIdentifier::IqaQuant, metric, seed, i),
                quantitative_answer(metric, v),
            )?;
            Ok(CorpusEntry {
                sample,
                dataset_id: r.dataset_id.clone(),
                image_ids: vec![r.id.clone()],
                ground_truth: GroundTruth::Score(v),
            })
        })
        .collect()
}

/// One `<IQA_DES>` sample per train record describing the quality bands of
/// MOS and every available attribute.
pub fn build_qualitative_samples(manifest: &DatasetManifest, seed: u64) -> Result<Vec<CorpusEntry>> {
    train_records(manifest)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let overall = Band::of(r.mos.unwrap_or_default());
            let attributes: BTreeMap<Attribute, Band> = r.attributes.iter().map(|(&a, &v)| (a, Band::of(v))).collect();
            let sample = DialogueSample::new(
                TaskIdentifier::IqaDes,
                vec![r.image_path.clone()],
                pick_instruction(TaskIdentifier::IqaDes, Metric::Mos, seed, i),
                qualitative_answer(overall, &attributes),
            )?;
            Ok(CorpusEntry {
                sample,
                dataset_id: r.dataset_id.clone(),
                image_ids: vec![r.id.clone()],
                ground_truth: GroundTruth::Bands { overall, attributes },
            })
        })
        .collect()
}

/// One `<AUTHENTICITY>` sample per train record. Records in an unassigned
/// split are included too when the manifest has not been split.
pub fn build_authenticity_samples(manifest: &DatasetManifest, seed: u64) -> Result<Vec<CorpusEntry>> {
    let any_split = manifest.records.iter().any(|r| r.split != Split::Unassigned);
    manifest
        .records
        .iter()
        .filter(|r| !any_split || r.split == Split::Train)
        .enumerate()
        .map(|(i, r)| {
            let y = r.authenticity.ok_or_else(|| CorpusError::MissingAuthenticity(r.id.clone()))?;
            let sample = DialogueSample::new(
                TaskIdentifier::Authenticity,
                vec![r.image_path.clone()],
                pick_instruction(TaskIdentifier::Authenticity, Metric::Mos, seed, i),
                authenticity_answer(y),
            )?;
            Ok(CorpusEntry {
                sample,
                dataset_id: r.dataset_id.clone(),
                image_ids: vec![r.id.clone()],
                ground_truth: GroundTruth::Authenticity(y),
            })
        })
        .collect()
}

/// Byte-exact unified conversation text, ending in a single newline.
pub fn serialize_dialogue(sample: &DialogueSample) -> String {
    let mut s = String::from("Human: ");
    for (i, img) in sample.images.iter().enumerate() {
        let n = i + 1;
        s.push_str(&format!("<img{n}>{img}</img{n}>"));
    }
    s.push_str(sample.task.token());
    s.push_str(&sample.instruction);
    s.push_str("\nAssistant: ");
    s.push_str(&sample.answer);
    s.push('\n');
    s
}

/// Inverse of [`serialize_dialogue`]. Errors carry the byte offset of the
/// offending position.
pub fn parse_dialogue(text: &str) -> Result<DialogueSample> {
    let mut pos = expect(text, 0, "Human: ")?;
    let (img1, next) = image_block(text, pos, 1)?;
    pos = next;
    let mut images = vec![img1];
    if text[pos..].starts_with("<img2>") {
        let (img2, next) = image_block(text, pos, 2)?;
        images.push(img2);
        pos = next;
    } else if text[pos..].starts_with("</img") || text[pos..].starts_with("<img") {
        return Err(CorpusError::MalformedTag {
            offset: pos,
            message: "unexpected image tag".into(),
        });
    }

    if !text[pos..].starts_with('<') {
        return Err(CorpusError::Malformed {
            offset: pos,
            message: "expected a task identifier".into(),
        });
    }
    let close = text[pos..].find('>').ok_or_else(|| CorpusError::Malformed {
        offset: pos,
        message: "unterminated task identifier".into(),
    })?;
    let token = &text[pos..pos + close + 1];
    let task = match (token, images.len()) {
        ("<IQA_QUANT>", 2) => TaskIdentifier::Relativity,
        ("<IQA_QUANT>", _) => TaskIdentifier::IqaQuant,
        ("<IQA_DES>", _) => TaskIdentifier::IqaDes,
        ("<AUTHENTICITY>", _) => TaskIdentifier::Authenticity,
        _ => {
            return Err(CorpusError::UnknownTask {
                offset: pos,
                token: token.to_string(),
            })
        }
    };
    pos += token.len();

    let nl = text[pos..].find('\n').ok_or(CorpusError::MissingAssistant { offset: text.len() })? + pos;
    let instruction = &text[pos..nl];
    pos = nl + 1;
    if !text[pos..].starts_with("Assistant: ") {
        return Err(CorpusError::MissingAssistant { offset: pos });
    }
    pos += "Assistant: ".len();
    let end = text[pos..].find('\n').map(|i| i + pos).ok_or_else(|| CorpusError::Malformed {
        offset: text.len(),
        message: "missing trailing newline".into(),
    })?;
    if end + 1 != text.len() {
        return Err(CorpusError::Malformed {
            offset: end + 1,
            message: "trailing content after the answer".into(),
        });
    }
    let answer = &text[pos..end];
    DialogueSample::new(task, images, instruction, answer).map_err(|e| CorpusError::Malformed {
        offset: 0,
        message: e.to_string(),
    })
}

fn expect(text: &str, pos: usize, lit: &str) -> Result<usize> {
    if text[pos..].starts_with(lit) {
        Ok(pos + lit.len())
    } else {
        Err(CorpusError::Malformed {
            offset: pos,
            message: format!("expected `{lit}`"),
        })
    }
}

fn image_block(text: &str, pos: usize, n: usize) -> Result<(String, usize)> {
    let open = format!("<img{n}>");
    let close = format!("</img{n}>");
    if !text[pos..].starts_with(&open) {
        return Err(CorpusError::MalformedTag {
            offset: pos,
            message: format!("expected `{open}`"),
        });
    }
    let start = pos + open.len();
    let line_end = text[start..].find('\n').map_or(text.len(), |i| i + start);
    let end = text[start..line_end].find(&close).map(|i| i + start).ok_or_else(|| CorpusError::MalformedTag {
        offset: start,
        message: format!("missing `{close}`"),
    })?;
    let content = &text[start..end];
    if let Some(i) = content.find(['<', '>']) {
        return Err(CorpusError::MalformedTag {
            offset: start + i,
            message: "tag inside image content".into(),
        });
    }
    Ok((content.to_string(), end + close.len()))
}

/// Corpus file text: serialized samples separated by blank lines.
pub fn write_corpus(entries: &[CorpusEntry]) -> String {
    entries.iter().map(|e| serialize_dialogue(&e.sample)).collect::<Vec<_>>().join("\n")
}

/// Splits corpus text back into samples.
pub fn parse_corpus(text: &str) -> Result<Vec<DialogueSample>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for chunk in text.split("\n\n") {
        let record = format!("{chunk}\n");
        let record = if offset + chunk.len() == text.len() { chunk.to_string() } else { record };
        if !record.trim().is_empty() {
            out.push(parse_dialogue(&record).map_err(|e| shift(e, offset))?);
        }
        offset += chunk.len() + 2;
    }
    Ok(out)
}

fn shift(e: CorpusError, by: usize) -> CorpusError {
    match e {
        CorpusError::UnknownTask { offset, token } => CorpusError::UnknownTask { offset: offset + by, token },
        CorpusError::MissingAssistant { offset } => CorpusError::MissingAssistant { offset: offset + by },
        CorpusError::MalformedTag { offset, message } => CorpusError::MalformedTag { offset: offset + by, message },
        CorpusError::Malformed { offset, message } => CorpusError::Malformed { offset: offset + by, message },
        other => other,
    }
}

/// Sidecar: `index<TAB>dataset<TAB>image ids<TAB>ground truth`, with a header.
pub fn write_sidecar(entries: &[CorpusEntry]) -> String {
    let mut s = String::from("index\tdataset\timages\tground_truth\n");
    for (i, e) in entries.iter().enumerate() {
        s.push_str(&format!("{i}\t{}\t{}\t{}\n", e.dataset_id, e.image_ids.join(","), e.ground_truth.render()));
    }
    s
}

/// Outcome of reading a score out of free text.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParsedScore {
    Score(f64),
    Unparseable,
}

impl ParsedScore {
    pub fn value(self) -> Option<f64> {
        match self {
            ParsedScore::Score(v) => Some(v),
            ParsedScore::Unparseable => None,
        }
    }
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d+(?:\.\d+)?").expect("valid regex"))
}

fn cue_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(?:score|rate|rating|quality)").expect("valid regex"))
}

fn in_range_literals(text: &str) -> impl Iterator<Item = (usize, f64)> + '_ {
    number_re().find_iter(text).filter_map(|m| {
        let v: f64 = m.as_str().parse().ok()?;
        (0.0..=100.0).contains(&v).then_some((m.start(), v))
    })
}

/// Extracts a `[0, 100]` score from a model response.
///
/// Prefers the first in-range literal after the first cue word (`score`,
/// `rate`, `rating`, `quality`); otherwise the first in-range literal
/// anywhere.
pub fn parse_score_from_response(text: &str) -> ParsedScore {
    if let Some(cue) = cue_re().find(text) {
        if let Some((_, v)) = in_range_literals(text).find(|(start, _)| *start >= cue.end()) {
            return ParsedScore::Score(v);
        }
    }
    in_range_literals(text)
        .next()
        .map_or(ParsedScore::Unparseable, |(_, v)| ParsedScore::Score(v))
}

/// Re-reads an answer and checks that it encodes `ground_truth`.
pub fn answer_matches(entry: &CorpusEntry) -> bool {
    let answer = entry.sample.answer();
    match &entry.ground_truth {
        GroundTruth::Score(v) => parse_score_from_response(answer)
            .value()
            .is_some_and(|p| format_fixed(p, 1) == format_fixed(*v, 1)),
        GroundTruth::Preference(p) => {
            let first = answer.contains("The first image");
            let second = answer.contains("The second image");
            first != second && first == (*p == Preference::First)
        }
        GroundTruth::Bands { overall, attributes } => {
            answer.contains(&format!("quality of this image is {}.", overall.quality_word()))
                && attributes
                    .iter()
                    .all(|(a, b)| answer.contains(&format!("Its {a} level is {}.", b.level_word())))
        }
        GroundTruth::Authenticity(y) => answer.contains("photographic") == *y && answer.contains("AI-generated") != *y,
    }
}
