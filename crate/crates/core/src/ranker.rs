//! Feature-based scorer and its staged training loop.
//!
//! The model is a one-hidden-layer tanh network with two heads:
//! a quality score `100 * sigmoid(z_score)` and an authenticity probability
//! `sigmoid(z_auth)`. Pairwise losses work on the pre-sigmoid `z_score`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::corpus::{Preference, TaskIdentifier};
use crate::indicators::{FeatureVector, FEATURE_LEN};
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("hidden size must be at least 1")]
    ZeroHidden,
    #[error("invalid stage spec: {0}")]
    InvalidSpec(String),
    #[error("invalid curriculum plan: {0}")]
    InvalidPlan(String),
    #[error("no training items for task {task} in datasets {datasets:?}")]
    EmptyPool { task: TaskIdentifier, datasets: Vec<String> },
    #[error("target {0} lies outside [0, 100]")]
    TargetOutOfRange(f64),
    #[error("non-finite parameter after {stage} step {step}")]
    NonFinite { stage: StageId, step: usize },
    #[error("task {0} has no trainable loss")]
    UnsupportedTask(TaskIdentifier),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

pub const DEFAULT_HIDDEN: usize = 16;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Network weights. `w1` is stored input-major: `w1[i * hidden + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w_score: Vec<f64>,
    pub b_score: f64,
    pub w_auth: Vec<f64>,
    pub b_auth: f64,
}

impl ModelParams {
    pub fn zeros(hidden: usize) -> Result<Self> {
        if hidden == 0 {
            return Err(TrainError::ZeroHidden);
        }
        Ok(Self {
            hidden,
            w1: vec![0.0; FEATURE_LEN * hidden],
            b1: vec![0.0; hidden],
            w_score: vec![0.0; hidden],
            b_score: 0.0,
            w_auth: vec![0.0; hidden],
            b_auth: 0.0,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn len(&self) -> usize {
        Self::len_for(self.hidden)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn len_for(hidden: usize) -> usize {
        FEATURE_LEN * hidden + 3 * hidden + 2
    }

    /// Values in declared order: w1, b1, w_score, b_score, w_auth, b_auth.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w_score);
        v.push(self.b_score);
        v.extend_from_slice(&self.w_auth);
        v.push(self.b_auth);
        v
    }

    pub fn from_flat(hidden: usize, v: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(hidden)?;
        if v.len() != p.len() {
            return Err(TrainError::Checkpoint(format!("expected {} values, got {}", p.len(), v.len())));
        }
        let h = hidden;
        let (w1, rest) = v.split_at(FEATURE_LEN * h);
        let (b1, rest) = rest.split_at(h);
        let (ws, rest) = rest.split_at(h);
        let (bs, rest) = rest.split_at(1);
        let (wa, ba) = rest.split_at(h);
        p.w1.copy_from_slice(w1);
        p.b1.copy_from_slice(b1);
        p.w_score.copy_from_slice(ws);
        p.b_score = bs[0];
        p.w_auth.copy_from_slice(wa);
        p.b_auth = ba[0];
        Ok(p)
    }

    pub fn is_finite(&self) -> bool {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w_score)
            .chain(&self.w_auth)
            .chain([&self.b_score, &self.b_auth])
            .all(|v| v.is_finite())
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &ModelParams) {
        debug_assert_eq!(self.hidden, other.hidden);
        let axpy = |a: &mut [f64], b: &[f64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += alpha * y);
        axpy(&mut self.w1, &other.w1);
        axpy(&mut self.b1, &other.b1);
        axpy(&mut self.w_score, &other.w_score);
        axpy(&mut self.w_auth, &other.w_auth);
        self.b_score += alpha * other.b_score;
        self.b_auth += alpha * other.b_auth;
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(hidden_size: usize, seed: u64) -> Result<ModelParams> {
    let mut p = ModelParams::zeros(hidden_size)?;
    let mut rng = seed::rng(seed, &[0x494E_4954]);
    let a1 = glorot_bound(FEATURE_LEN, hidden_size);
    let a2 = glorot_bound(hidden_size, 1);
    let u1 = Uniform::new(-a1, a1).expect("positive bound");
    let u2 = Uniform::new(-a2, a2).expect("positive bound");
    p.w1.iter_mut().for_each(|w| *w = u1.sample(&mut rng));
    p.w_score.iter_mut().for_each(|w| *w = u2.sample(&mut rng));
    p.w_auth.iter_mut().for_each(|w| *w = u2.sample(&mut rng));
    Ok(p)
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

struct Forward {
    h: Vec<f64>,
    z_score: f64,
    z_auth: f64,
}

fn forward(p: &ModelParams, f: &FeatureVector) -> Forward {
    let hn = p.hidden;
    let mut pre = p.b1.clone();
    for (i, x) in f.0.iter().enumerate() {
        let row = &p.w1[i * hn..(i + 1) * hn];
        pre.iter_mut().zip(row).for_each(|(a, w)| *a += x * w);
    }
    let h: Vec<f64> = pre.into_iter().map(f64::tanh).collect();
    let dot = |w: &[f64]| w.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
    let z_score = dot(&p.w_score) + p.b_score;
    let z_auth = dot(&p.w_auth) + p.b_auth;
    Forward { h, z_score, z_auth }
}

#[derive(Clone, Copy)]
enum Head {
    Score,
    Auth,
}

/// Adds `dz * d(z_head)/d(params)` to `g`.
fn backprop(p: &ModelParams, f: &FeatureVector, fw: &Forward, head: Head, dz: f64, g: &mut ModelParams) {
    let hn = p.hidden;
    let (w_out, gw, gb) = match head {
        Head::Score => (&p.w_score, &mut g.w_score, &mut g.b_score),
        Head::Auth => (&p.w_auth, &mut g.w_auth, &mut g.b_auth),
    };
    *gb += dz;
    let mut dpre = vec![0.0; hn];
    for j in 0..hn {
        gw[j] += dz * fw.h[j];
        dpre[j] = dz * w_out[j] * (1.0 - fw.h[j] * fw.h[j]);
    }
    g.b1.iter_mut().zip(&dpre).for_each(|(b, d)| *b += d);
    for (i, x) in f.0.iter().enumerate() {
        let row = &mut g.w1[i * hn..(i + 1) * hn];
        row.iter_mut().zip(&dpre).for_each(|(w, d)| *w += x * d);
    }
}

/// Pre-sigmoid score logit.
pub fn score_logit(p: &ModelParams, f: &FeatureVector) -> f64 {
    forward(p, f).z_score
}

/// Quality score in `(0, 100)`.
pub fn score(p: &ModelParams, f: &FeatureVector) -> f64 {
    100.0 * sigmoid(score_logit(p, f))
}

/// Probability that the image is photographic.
pub fn authenticity_probability(p: &ModelParams, f: &FeatureVector) -> f64 {
    sigmoid(forward(p, f).z_auth)
}

/// Bradley–Terry loss `-ln sigmoid(z_winner - z_loser)` and its gradient.
pub fn pairwise_loss_grad(p: &ModelParams, fa: &FeatureVector, fb: &FeatureVector, label: Preference) -> (f64, ModelParams) {
    let mut g = ModelParams::zeros(p.hidden).expect("hidden >= 1");
    let loss = pairwise_accumulate(p, fa, fb, label, &mut g);
    (loss, g)
}

fn pairwise_accumulate(p: &ModelParams, fa: &FeatureVector, fb: &FeatureVector, label: Preference, g: &mut ModelParams) -> f64 {
    let (wa, wb) = (forward(p, fa), forward(p, fb));
    let sign = match label {
        Preference::First => 1.0,
        Preference::Second => -1.0,
    };
    let d = sign * (wa.z_score - wb.z_score);
    let loss = softplus(-d);
    // dL/dd = -sigmoid(-d)
    let dd = -sigmoid(-d);
    backprop(p, fa, &wa, Head::Score, dd * sign, g);
    backprop(p, fb, &wb, Head::Score, -dd * sign, g);
    loss
}

/// `((score - target) / 100)^2` and its gradient.
pub fn absolute_loss_grad(p: &ModelParams, f: &FeatureVector, target: f64) -> Result<(f64, ModelParams)> {
    if !(0.0..=100.0).contains(&target) {
        return Err(TrainError::TargetOutOfRange(target));
    }
    let mut g = ModelParams::zeros(p.hidden)?;
    let loss = absolute_accumulate(p, f, target, &mut g);
    Ok((loss, g))
}

fn absolute_accumulate(p: &ModelParams, f: &FeatureVector, target: f64, g: &mut ModelParams) -> f64 {
    let fw = forward(p, f);
    let s = sigmoid(fw.z_score);
    let r = s - target / 100.0;
    backprop(p, f, &fw, Head::Score, 2.0 * r * s * (1.0 - s), g);
    r * r
}

/// Binary cross-entropy on the authenticity head and its gradient.
pub fn authenticity_loss_grad(p: &ModelParams, f: &FeatureVector, photographic: bool) -> (f64, ModelParams) {
    let mut g = ModelParams::zeros(p.hidden).expect("hidden >= 1");
    let loss = authenticity_accumulate(p, f, photographic, &mut g);
    (loss, g)
}

fn authenticity_accumulate(p: &ModelParams, f: &FeatureVector, photographic: bool, g: &mut ModelParams) -> f64 {
    let fw = forward(p, f);
    let y = if photographic { 1.0 } else { 0.0 };
    let z = fw.z_auth;
    backprop(p, f, &fw, Head::Auth, sigmoid(z) - y, g);
    softplus(z) - y * z
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageId {
    Relativity,
    Multifunctional,
    Refinement,
}

impl StageId {
    pub fn name(self) -> &'static str {
        match self {
            StageId::Relativity => "relativity",
            StageId::Multifunctional => "multifunctional",
            StageId::Refinement => "refinement",
        }
    }
}

impl fmt::Display for StageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StageId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "relativity" => Ok(StageId::Relativity),
            "multifunctional" => Ok(StageId::Multifunctional),
            "refinement" => Ok(StageId::Refinement),
            _ => Err(format!("unknown stage `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub stage_id: StageId,
    pub tasks: BTreeSet<TaskIdentifier>,
    pub dataset_ids: Vec<String>,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl StageSpec {
    /// A learning rate of exactly zero is accepted and leaves the
    /// parameters unchanged.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::InvalidSpec(format!("{} stage: {m}", self.stage_id)));
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning rate must be finite and non-negative");
        }
        if self.tasks.is_empty() {
            return bad("task set is empty");
        }
        if self.dataset_ids.is_empty() {
            return bad("dataset list is empty");
        }
        Ok(())
    }
}

/// Ordered stages plus the dataset used for absolute calibration.
///
/// Stages appear at most once each, in the order relativity,
/// multifunctional, refinement; a plan may omit any of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumPlan {
    stages: Vec<StageSpec>,
    anchor_dataset: String,
}

impl CurriculumPlan {
    pub fn new(stages: Vec<StageSpec>, anchor_dataset: impl Into<String>) -> Result<Self> {
        let plan = Self {
            stages,
            anchor_dataset: anchor_dataset.into(),
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(TrainError::InvalidPlan("no stages".into()));
        }
        for s in &self.stages {
            s.validate()?;
        }
        for w in self.stages.windows(2) {
            if w[0].stage_id >= w[1].stage_id {
                return Err(TrainError::InvalidPlan(format!(
                    "stage {} may not follow {}",
                    w[1].stage_id, w[0].stage_id
                )));
            }
        }
        if let Some(m) = self.stages.iter().find(|s| s.stage_id == StageId::Multifunctional) {
            if !m.dataset_ids.contains(&self.anchor_dataset) {
                return Err(TrainError::InvalidPlan(format!(
                    "anchor `{}` is not among the multifunctional datasets",
                    self.anchor_dataset
                )));
            }
        }
        Ok(())
    }

    pub fn stages(&self) -> &[StageSpec] {
        &self.stages
    }

    pub fn anchor_dataset(&self) -> &str {
        &self.anchor_dataset
    }
}

/// One training example.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainItem {
    Pair {
        a: FeatureVector,
        b: FeatureVector,
        label: Preference,
        dataset_id: String,
    },
    Absolute {
        features: FeatureVector,
        target: f64,
        dataset_id: String,
    },
    Authenticity {
        features: FeatureVector,
        photographic: bool,
        dataset_id: String,
    },
}

impl TrainItem {
    pub fn dataset_id(&self) -> &str {
        match self {
            TrainItem::Pair { dataset_id, .. } | TrainItem::Absolute { dataset_id, .. } | TrainItem::Authenticity { dataset_id, .. } => dataset_id,
        }
    }

    fn accumulate(&self, p: &ModelParams, g: &mut ModelParams) -> f64 {
        match self {
            TrainItem::Pair { a, b, label, .. } => pairwise_accumulate(p, a, b, *label, g),
            TrainItem::Absolute { features, target, .. } => absolute_accumulate(p, features, *target, g),
            TrainItem::Authenticity { features, photographic, .. } => authenticity_accumulate(p, features, *photographic, g),
        }
    }

    /// Loss under `p`, without gradients.
    pub fn loss(&self, p: &ModelParams) -> f64 {
        let mut scratch = ModelParams::zeros(p.hidden).expect("hidden >= 1");
        self.accumulate(p, &mut scratch)
    }

    fn fits(&self, task: TaskIdentifier) -> bool {
        matches!(
            (self, task),
            (TrainItem::Pair { .. }, TaskIdentifier::Relativity)
                | (TrainItem::Absolute { .. }, TaskIdentifier::IqaQuant | TaskIdentifier::IqaDes)
                | (TrainItem::Authenticity { .. }, TaskIdentifier::Authenticity)
        )
    }
}

/// Training items keyed by task.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskPools {
    pools: BTreeMap<TaskIdentifier, Vec<TrainItem>>,
}

impl TaskPools {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, task: TaskIdentifier, item: TrainItem) -> Result<()> {
        if !item.fits(task) {
            return Err(TrainError::InvalidSpec(format!("item kind does not match task {task}")));
        }
        self.pools.entry(task).or_default().push(item);
        Ok(())
    }

    pub fn get(&self, task: TaskIdentifier) -> &[TrainItem] {
        self.pools.get(&task).map_or(&[], Vec::as_slice)
    }

    pub fn tasks(&self) -> impl Iterator<Item = TaskIdentifier> + '_ {
        self.pools.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.pools.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Items sharing one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<'a> {
    pub task: TaskIdentifier,
    pub items: Vec<&'a TrainItem>,
}

const ROTATION_STREAM: u64 = 0x524F_5441;
const BATCH_STREAM: u64 = 0x4241_5443;

/// Per-task indices of items whose dataset is listed in the spec.
struct Eligible<'a> {
    pools: &'a TaskPools,
    tasks: Vec<(TaskIdentifier, Vec<usize>)>,
    offset: usize,
    spec_seed: u64,
    batch_size: usize,
}

impl<'a> Eligible<'a> {
    fn new(pools: &'a TaskPools, spec: &StageSpec) -> Result<Self> {
        let datasets: BTreeSet<&str> = spec.dataset_ids.iter().map(String::as_str).collect();
        let mut tasks = Vec::new();
        for &task in &spec.tasks {
            let idx: Vec<usize> = pools
                .get(task)
                .iter()
                .enumerate()
                .filter(|(_, it)| datasets.contains(it.dataset_id()))
                .map(|(i, _)| i)
                .collect();
            if idx.is_empty() {
                return Err(TrainError::EmptyPool {
                    task,
                    datasets: spec.dataset_ids.clone(),
                });
            }
            tasks.push((task, idx));
        }
        let offset = (seed::derive(spec.seed, &[ROTATION_STREAM]) % tasks.len() as u64) as usize;
        Ok(Self {
            pools,
            tasks,
            offset,
            spec_seed: spec.seed,
            batch_size: spec.batch_size,
        })
    }

    fn batch(&self, step: usize) -> Batch<'a> {
        let (task, idx) = &self.tasks[(self.offset + step) % self.tasks.len()];
        let pool = self.pools.get(*task);
        let mut rng = seed::rng(self.spec_seed, &[BATCH_STREAM, step as u64]);
        let items = (0..self.batch_size).map(|_| &pool[idx[rng.random_range(0..idx.len())]]).collect();
        Batch { task: *task, items }
    }
}

/// The batch a stage draws at `step`: one task by seeded rotation, items
/// drawn with replacement from that task's pool restricted to the stage's
/// datasets.
pub fn sample_batch<'a>(pools: &'a TaskPools, spec: &StageSpec, step: usize) -> Result<Batch<'a>> {
    spec.validate()?;
    Ok(Eligible::new(pools, spec)?.batch(step))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub params: ModelParams,
    /// Mean batch loss before each update.
    pub loss_trace: Vec<f64>,
}

/// Plain gradient descent on per-batch mean gradients.
pub fn train_stage(params: &ModelParams, spec: &StageSpec, pools: &TaskPools) -> Result<StageOutcome> {
    spec.validate()?;
    let eligible = Eligible::new(pools, spec)?;
    let mut p = params.clone();
    let mut trace = Vec::with_capacity(spec.steps);
    let mut g = ModelParams::zeros(p.hidden)?;
    for step in 0..spec.steps {
        let batch = eligible.batch(step);
        g = ModelParams::zeros_like(&g);
        let mut loss = 0.0;
        for item in &batch.items {
            loss += item.accumulate(&p, &mut g);
        }
        let n = batch.items.len() as f64;
        p.add_scaled(-spec.learning_rate / n, &g);
        trace.push(loss / n);
        if !p.is_finite() {
            return Err(TrainError::NonFinite { stage: spec.stage_id, step });
        }
    }
    Ok(StageOutcome { params: p, loss_trace: trace })
}

impl ModelParams {
    fn zeros_like(other: &ModelParams) -> ModelParams {
        ModelParams::zeros(other.hidden).expect("hidden >= 1")
    }
}

/// Fraction of each task's eligible items kept for refinement.
pub const REFINEMENT_KEEP: f64 = 0.5;

/// The lowest-loss half of each task's eligible items under `params`
/// (ties broken by pool position).
pub fn curate(params: &ModelParams, spec: &StageSpec, pools: &TaskPools) -> Result<TaskPools> {
    let eligible = Eligible::new(pools, spec)?;
    let mut out = TaskPools::new();
    for (task, idx) in &eligible.tasks {
        let pool = pools.get(*task);
        let mut scored: Vec<(f64, usize)> = idx.iter().map(|&i| (pool[i].loss(params), i)).collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let keep = ((scored.len() as f64 * REFINEMENT_KEEP).ceil() as usize).max(1);
        let mut kept: Vec<usize> = scored[..keep].iter().map(|s| s.1).collect();
        kept.sort_unstable();
        for i in kept {
            out.push(*task, pool[i].clone())?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageCheckpoint {
    pub stage_id: StageId,
    pub params: ModelParams,
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumOutcome {
    pub params: ModelParams,
    pub checkpoints: Vec<StageCheckpoint>,
}

/// Runs the plan's stages in order from `initial`. Refinement trains on the
/// curated subset of its pools.
pub fn run_curriculum(plan: &CurriculumPlan, initial: &ModelParams, pools: &TaskPools) -> Result<CurriculumOutcome> {
    plan.validate()?;
    let mut p = initial.clone();
    let mut checkpoints = Vec::new();
    for spec in &plan.stages {
        let out = if spec.stage_id == StageId::Refinement {
            let curated = curate(&p, spec, pools)?;
            train_stage(&p, spec, &curated)?
        } else {
            train_stage(&p, spec, pools)?
        };
        p = out.params;
        checkpoints.push(StageCheckpoint {
            stage_id: spec.stage_id,
            params: p.clone(),
            loss_trace: out.loss_trace,
        });
    }
    Ok(CurriculumOutcome { params: p, checkpoints })
}

/// Preference between two images by logit comparison; exact ties go to the
/// lexicographically smaller id.
pub fn rank_pair(p: &ModelParams, a: (&str, &FeatureVector), b: (&str, &FeatureVector)) -> Preference {
    let (za, zb) = (score_logit(p, a.1), score_logit(p, b.1));
    if za > zb {
        Preference::First
    } else if zb > za {
        Preference::Second
    } else if a.0 <= b.0 {
        Preference::First
    } else {
        Preference::Second
    }
}

/// Preference from the difference of the two `(0, 100)` scores, with the
/// same tie rule as [`rank_pair`].
pub fn score_difference_pair(p: &ModelParams, a: (&str, &FeatureVector), b: (&str, &FeatureVector)) -> Preference {
    let (sa, sb) = (score(p, a.1), score(p, b.1));
    if sa > sb {
        Preference::First
    } else if sb > sa {
        Preference::Second
    } else if a.0 <= b.0 {
        Preference::First
    } else {
        Preference::Second
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictMode {
    Score,
    RankPair(Vec<(String, String)>),
    Authenticity,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    Scores(BTreeMap<String, f64>),
    Pairs(Vec<(String, String, Preference)>),
    Authenticity(BTreeMap<String, f64>),
}

/// Predictions over precomputed per-id features.
pub fn predict(p: &ModelParams, features: &BTreeMap<String, FeatureVector>, mode: &PredictMode) -> Result<Predictions> {
    let lookup = |id: &str| {
        features
            .get(id)
            .ok_or_else(|| TrainError::InvalidSpec(format!("no features for `{id}`")))
    };
    Ok(match mode {
        PredictMode::Score => Predictions::Scores(features.iter().map(|(id, f)| (id.clone(), score(p, f))).collect()),
        PredictMode::Authenticity => {
            Predictions::Authenticity(features.iter().map(|(id, f)| (id.clone(), authenticity_probability(p, f))).collect())
        }
        PredictMode::RankPair(pairs) => {
            let mut out = Vec::with_capacity(pairs.len());
            for (a, b) in pairs {
                let pref = rank_pair(p, (a, lookup(a)?), (b, lookup(b)?));
                out.push((a.clone(), b.clone(), pref));
            }
            Predictions::Pairs(out)
        }
    })
}

/// Metadata stored in a checkpoint header.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub stages: Vec<StageId>,
    pub seed: u64,
}

const CHECKPOINT_MAGIC: &str = "# iqa ranker checkpoint v1";

/// Text checkpoint: header lines then one value per line in declared order.
/// Values use shortest round-trip formatting, so reading back is bit-exact.
pub fn write_checkpoint(p: &ModelParams, meta: &CheckpointMeta) -> String {
    let stages: Vec<&str> = meta.stages.iter().map(|s| s.name()).collect();
    let flat = p.to_flat();
    let mut s = format!(
        "{CHECKPOINT_MAGIC}\nhidden_size={}\nstages={}\nseed={}\nvalues={}\n",
        p.hidden,
        stages.join(","),
        meta.seed,
        flat.len()
    );
    for v in flat {
        s.push_str(&format!("{v:e}\n"));
    }
    s
}

pub fn read_checkpoint(text: &str) -> Result<(ModelParams, CheckpointMeta)> {
    let err = |m: String| TrainError::Checkpoint(m);
    let mut lines = text.lines();
    if lines.next() != Some(CHECKPOINT_MAGIC) {
        return Err(err("missing header line".into()));
    }
    let mut field = |key: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| err(format!("missing `{key}`")))?;
        line.strip_prefix(&format!("{key}="))
            .map(str::to_string)
            .ok_or_else(|| err(format!("expected `{key}=`, found `{line}`")))
    };
    let hidden: usize = field("hidden_size")?.parse().map_err(|e| err(format!("hidden_size: {e}")))?;
    let stages_text = field("stages")?;
    let seed: u64 = field("seed")?.parse().map_err(|e| err(format!("seed: {e}")))?;
    let count: usize = field("values")?.parse().map_err(|e| err(format!("values: {e}")))?;
    let stages = if stages_text.is_empty() {
        Vec::new()
    } else {
        stages_text.split(',').map(|s| s.parse::<StageId>().map_err(err)).collect::<Result<_>>()?
    };
    let values: Vec<f64> = lines
        .map(|l| l.parse::<f64>().map_err(|e| err(format!("value `{l}`: {e}"))))
        .collect::<Result<_>>()?;
    if values.len() != count {
        return Err(err(format!("header declares {count} values, found {}", values.len())));
    }
    let p = ModelParams::from_flat(hidden, &values)?;
    if !p.is_finite() {
        return Err(err("non-finite value".into()));
    }
    Ok((p, CheckpointMeta { stages, seed }))
}

/// `step<TAB>loss` lines.
pub fn write_loss_trace(trace: &[f64]) -> String {
    trace.iter().enumerate().map(|(i, l)| format!("{i}\t{l:e}\n")).collect()
}
