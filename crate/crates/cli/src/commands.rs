//! One function per subcommand. Each validates its inputs, computes every
//! output in memory, stages the files and commits them at the end.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rayon::prelude::*;

use iqa_core::corpus::{
    build_authenticity_samples, build_qualitative_samples, build_quantitative_samples, build_relativity_pairs, parse_score_from_response, relativity_samples,
    write_corpus, write_sidecar, CorpusEntry,
};
use iqa_core::experiment::{run_strategies, strategy_report_for, train_transfer, transfer_matrix, transfer_report};
use iqa_core::indicators::{compute_indicators, decode_image, extract_features, parse_feature_table, write_feature_table, FeatureVector};
use iqa_core::ingest::{load_manifest, normalize_scores, parse_manifest, split_by_reference, split_random, write_manifest, DatasetManifest, Metric, Split};
use iqa_core::metrics::{format_report, DatasetMetrics, MetricsReport, ReportRow, ReportStyle};
use iqa_core::ranker::{read_checkpoint, write_checkpoint, write_loss_trace, CheckpointMeta, ModelParams};
use iqa_core::seed;
use iqa_core::synth::{generate_synthetic_suite, image_path, make_benchmark, prepare_manifest, split_seed, write_latent_sidecar, BenchmarkSource, ExperimentBundle, Strategy};

use crate::config::RunConfig;
use crate::layout::{self, Staging};

/// Why a command failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

pub type CmdResult<T> = Result<T, Failure>;

pub trait Classify<T> {
    fn invalid(self) -> CmdResult<T>;
    fn runtime(self) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Validation(e.into()))
    }

    fn runtime(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn invalid<T>(msg: impl Into<String>) -> CmdResult<T> {
    Err(Failure::Validation(anyhow!(msg.into())))
}

pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

impl Ctx {
    fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.out.join(rel)
    }

    /// Relative image paths are relative to the output directory.
    fn image(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out.join(p)
        }
    }

    fn commit(&self, staging: Staging) -> CmdResult<()> {
        let written = staging.commit().runtime()?;
        eprintln!("wrote {} file(s) under {}", written.len(), self.out.display());
        Ok(())
    }
}

const CORPUS_STREAM: u64 = 0x434F_5250;

// ---- ingest ----

pub fn ingest(ctx: &Ctx, files: &[PathBuf], train_fraction: Option<f64>) -> CmdResult<()> {
    let files: Vec<PathBuf> = if files.is_empty() { ctx.cfg.manifests.clone() } else { files.to_vec() };
    if files.is_empty() {
        return invalid("no manifests given on the command line or in the config");
    }
    let fraction = train_fraction.unwrap_or(ctx.cfg.split.train_fraction);
    let mut names = BTreeSet::new();
    let mut staging = Staging::new(&ctx.out).runtime()?;
    for (i, file) in files.iter().enumerate() {
        let m = load_manifest(file).with_context(|| file.display().to_string()).invalid()?;
        if !names.insert(m.name.clone()) {
            return invalid(format!("{}: dataset name `{}` appears in more than one manifest", file.display(), m.name));
        }
        let m = normalize_scores(&m).with_context(|| file.display().to_string()).invalid()?;
        let mut m = if m.records.iter().any(|r| r.split != Split::Unassigned) {
            m
        } else if let Some(count) = ctx.cfg.split.reference_count {
            split_by_reference(&m, count, split_seed(ctx.cfg.seed, i)).with_context(|| file.display().to_string()).invalid()?
        } else {
            split_random(&m, fraction, split_seed(ctx.cfg.seed, i)).with_context(|| file.display().to_string()).invalid()?
        };
        let base = std::path::absolute(file.parent().unwrap_or(Path::new(""))).runtime()?;
        for r in &mut m.records {
            if Path::new(&r.image_path).is_relative() {
                r.image_path = base.join(&r.image_path).to_string_lossy().into_owned();
            }
        }
        staging.write(layout::manifest_file(&m.name), write_manifest(&m)).runtime()?;
    }
    ctx.commit(staging)
}

// ---- synth ----

pub fn synth(ctx: &Ctx) -> CmdResult<()> {
    let Some(section) = ctx.cfg.synth_source() else {
        return invalid("the config names manifests as its data source; run `ingest` instead of `synth`");
    };
    let warps = section.warp_specs().invalid()?;
    let latent = section.latent(ctx.cfg.seed);
    latent.validate().invalid()?;
    let suite = generate_synthetic_suite(&latent, &warps, ctx.cfg.seed).runtime()?;
    let mut staging = Staging::new(&ctx.out).runtime()?;
    for d in &suite {
        for (id, img) in &d.images {
            staging.write(image_path(&d.manifest.name, id), img.to_ppm()).runtime()?;
        }
        staging.write(layout::manifest_file(&d.manifest.name), write_manifest(&d.manifest)).runtime()?;
        staging
            .write(Path::new(layout::LATENT).join(format!("{}.tsv", d.manifest.name)), write_latent_sidecar(d))
            .runtime()?;
    }
    ctx.commit(staging)
}

// ---- shared loading ----

fn load_manifests(ctx: &Ctx) -> CmdResult<Vec<DatasetManifest>> {
    let files = layout::list_tsv(&ctx.path(layout::MANIFESTS)).invalid()?;
    files
        .iter()
        .map(|f| {
            let text = std::fs::read_to_string(f).with_context(|| f.display().to_string()).runtime()?;
            parse_manifest(&text).with_context(|| f.display().to_string()).invalid()
        })
        .collect()
}

fn check_images_exist(ctx: &Ctx, m: &DatasetManifest) -> CmdResult<()> {
    for r in &m.records {
        let p = ctx.image(&r.image_path);
        if !p.is_file() {
            return invalid(format!("dataset `{}`: image {} for record `{}` does not exist", m.name, p.display(), r.id));
        }
    }
    Ok(())
}

fn decode_all(ctx: &Ctx, m: &DatasetManifest) -> CmdResult<Vec<iqa_core::indicators::ImageBuffer>> {
    check_images_exist(ctx, m)?;
    m.records
        .par_iter()
        .map(|r| decode_image(ctx.image(&r.image_path)).with_context(|| format!("record `{}`", r.id)))
        .collect::<anyhow::Result<Vec<_>>>()
        .runtime()
}

fn features_for(ctx: &Ctx, m: &DatasetManifest) -> CmdResult<BTreeMap<String, FeatureVector>> {
    let cached = ctx.path(layout::feature_file(&m.name));
    if cached.is_file() {
        let text = std::fs::read_to_string(&cached).runtime()?;
        return parse_feature_table(&text).map_err(|e| anyhow!("{}: {e}", cached.display())).invalid();
    }
    let images = decode_all(ctx, m)?;
    let feats: Vec<FeatureVector> = images.par_iter().map(extract_features).collect();
    Ok(m.records.iter().map(|r| r.id.clone()).zip(feats).collect())
}

fn anchor_index(ctx: &Ctx, manifests: &[DatasetManifest]) -> CmdResult<usize> {
    match &ctx.cfg.anchor {
        None => Ok(0),
        Some(a) => manifests
            .iter()
            .position(|m| &m.name == a)
            .ok_or_else(|| Failure::Validation(anyhow!("anchor `{a}` is not one of the datasets"))),
    }
}

fn load_bundle(ctx: &Ctx) -> CmdResult<ExperimentBundle> {
    let manifests = load_manifests(ctx)?;
    let features: Vec<_> = manifests.iter().map(|m| features_for(ctx, m)).collect::<CmdResult<_>>()?;
    let sources: Vec<BenchmarkSource> = manifests
        .iter()
        .zip(&features)
        .map(|(manifest, features)| BenchmarkSource { manifest, features })
        .collect();
    make_benchmark(&sources, anchor_index(ctx, &manifests)?, &ctx.cfg.benchmark()).invalid()
}

// ---- indicators ----

pub fn indicators(ctx: &Ctx) -> CmdResult<()> {
    let manifests = load_manifests(ctx)?;
    for m in &manifests {
        check_images_exist(ctx, m)?;
    }
    let mut staging = Staging::new(&ctx.out).runtime()?;
    for m in &manifests {
        let images = decode_all(ctx, m)?;
        let rows: Vec<(FeatureVector, [f64; 5])> = images.par_iter().map(|img| (extract_features(img), compute_indicators(img).as_array())).collect();
        let features: BTreeMap<String, FeatureVector> = m.records.iter().map(|r| r.id.clone()).zip(rows.iter().map(|r| r.0)).collect();
        let mut table = String::from("id\tbrightness\tcolorfulness\tcontrast\tnoisiness\tsharpness\n");
        for (r, (_, ind)) in m.records.iter().zip(&rows) {
            table.push_str(&r.id);
            for v in ind {
                table.push_str(&format!("\t{v:.3}"));
            }
            table.push('\n');
        }
        staging.write(layout::feature_file(&m.name), write_feature_table(&features)).runtime()?;
        staging
            .write(Path::new(layout::INDICATORS).join(format!("{}.tsv", m.name)), table)
            .runtime()?;
    }
    ctx.commit(staging)
}

// ---- build-corpus ----

pub fn build_corpus(ctx: &Ctx) -> CmdResult<()> {
    let manifests = load_manifests(ctx)?;
    let cfg = &ctx.cfg;
    let mut entries: Vec<CorpusEntry> = Vec::new();
    let mut counts = BTreeMap::new();
    for (i, raw) in manifests.iter().enumerate() {
        let m = prepare_manifest(raw, cfg.split.train_fraction, split_seed(cfg.seed, i)).invalid()?;
        let sub = |k: u64| seed::derive(cfg.seed, &[CORPUS_STREAM, i as u64, k]);
        let n_train = m.train_records().count();
        let mut metrics = vec![Metric::Mos];
        if cfg.corpus.attribute_pairs {
            let attrs: BTreeSet<_> = m.records.iter().flat_map(|r| r.attributes.keys().copied()).collect();
            metrics.extend(attrs.into_iter().map(Metric::Attr));
        }
        let before = entries.len();
        for (k, metric) in metrics.iter().enumerate() {
            let pairs = build_relativity_pairs(&m, n_train * cfg.corpus.pairs_per_record, *metric, sub(k as u64))
                .with_context(|| m.name.clone())
                .invalid()?;
            entries.extend(relativity_samples(&pairs, sub(100 + k as u64)).invalid()?);
        }
        entries.extend(build_quantitative_samples(&m, Metric::Mos, sub(200)).invalid()?);
        entries.extend(build_qualitative_samples(&m, sub(201)).invalid()?);
        if m.records.iter().all(|r| r.authenticity.is_some()) {
            entries.extend(build_authenticity_samples(&m, sub(202)).invalid()?);
        }
        counts.insert(m.name.clone(), entries.len() - before);
    }
    let mut staging = Staging::new(&ctx.out).runtime()?;
    staging.write(Path::new(layout::CORPUS).join("corpus.txt"), write_corpus(&entries)).runtime()?;
    staging.write(Path::new(layout::CORPUS).join("sidecar.tsv"), write_sidecar(&entries)).runtime()?;
    for (name, n) in counts {
        eprintln!("{name}: {n} samples");
    }
    ctx.commit(staging)
}

// ---- train ----

pub fn train(ctx: &Ctx) -> CmdResult<()> {
    let bundle = load_bundle(ctx)?;
    let runs = run_strategies(&bundle).runtime()?;
    let transfer = if ctx.cfg.transfer { Some(train_transfer(&bundle).runtime()?) } else { None };

    let mut staging = Staging::new(&ctx.out).runtime()?;
    for r in &runs {
        let meta = CheckpointMeta {
            stages: r.outcome.checkpoints.iter().map(|c| c.stage_id).collect(),
            seed: ctx.cfg.seed,
        };
        let slug = r.strategy.slug();
        staging.write(layout::strategy_checkpoint(slug), write_checkpoint(&r.outcome.params, &meta)).runtime()?;
        for c in &r.outcome.checkpoints {
            staging
                .write(Path::new(layout::CHECKPOINTS).join(format!("{slug}.{}.loss.tsv", c.stage_id.name())), write_loss_trace(&c.loss_trace))
                .runtime()?;
        }
    }
    if let Some(params) = transfer {
        for ((source, p), cell) in bundle.datasets.iter().zip(&params).zip(bundle.transfer.iter().step_by(bundle.datasets.len())) {
            let meta = CheckpointMeta {
                stages: cell.plan.stages().iter().map(|s| s.stage_id).collect(),
                seed: ctx.cfg.seed,
            };
            staging.write(layout::transfer_checkpoint(source), write_checkpoint(p, &meta)).runtime()?;
        }
    }
    ctx.commit(staging)
}

// ---- eval ----

fn load_checkpoint(ctx: &Ctx, rel: &Path) -> CmdResult<ModelParams> {
    let path = ctx.path(rel);
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("missing checkpoint {}; run `train` first", path.display()))
        .invalid()?;
    read_checkpoint(&text).with_context(|| path.display().to_string()).invalid().map(|(p, _)| p)
}

fn json(report: &MetricsReport) -> CmdResult<String> {
    serde_json::to_string_pretty(report).map(|s| s + "\n").runtime()
}

pub fn eval(ctx: &Ctx, responses: Option<&Path>) -> CmdResult<()> {
    if let Some(path) = responses {
        return eval_responses(ctx, path);
    }
    let bundle = load_bundle(ctx)?;
    let params: Vec<(Strategy, ModelParams)> = Strategy::ALL
        .into_iter()
        .map(|s| Ok((s, load_checkpoint(ctx, &layout::strategy_checkpoint(s.slug()))?)))
        .collect::<CmdResult<_>>()?;
    let refs: Vec<(Strategy, &ModelParams)> = params.iter().map(|(s, p)| (*s, p)).collect();
    let mut staging = Staging::new(&ctx.out).runtime()?;
    staging.write(layout::STRATEGY_EVAL, json(&strategy_report_for(&refs, &bundle))?).runtime()?;
    if ctx.cfg.transfer {
        let per_source: Vec<ModelParams> = bundle
            .datasets
            .iter()
            .map(|d| load_checkpoint(ctx, &layout::transfer_checkpoint(d)))
            .collect::<CmdResult<_>>()?;
        let m = transfer_matrix(&per_source, &bundle);
        let mut report = transfer_report(&m);
        let diag: Vec<String> = m.datasets.iter().zip(m.diagonal_best()).map(|(d, ok)| format!("{d}: {}", if ok { "yes" } else { "no" })).collect();
        report.notes.push(format!("Best source is the target itself: {}.", diag.join(", ")));
        staging.write(layout::TRANSFER_EVAL, json(&report)?).runtime()?;
    }
    ctx.commit(staging)
}

/// Free-text answers keyed by image id: either a file of `id<TAB>answer`
/// lines or a directory of `<id>.txt` files.
pub fn read_responses(path: &Path) -> CmdResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut add = |id: String, text: String, origin: String| {
        if out.insert(id.clone(), text).is_some() {
            return invalid(format!("{origin}: duplicate response for `{id}`"));
        }
        Ok(())
    };
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .runtime()?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        files.sort();
        for f in files {
            let id = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let text = std::fs::read_to_string(&f).runtime()?;
            add(id, text.trim_end().to_string(), f.display().to_string())?;
        }
    } else {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read responses {}", path.display()))
            .invalid()?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let Some((id, answer)) = line.split_once('\t') else {
                return invalid(format!("{}: line {}: expected `id<TAB>response`", path.display(), i + 1));
            };
            add(id.to_string(), answer.to_string(), format!("{}: line {}", path.display(), i + 1))?;
        }
    }
    Ok(out)
}

fn eval_responses(ctx: &Ctx, path: &Path) -> CmdResult<()> {
    let responses = read_responses(path)?;
    let manifests = load_manifests(ctx)?;
    let mut datasets = BTreeMap::new();
    let mut used = 0;
    for (i, raw) in manifests.iter().enumerate() {
        let m = prepare_manifest(raw, ctx.cfg.split.train_fraction, split_seed(ctx.cfg.seed, i)).invalid()?;
        let (preds, targets): (Vec<Option<f64>>, Vec<f64>) = m
            .test_records()
            .filter_map(|r| responses.get(&r.id).map(|text| (parse_score_from_response(text).value(), r.mos.expect("normalized"))))
            .unzip();
        if preds.is_empty() {
            continue;
        }
        used += preds.len();
        let metrics = DatasetMetrics::from_predictions(&preds, &targets)
            .with_context(|| format!("dataset `{}`", m.name))
            .invalid()?;
        datasets.insert(m.name.clone(), metrics);
    }
    if used == 0 {
        return invalid(format!("{}: no response matches a test record", path.display()));
    }
    let mut notes = Vec::new();
    if used < responses.len() {
        notes.push(format!("{} response(s) did not match a test record and were ignored.", responses.len() - used));
    }
    let report = MetricsReport {
        title: "External responses (MOS)".into(),
        rows: vec![ReportRow {
            label: "responses".into(),
            datasets,
        }],
        notes,
        ..MetricsReport::default()
    };
    let mut staging = Staging::new(&ctx.out).runtime()?;
    staging.write(layout::RESPONSE_EVAL, json(&report)?).runtime()?;
    ctx.commit(staging)
}

// ---- report ----

pub fn report(ctx: &Ctx) -> CmdResult<()> {
    let mut reports = Vec::new();
    for rel in [layout::STRATEGY_EVAL, layout::TRANSFER_EVAL, layout::RESPONSE_EVAL] {
        let path = ctx.path(rel);
        if path.is_file() {
            let text = std::fs::read_to_string(&path).runtime()?;
            let r: MetricsReport = serde_json::from_str(&text).with_context(|| path.display().to_string()).invalid()?;
            reports.push(r);
        }
    }
    if reports.is_empty() {
        return invalid(format!("no evaluation results in {}; run `eval` first", ctx.path(layout::EVAL).display()));
    }
    let md: Vec<String> = reports.iter().map(|r| format_report(r, ReportStyle::MarkdownTable)).collect();
    let md = md.join("\n");
    let jsonl: String = reports.iter().map(|r| format_report(r, ReportStyle::Structured)).collect();
    let mut staging = Staging::new(&ctx.out).runtime()?;
    staging.write(layout::REPORT_MD, &md).runtime()?;
    staging.write(layout::REPORT_JSONL, jsonl).runtime()?;
    print!("{md}");
    ctx.commit(staging)
}
