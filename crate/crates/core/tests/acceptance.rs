//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use iqa_core::corpus::{parse_dialogue, serialize_dialogue, DialogueSample, Preference, TaskIdentifier};
use iqa_core::experiment::{median, pair_accuracies, run_strategies, run_transfer, strategy_report, transfer_report};
use iqa_core::indicators::{compute_indicators, degrade, Degradation, FeatureVector, ImageBuffer, FEATURE_LEN};
use iqa_core::ingest::write_manifest;
use iqa_core::metrics::{format_cell, format_report, plcc, srcc, MetricsReport, PairedSamples, ReportRow, ReportStyle};
use iqa_core::ranker::{
    absolute_loss_grad, authenticity_loss_grad, init_params, pairwise_loss_grad, run_curriculum, sample_batch, train_stage, write_checkpoint,
    CheckpointMeta, ModelParams, StageId, StageSpec, TaskPools, TrainItem,
};
use iqa_core::synth::{
    default_warps, environment_preset, generate_synthetic_suite, make_inconformity_benchmark_with, separable_relativity_pool, texture,
    BenchmarkConfig, LatentSpec, Strategy, TextureFamily,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

// ---- 1. metric oracles ----

fn brute_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let below = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for (a, b) in x.iter().zip(y) {
        num += (a - mx) * (b - my);
        dx += (a - mx) * (a - mx);
        dy += (b - my) * (b - my);
    }
    num / (dx.sqrt() * dy.sqrt())
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize, ties: bool) -> Vec<f64> {
    if ties {
        let levels = rng.random_range(2..=(n / 2).max(2));
        (0..n).map(|_| rng.random_range(0..levels) as f64 * 1.5).collect()
    } else {
        (0..n).map(|_| rng.random_range(-100.0..100.0)).collect()
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut max_err: f64 = 0.0;
    let mut invariance_ok = true;
    let mut affine_err: f64 = 0.0;
    let mut done = 0;
    while done < 1000 {
        let n = rng.random_range(2..=200);
        let ties = done % 3 == 0;
        let x = random_vector(&mut rng, n, ties);
        let y_ties = ties && rng.random_bool(0.5);
        let y = random_vector(&mut rng, n, y_ties);
        let Ok(s) = PairedSamples::new(x.clone(), y.clone()) else { continue };
        let (Ok(rs), Ok(pl)) = (srcc(&s), plcc(&s)) else { continue };
        max_err = max_err.max((rs - brute_pearson(&brute_ranks(&x), &brute_ranks(&y))).abs());
        max_err = max_err.max((pl - brute_pearson(&x, &y)).abs());

        let cubed: Vec<f64> = x.iter().map(|v| v * v * v + v).collect();
        let exped: Vec<f64> = x.iter().map(|v| (v / 50.0).exp()).collect();
        for warped in [cubed, exped] {
            invariance_ok &= srcc(&PairedSamples::new(warped, y.clone()).unwrap()).unwrap() == rs;
        }
        for factor in [-1.0, 4.0, 0.125, -0.5] {
            let scaled: Vec<f64> = x.iter().map(|v| v * factor).collect();
            let p = plcc(&PairedSamples::new(scaled, y.clone()).unwrap()).unwrap();
            invariance_ok &= p == if factor < 0.0 { -pl } else { pl };
        }
        let a = rng.random_range(0.1..10.0);
        let b = rng.random_range(-50.0..50.0);
        let affine: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        affine_err = affine_err.max((plcc(&PairedSamples::new(affine, y.clone()).unwrap()).unwrap() - pl).abs());
        done += 1;
    }
    let elapsed = start.elapsed();
    let pass = max_err <= 1e-9 && invariance_ok && affine_err <= 1e-12 && elapsed < Duration::from_secs(10);
    outcome(
        pass,
        format!(
            "1000 vectors, max |err| vs brute force {max_err:.1e}; rank/scale invariance exact: {invariance_ok}; general affine |err| {affine_err:.1e}; {}",
            secs(elapsed)
        ),
    )
}

// ---- 2 and 3. synthetic benchmark ----

struct BenchmarkRuns {
    strategy_srcc: BTreeMap<Strategy, Vec<f64>>,
    transfer: Vec<Vec<Vec<f64>>>,
    strategy_time: Duration,
    transfer_time: Duration,
}

fn benchmark_runs() -> BenchmarkRuns {
    let mut strategy_srcc: BTreeMap<Strategy, Vec<f64>> = BTreeMap::new();
    let mut transfer = vec![vec![Vec::new(); 4]; 4];
    let (mut strategy_time, mut transfer_time) = (Duration::ZERO, Duration::ZERO);
    for seed in 0..5u64 {
        let t = Instant::now();
        let latent = LatentSpec { seed, ..LatentSpec::default() };
        let suite = generate_synthetic_suite(&latent, &default_warps(), seed).expect("suite");
        let config = BenchmarkConfig { seed, ..BenchmarkConfig::default() };
        let bundle = make_inconformity_benchmark_with(&suite, 0, &config).expect("bundle");
        let setup = t.elapsed();
        for run in run_strategies(&bundle).expect("strategies") {
            strategy_srcc.entry(run.strategy).or_default().push(run.row.mean_srcc().unwrap_or(f64::NAN));
        }
        strategy_time += t.elapsed();
        let t = Instant::now();
        let m = run_transfer(&bundle).expect("transfer");
        for (s, row) in m.srcc.iter().enumerate() {
            for (tg, v) in row.iter().enumerate() {
                transfer[s][tg].push(*v);
            }
        }
        transfer_time += t.elapsed() + setup;
    }
    BenchmarkRuns {
        strategy_srcc,
        transfer,
        strategy_time,
        transfer_time,
    }
}

fn criterion_2(runs: &BenchmarkRuns) -> Outcome {
    let med = |s: Strategy| median(&runs.strategy_srcc[&s]).unwrap_or(f64::NAN);
    let (j, s, rj, rs) = (
        med(Strategy::MultiFuncJoint),
        med(Strategy::MultiFuncSingle),
        med(Strategy::RelatJoint),
        med(Strategy::RelatSingle),
    );
    let pass = rs - j >= 0.03 && rs >= s && rj - j >= 0.03 && runs.strategy_time < Duration::from_secs(120);
    outcome(
        pass,
        format!(
            "median mean SRCC joint {j:.3}, single {s:.3}, relat+joint {rj:.3}, relat+single {rs:.3}; {}",
            secs(runs.strategy_time)
        ),
    )
}

fn criterion_3(runs: &BenchmarkRuns) -> Outcome {
    let med: Vec<Vec<f64>> = runs.transfer.iter().map(|r| r.iter().map(|c| median(c).unwrap_or(f64::NAN)).collect()).collect();
    let n = med.len();
    let margins: Vec<f64> = (0..n)
        .map(|t| {
            let best_other = (0..n).filter(|&s| s != t).map(|s| med[s][t]).fold(f64::NEG_INFINITY, f64::max);
            med[t][t] - best_other
        })
        .collect();
    let pass = margins.iter().all(|&m| m > 0.0) && runs.transfer_time < Duration::from_secs(300);
    let shown: Vec<String> = margins.iter().map(|m| format!("{m:+.3}")).collect();
    outcome(
        pass,
        format!("diagonal minus best off-diagonal median SRCC per target [{}]; {}", shown.join(", "), secs(runs.transfer_time)),
    )
}

// ---- 4. gradients ----

const FD_STEP: f64 = 1e-6;
/// Relative errors use `max(|analytic|, |numeric|, GRAD_FLOOR)` as the
/// denominator so coordinates with vanishing gradient are judged absolutely.
const GRAD_FLOOR: f64 = 1e-4;

fn random_features(rng: &mut ChaCha8Rng) -> FeatureVector {
    let mut f = [0.0; FEATURE_LEN];
    f.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.5));
    FeatureVector(f)
}

fn random_params(rng: &mut ChaCha8Rng) -> ModelParams {
    let hidden = rng.random_range(1..=16);
    let mut p = init_params(hidden, rng.random()).expect("hidden > 0");
    let flat: Vec<f64> = p.to_flat().iter().map(|v| v * rng.random_range(0.5..3.0)).collect();
    p = ModelParams::from_flat(hidden, &flat).expect("same length");
    p
}

fn max_relative_error(p: &ModelParams, analytic: &ModelParams, loss: &dyn Fn(&ModelParams) -> f64) -> f64 {
    let base = p.to_flat();
    let grad = analytic.to_flat();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[i] += FD_STEP;
        minus[i] -= FD_STEP;
        let lp = loss(&ModelParams::from_flat(p.hidden_size(), &plus).unwrap());
        let lm = loss(&ModelParams::from_flat(p.hidden_size(), &minus).unwrap());
        let numeric = (lp - lm) / (2.0 * FD_STEP);
        let denom = grad[i].abs().max(numeric.abs()).max(GRAD_FLOOR);
        worst = worst.max((grad[i] - numeric).abs() / denom);
    }
    worst
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = [0.0f64; 3];
    for _ in 0..100 {
        let p = random_params(&mut rng);
        let (fa, fb) = (random_features(&mut rng), random_features(&mut rng));
        let label = if rng.random_bool(0.5) { Preference::First } else { Preference::Second };
        let target = rng.random_range(0.0..=100.0);
        let photographic = rng.random_bool(0.5);

        let (_, g) = pairwise_loss_grad(&p, &fa, &fb, label);
        worst[0] = worst[0].max(max_relative_error(&p, &g, &|q| pairwise_loss_grad(q, &fa, &fb, label).0));
        let (_, g) = absolute_loss_grad(&p, &fa, target).expect("target in range");
        worst[1] = worst[1].max(max_relative_error(&p, &g, &|q| absolute_loss_grad(q, &fa, target).unwrap().0));
        let (_, g) = authenticity_loss_grad(&p, &fa, photographic);
        worst[2] = worst[2].max(max_relative_error(&p, &g, &|q| authenticity_loss_grad(q, &fa, photographic).0));
    }
    let pass = worst.iter().all(|&w| w <= 1e-5);
    outcome(
        pass,
        format!(
            "100 configs, max relative error pairwise {:.1e}, absolute {:.1e}, authenticity {:.1e} (floor {GRAD_FLOOR:.0e})",
            worst[0], worst[1], worst[2]
        ),
    )
}

// ---- 5. serialization ----

const TEXT_CHARS: &[char] = &[
    'a', 'b', 'z', 'Q', '0', '9', ' ', ' ', '.', ',', '?', '!', ':', '/', '<', '>', '_', '-', '"', '\'', '\t', 'é', 'λ', '图', '\\',
];
const PATH_CHARS: &[u8] = b"abcxyz0189_-./";

fn random_text(rng: &mut ChaCha8Rng, max: usize) -> String {
    let n = rng.random_range(1..=max);
    (0..n).map(|_| TEXT_CHARS[rng.random_range(0..TEXT_CHARS.len())]).collect()
}

fn random_sample(rng: &mut ChaCha8Rng) -> DialogueSample {
    let tasks = [TaskIdentifier::IqaQuant, TaskIdentifier::IqaDes, TaskIdentifier::Authenticity, TaskIdentifier::Relativity];
    loop {
        let task = tasks[rng.random_range(0..tasks.len())];
        let images = (0..task.image_count())
            .map(|_| {
                let n = rng.random_range(1..24);
                (0..n).map(|_| PATH_CHARS[rng.random_range(0..PATH_CHARS.len())] as char).collect()
            })
            .collect();
        if let Ok(s) = DialogueSample::new(task, images, random_text(rng, 60), random_text(rng, 60)) {
            return s;
        }
    }
}

fn expected_text(s: &DialogueSample) -> String {
    let tags: String = s.images().iter().enumerate().map(|(i, img)| format!("<img{0}>{img}</img{0}>", i + 1)).collect();
    format!("Human: {tags}{}{}\nAssistant: {}\n", s.task().token(), s.instruction(), s.answer())
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut round_trip, mut layout) = (0, 0);
    for _ in 0..10_000 {
        let s = random_sample(&mut rng);
        let text = serialize_dialogue(&s);
        layout += usize::from(text == expected_text(&s));
        round_trip += usize::from(parse_dialogue(&text).as_ref() == Ok(&s));
    }
    outcome(
        round_trip == 10_000 && layout == 10_000,
        format!("{round_trip}/10000 round trips, {layout}/10000 byte-exact layouts"),
    )
}

// ---- 6. batch purity ----

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut pools = TaskPools::new();
    for i in 0..300 {
        let ds = format!("d{}", i % 3);
        pools
            .push(
                TaskIdentifier::IqaQuant,
                TrainItem::Absolute {
                    features: random_features(&mut rng),
                    target: rng.random_range(0.0..100.0),
                    dataset_id: ds.clone(),
                },
            )
            .unwrap();
        pools
            .push(
                TaskIdentifier::Authenticity,
                TrainItem::Authenticity {
                    features: random_features(&mut rng),
                    photographic: i % 2 == 0,
                    dataset_id: ds,
                },
            )
            .unwrap();
    }
    let spec = StageSpec {
        stage_id: StageId::Multifunctional,
        tasks: BTreeSet::from([TaskIdentifier::IqaQuant, TaskIdentifier::Authenticity]),
        dataset_ids: vec!["d0".into(), "d1".into(), "d2".into()],
        steps: 10_000,
        batch_size: 16,
        learning_rate: 0.01,
        seed: 66,
    };
    let mut pure = 0;
    let mut seen = BTreeMap::new();
    for step in 0..10_000 {
        let batch = sample_batch(&pools, &spec, step).expect("non-empty pools");
        let ok = batch.items.iter().all(|it| match batch.task {
            TaskIdentifier::IqaQuant => matches!(it, TrainItem::Absolute { .. }),
            TaskIdentifier::Authenticity => matches!(it, TrainItem::Authenticity { .. }),
            _ => false,
        });
        pure += usize::from(ok && batch.items.len() == 16);
        *seen.entry(batch.task).or_insert(0usize) += 1;
    }
    let counts: Vec<String> = seen.iter().map(|(t, c)| format!("{t} {c}")).collect();
    outcome(
        pure == 10_000 && seen.len() == 2,
        format!("{pure}/10000 single-task batches ({})", counts.join(", ")),
    )
}

// ---- 7. indicators ----

fn criterion_7() -> Outcome {
    let mut monotone = 0;
    for seed in 0..10u64 {
        let base = texture(TextureFamily::ValueNoise, 64, &environment_preset(0), seed);
        let noisiness: Vec<f64> = [0.0, 5.0, 10.0, 20.0]
            .iter()
            .map(|&s| compute_indicators(&degrade(&base, Degradation::GaussianNoise, s, seed).unwrap()).noisiness)
            .collect();
        let sharpness: Vec<f64> = [1.0, 3.0, 5.0, 9.0]
            .iter()
            .map(|&w| compute_indicators(&degrade(&base, Degradation::BoxBlur, w, 0).unwrap()).sharpness)
            .collect();
        if noisiness.windows(2).all(|w| w[1] > w[0]) && sharpness.windows(2).all(|w| w[1] < w[0]) {
            monotone += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut in_range = 0;
    for i in 0..1000 {
        let img = match i % 3 {
            0 => {
                let (w, h) = (rng.random_range(3..48), rng.random_range(3..48));
                let px = (0..w * h * 3).map(|_| rng.random()).collect();
                ImageBuffer::from_rgb(w, h, px).unwrap()
            }
            1 => {
                let rgb = [rng.random(), rng.random(), rng.random()];
                ImageBuffer::filled(rng.random_range(3..32), rng.random_range(3..32), rgb).unwrap()
            }
            _ => {
                let family = if rng.random_bool(0.5) { TextureFamily::ValueNoise } else { TextureFamily::Sinusoidal };
                let t = texture(family, rng.random_range(4..48), &environment_preset(i), rng.random());
                degrade(&t, Degradation::GaussianNoise, rng.random_range(0.0..80.0), rng.random()).unwrap()
            }
        };
        let v = compute_indicators(&img).as_array();
        in_range += usize::from(v.iter().all(|x| x.is_finite() && (0.0..=100.0).contains(x)));
    }
    outcome(
        monotone == 10 && in_range == 1000,
        format!("{monotone}/10 base images monotone in noise and blur; {in_range}/1000 fuzzed images within [0,100]"),
    )
}

// ---- 8. relativity learnability ----

fn criterion_8() -> Outcome {
    let pool = separable_relativity_pool(4000, 1000, 8);
    let spec = StageSpec {
        stage_id: StageId::Relativity,
        tasks: BTreeSet::from([TaskIdentifier::Relativity]),
        dataset_ids: vec!["separable".into()],
        steps: 2000,
        batch_size: 32,
        learning_rate: 0.05,
        seed: 8,
    };
    let init = init_params(16, 8).unwrap();
    let trained = train_stage(&init, &spec, &pool.pools).expect("training").params;
    let (rank, diff) = pair_accuracies(&trained, &pool.held_out);
    outcome(
        rank > 0.9,
        format!("held-out pairwise accuracy after 2000 steps: ranking {rank:.3}, score difference (A-B) {diff:.3}"),
    )
}

// ---- 9. formatting ----

fn criterion_9() -> Outcome {
    let cells = [
        (format_cell(Some(0.856), Some(0.867)), "0.856/0.867"),
        (format_cell(Some(0.813), Some(0.807)), "0.813/0.807"),
        (format_cell(Some(0.85649), Some(0.8665)), "0.856/0.867"),
        (format_cell(Some(-0.0004), Some(1.0)), "0.000/1.000"),
    ];
    let cells_ok = cells.iter().filter(|(got, want)| got == want).count();

    let mut datasets = BTreeMap::new();
    datasets.insert(
        "koniq".to_string(),
        iqa_core::metrics::DatasetMetrics {
            srcc: Some(0.856),
            plcc: Some(0.867),
            n: 10,
            ..Default::default()
        },
    );
    datasets.insert(
        "spaq".to_string(),
        iqa_core::metrics::DatasetMetrics {
            srcc: Some(0.813),
            plcc: Some(0.807),
            n: 10,
            ..Default::default()
        },
    );
    let report = MetricsReport {
        title: "fixture".into(),
        rows: vec![ReportRow { label: "model".into(), datasets }],
        ..MetricsReport::default()
    };
    let text = format_report(&report, ReportStyle::MarkdownTable);
    let fixture = include_str!("fixtures/report.md");
    let table_ok = text == fixture;
    if std::env::var_os("PRINT_FIXTURE").is_some() {
        print!("{text}");
    }
    outcome(
        cells_ok == cells.len() && table_ok,
        format!("{cells_ok}/{} cell fixtures; markdown table fixture matches: {table_ok}", cells.len()),
    )
}

// ---- 10. determinism ----

/// Every byte the default synth, train, eval and report chain produces.
fn pipeline_bytes(seed: u64) -> Vec<u8> {
    let latent = LatentSpec { seed, ..LatentSpec::default() };
    let suite = generate_synthetic_suite(&latent, &default_warps(), seed).expect("suite");
    let mut out = Vec::new();
    for d in &suite {
        out.extend(write_manifest(&d.manifest).into_bytes());
        for img in d.images.values() {
            out.extend(img.to_ppm());
        }
    }
    let config = BenchmarkConfig { seed, ..BenchmarkConfig::default() };
    let bundle = make_inconformity_benchmark_with(&suite, 0, &config).expect("bundle");
    let runs = run_strategies(&bundle).expect("training");
    for r in &runs {
        let meta = CheckpointMeta {
            stages: r.outcome.checkpoints.iter().map(|c| c.stage_id).collect(),
            seed,
        };
        out.extend(write_checkpoint(&r.outcome.params, &meta).into_bytes());
    }
    let report = strategy_report(&runs, &bundle);
    out.extend(format_report(&report, ReportStyle::MarkdownTable).into_bytes());
    out.extend(format_report(&report, ReportStyle::Structured).into_bytes());
    let transfer = run_transfer(&bundle).expect("transfer");
    out.extend(format_report(&transfer_report(&transfer), ReportStyle::MarkdownTable).into_bytes());
    out
}

fn criterion_10() -> Outcome {
    let a = pipeline_bytes(10);
    let b = pipeline_bytes(10);
    // A plan rerun from the same bundle must also agree with itself.
    let latent = LatentSpec { seed: 3, ..LatentSpec::default() };
    let suite = generate_synthetic_suite(&latent, &default_warps(), 3).unwrap();
    let bundle = make_inconformity_benchmark_with(&suite, 0, &BenchmarkConfig { seed: 3, ..BenchmarkConfig::default() }).unwrap();
    let init = iqa_core::experiment::initial_params(&bundle).unwrap();
    let plan = &bundle.strategies[0].plan;
    let t1 = run_curriculum(plan, &init, &bundle.pools).unwrap();
    let t2 = run_curriculum(plan, &init, &bundle.pools).unwrap();
    let same = a == b && t1 == t2;
    outcome(same, format!("two runs produced {} and {} bytes, identical: {}", a.len(), b.len(), a == b))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let runs = benchmark_runs();
    let results = [
        ("metric oracles", criterion_1()),
        ("strategy ordering", criterion_2(&runs)),
        ("transfer diagonal", criterion_3(&runs)),
        ("gradient checks", criterion_4()),
        ("serialization", criterion_5()),
        ("batch purity", criterion_6()),
        ("indicator monotonicity", criterion_7()),
        ("relativity learnability", criterion_8()),
        ("formatting", criterion_9()),
        ("determinism", criterion_10()),
    ];
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!("criterion {:>2} {:<24} {}  {}", i + 1, name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed in {}", results.len() - failed, secs(start.elapsed()));
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
