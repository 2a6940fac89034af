//! Running the benchmark plans and summarizing them as reports.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::corpus::Preference;
use crate::metrics::{self, binary_accuracy, pairwise_accuracy, DatasetMetrics, MetricsReport, PairedSamples, ReportRow};
use crate::ranker::{authenticity_probability, init_params, rank_pair, run_curriculum, score, score_difference_pair, CurriculumOutcome, ModelParams, TrainError};
use crate::synth::{ExperimentBundle, Strategy, TestSet};

const INIT_STREAM: u64 = 0x4D4F_4445;

/// Shared initial parameters for every plan in a bundle.
pub fn initial_params(bundle: &ExperimentBundle) -> Result<ModelParams, TrainError> {
    init_params(bundle.config.hidden_size, crate::seed::derive(bundle.config.seed, &[INIT_STREAM]))
}

/// SRCC/PLCC against held-out MOS plus pairwise and authenticity accuracies.
pub fn evaluate_test_set(p: &ModelParams, t: &TestSet) -> DatasetMetrics {
    let preds: Vec<f64> = t.features.iter().map(|f| score(p, f)).collect();
    let corr = PairedSamples::new(preds, t.mos.clone()).ok();
    let srcc = corr.as_ref().and_then(|s| metrics::srcc(s).ok());
    let plcc = corr.as_ref().and_then(|s| metrics::plcc(s).ok());

    let (mut rank, mut diff, mut truth) = (Vec::new(), Vec::new(), Vec::new());
    for &(i, j, label) in &t.pairs {
        let a = (t.ids[i].as_str(), &t.features[i]);
        let b = (t.ids[j].as_str(), &t.features[j]);
        rank.push(rank_pair(p, a, b));
        diff.push(score_difference_pair(p, a, b));
        truth.push(label);
    }
    let probs: Vec<f64> = t.features.iter().map(|f| authenticity_probability(p, f)).collect();
    DatasetMetrics {
        srcc,
        plcc,
        pairwise_accuracy: pairwise_accuracy(&rank, &truth).ok(),
        score_difference_accuracy: pairwise_accuracy(&diff, &truth).ok(),
        authenticity_accuracy: binary_accuracy(&probs, &t.photographic, metrics::DEFAULT_THRESHOLD).ok(),
        unparseable_count: 0,
        n: t.ids.len(),
    }
}

pub fn evaluate_all(p: &ModelParams, tests: &[TestSet], label: &str) -> ReportRow {
    ReportRow {
        label: label.to_string(),
        datasets: tests.iter().map(|t| (t.dataset_id.clone(), evaluate_test_set(p, t))).collect(),
    }
}

/// Authenticity accuracy over every test record of every dataset.
pub fn pooled_authenticity(p: &ModelParams, tests: &[TestSet]) -> Option<f64> {
    let probs: Vec<f64> = tests.iter().flat_map(|t| t.features.iter().map(|f| authenticity_probability(p, f))).collect();
    let labels: Vec<bool> = tests.iter().flat_map(|t| t.photographic.iter().copied()).collect();
    binary_accuracy(&probs, &labels, metrics::DEFAULT_THRESHOLD).ok()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyRun {
    pub strategy: Strategy,
    pub outcome: CurriculumOutcome,
    pub row: ReportRow,
}

/// Trains every strategy plan from the shared initialization.
pub fn run_strategies(bundle: &ExperimentBundle) -> Result<Vec<StrategyRun>, TrainError> {
    let init = initial_params(bundle)?;
    bundle
        .strategies
        .par_iter()
        .map(|sp| {
            let outcome = run_curriculum(&sp.plan, &init, &bundle.pools)?;
            let row = evaluate_all(&outcome.params, &bundle.tests, sp.strategy.label());
            Ok(StrategyRun {
                strategy: sp.strategy,
                outcome,
                row,
            })
        })
        .collect()
}

/// `srcc[source][target]` and `plcc[source][target]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    pub datasets: Vec<String>,
    pub srcc: Vec<Vec<f64>>,
    pub plcc: Vec<Vec<f64>>,
}

impl TransferMatrix {
    /// Whether each target's best source is the target itself.
    pub fn diagonal_best(&self) -> Vec<bool> {
        let n = self.datasets.len();
        (0..n)
            .map(|t| (0..n).all(|s| s == t || self.srcc[t][t] > self.srcc[s][t]))
            .collect()
    }
}

/// Trains one plan per source (plans in a row are identical) and evaluates
/// it on every target.
pub fn run_transfer(bundle: &ExperimentBundle) -> Result<TransferMatrix, TrainError> {
    Ok(transfer_matrix(&train_transfer(bundle)?, bundle))
}

/// The trained parameters of every transfer row, indexed by source.
pub fn train_transfer(bundle: &ExperimentBundle) -> Result<Vec<ModelParams>, TrainError> {
    let init = initial_params(bundle)?;
    (0..bundle.datasets.len())
        .into_par_iter()
        .map(|s| {
            let cell = bundle
                .transfer
                .iter()
                .find(|c| c.source == s)
                .expect("every source has a row");
            Ok(run_curriculum(&cell.plan, &init, &bundle.pools)?.params)
        })
        .collect()
}

/// Evaluates the model trained on each source (`per_source[s]`) on every
/// target.
pub fn transfer_matrix(per_source: &[ModelParams], bundle: &ExperimentBundle) -> TransferMatrix {
    let rows: Vec<Vec<DatasetMetrics>> = per_source
        .iter()
        .map(|p| bundle.tests.iter().map(|t| evaluate_test_set(p, t)).collect())
        .collect();
    let nan = f64::NAN;
    TransferMatrix {
        datasets: bundle.datasets.clone(),
        srcc: rows.iter().map(|r| r.iter().map(|m| m.srcc.unwrap_or(nan)).collect()).collect(),
        plcc: rows.iter().map(|r| r.iter().map(|m| m.plcc.unwrap_or(nan)).collect()).collect(),
    }
}

/// Strategy comparison as a report with one row per strategy.
pub fn strategy_report(runs: &[StrategyRun], bundle: &ExperimentBundle) -> MetricsReport {
    let trained: Vec<(Strategy, &ModelParams)> = runs.iter().map(|r| (r.strategy, &r.outcome.params)).collect();
    strategy_report_for(&trained, bundle)
}

/// [`strategy_report`] from trained parameters alone.
pub fn strategy_report_for(trained: &[(Strategy, &ModelParams)], bundle: &ExperimentBundle) -> MetricsReport {
    let mut pooled = BTreeMap::new();
    for (s, p) in trained {
        if let Some(acc) = pooled_authenticity(p, &bundle.tests) {
            pooled.insert(s.label().to_string(), acc);
        }
    }
    MetricsReport {
        title: format!("Training strategies (MOS, anchor {})", bundle.anchor),
        rows: trained.iter().map(|(s, p)| evaluate_all(p, &bundle.tests, s.label())).collect(),
        pooled_authenticity: pooled,
        notes: vec![
            "Cells are SRCC/PLCC on held-out records. Annotation differences between datasets are modelled as monotone warps of a shared latent quality.".to_string(),
        ],
    }
}

/// Source-to-target matrix with one row per training source.
pub fn transfer_report(m: &TransferMatrix) -> MetricsReport {
    let rows = m
        .datasets
        .iter()
        .enumerate()
        .map(|(s, name)| ReportRow {
            label: format!("train on {name}"),
            datasets: m
                .datasets
                .iter()
                .enumerate()
                .map(|(t, tn)| {
                    (
                        tn.clone(),
                        DatasetMetrics {
                            srcc: Some(m.srcc[s][t]).filter(|v| v.is_finite()),
                            plcc: Some(m.plcc[s][t]).filter(|v| v.is_finite()),
                            ..DatasetMetrics::default()
                        },
                    )
                })
                .collect(),
        })
        .collect();
    MetricsReport {
        title: "Source to target transfer (MOS)".to_string(),
        rows,
        ..MetricsReport::default()
    }
}

/// Median of finite values; `None` when there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Pairwise accuracy of the ranking head and of the score difference on
/// explicit feature pairs.
pub fn pair_accuracies(p: &ModelParams, pairs: &[(crate::FeatureVector, crate::FeatureVector, Preference)]) -> (f64, f64) {
    let truth: Vec<Preference> = pairs.iter().map(|x| x.2).collect();
    let rank: Vec<Preference> = pairs.iter().map(|(a, b, _)| rank_pair(p, ("a", a), ("b", b))).collect();
    let diff: Vec<Preference> = pairs.iter().map(|(a, b, _)| score_difference_pair(p, ("a", a), ("b", b))).collect();
    (
        pairwise_accuracy(&rank, &truth).unwrap_or(0.0),
        pairwise_accuracy(&diff, &truth).unwrap_or(0.0),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[f64::NAN]), None);
    }

    #[test]
    fn diagonal_check() {
        let m = TransferMatrix {
            datasets: vec!["a".into(), "b".into()],
            srcc: vec![vec![0.9, 0.5], vec![0.8, 0.7]],
            plcc: vec![vec![0.0; 2]; 2],
        };
        assert_eq!(m.diagonal_best(), vec![true, true]);
        let m = TransferMatrix {
            srcc: vec![vec![0.7, 0.8], vec![0.8, 0.7]],
            ..m
        };
        assert_eq!(m.diagonal_best(), vec![false, false]);
    }
}
