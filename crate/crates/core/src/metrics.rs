//! Correlation statistics, accuracies, side-by-side scores and report tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Preference;
use crate::text::format_fixed;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("need at least 2 samples, got {0}")]
    TooFew(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("correlation is undefined for a constant vector")]
    ConstantInput,
    #[error("side-by-side ratio is undefined when same + bad == 0")]
    UndefinedRatio,
    #[error("threshold {0} must lie in (0, 1)")]
    InvalidThreshold(f64),
    #[error("empty input")]
    Empty,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Predictions and targets of equal length (at least 2), all finite.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSamples {
    predictions: Vec<f64>,
    targets: Vec<f64>,
}

impl PairedSamples {
    pub fn new(predictions: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if predictions.len() != targets.len() {
            return Err(MetricsError::LengthMismatch(predictions.len(), targets.len()));
        }
        if predictions.len() < 2 {
            return Err(MetricsError::TooFew(predictions.len()));
        }
        if let Some(i) = predictions
            .iter()
            .zip(&targets)
            .position(|(p, t)| !p.is_finite() || !t.is_finite())
        {
            return Err(MetricsError::NonFinite(i));
        }
        Ok(Self { predictions, targets })
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::ConstantInput);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn check_not_constant(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| *x == v[0]) {
        Err(MetricsError::ConstantInput)
    } else {
        Ok(())
    }
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn srcc(s: &PairedSamples) -> Result<f64> {
    check_not_constant(&s.predictions)?;
    check_not_constant(&s.targets)?;
    pearson(&average_ranks(&s.predictions), &average_ranks(&s.targets))
}

/// Pearson linear correlation.
pub fn plcc(s: &PairedSamples) -> Result<f64> {
    check_not_constant(&s.predictions)?;
    check_not_constant(&s.targets)?;
    pearson(&s.predictions, &s.targets)
}

pub fn pairwise_accuracy(predicted: &[Preference], truth: &[Preference]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(predicted.len(), truth.len()));
    }
    if predicted.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / predicted.len() as f64)
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Fraction of items where `p >= threshold` agrees with the label.
pub fn binary_accuracy(probabilities: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    if probabilities.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(probabilities.len(), labels.len()));
    }
    if probabilities.is_empty() {
        return Err(MetricsError::Empty);
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(MetricsError::InvalidThreshold(threshold));
    }
    let hits = probabilities.iter().zip(labels).filter(|(p, y)| (**p >= threshold) == **y).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PreferenceCounts {
    pub good: u64,
    pub same: u64,
    pub bad: u64,
}

/// `(good + same) / (same + bad)`.
pub fn side_by_side(c: PreferenceCounts) -> Result<f64> {
    let den = c.same + c.bad;
    if den == 0 {
        return Err(MetricsError::UndefinedRatio);
    }
    Ok((c.good + c.same) as f64 / den as f64)
}

/// Metrics for one dataset column.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub srcc: Option<f64>,
    pub plcc: Option<f64>,
    pub pairwise_accuracy: Option<f64>,
    pub score_difference_accuracy: Option<f64>,
    pub authenticity_accuracy: Option<f64>,
    pub unparseable_count: usize,
    pub n: usize,
}

impl DatasetMetrics {
    /// SRCC/PLCC over the parseable predictions; `None` entries are counted
    /// as unparseable and left out.
    pub fn from_predictions(predictions: &[Option<f64>], targets: &[f64]) -> Result<Self> {
        if predictions.len() != targets.len() {
            return Err(MetricsError::LengthMismatch(predictions.len(), targets.len()));
        }
        let (p, t): (Vec<f64>, Vec<f64>) = predictions
            .iter()
            .zip(targets)
            .filter_map(|(p, t)| p.map(|p| (p, *t)))
            .unzip();
        let unparseable_count = predictions.len() - p.len();
        let n = p.len();
        let s = PairedSamples::new(p, t)?;
        Ok(Self {
            srcc: Some(srcc(&s)?),
            plcc: Some(plcc(&s)?),
            unparseable_count,
            n,
            ..Self::default()
        })
    }
}

/// One labelled row (a model or strategy) with per-dataset columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub datasets: BTreeMap<String, DatasetMetrics>,
}

impl ReportRow {
    /// Mean SRCC over datasets that have one.
    pub fn mean_srcc(&self) -> Option<f64> {
        mean(self.datasets.values().filter_map(|m| m.srcc))
    }

    pub fn mean_plcc(&self) -> Option<f64> {
        mean(self.datasets.values().filter_map(|m| m.plcc))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = it.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub title: String,
    pub rows: Vec<ReportRow>,
    /// Pooled authenticity accuracy per row label, when computed.
    pub pooled_authenticity: BTreeMap<String, f64>,
    /// Free-form lines printed under the table.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportStyle {
    MarkdownTable,
    Structured,
}

pub const DECIMALS: usize = 3;

/// `"<srcc>/<plcc>"` with three decimals, or `-` for a missing side.
pub fn format_cell(srcc: Option<f64>, plcc: Option<f64>) -> String {
    let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format_fixed(v, DECIMALS));
    format!("{}/{}", f(srcc), f(plcc))
}

fn format_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format_fixed(v, DECIMALS))
}

impl MetricsReport {
    pub fn dataset_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.rows.iter().flat_map(|r| r.datasets.keys().cloned()).collect();
        names.sort();
        names.dedup();
        names
    }
}

#[derive(Serialize)]
struct StructuredRecord<'a> {
    row: &'a str,
    dataset: &'a str,
    srcc: Option<String>,
    plcc: Option<String>,
    pairwise_accuracy: Option<String>,
    score_difference_accuracy: Option<String>,
    authenticity_accuracy: Option<String>,
    unparseable_count: usize,
    n: usize,
}

type Field = fn(&DatasetMetrics) -> Option<f64>;

pub fn format_report(report: &MetricsReport, style: ReportStyle) -> String {
    match style {
        ReportStyle::MarkdownTable => markdown(report),
        ReportStyle::Structured => structured(report),
    }
}

fn markdown(report: &MetricsReport) -> String {
    let names = report.dataset_names();
    let mut out = String::new();
    if !report.title.is_empty() {
        out.push_str(&format!("## {}\n\n", report.title));
    }
    out.push_str("| model |");
    for n in &names {
        out.push_str(&format!(" {n} |"));
    }
    out.push_str(" average |\n|---|");
    out.push_str(&"---|".repeat(names.len() + 1));
    out.push('\n');
    for row in &report.rows {
        out.push_str(&format!("| {} |", row.label));
        for n in &names {
            let cell = row.datasets.get(n).map_or_else(|| "-".to_string(), |m| format_cell(m.srcc, m.plcc));
            out.push_str(&format!(" {cell} |"));
        }
        out.push_str(&format!(" {} |\n", format_cell(row.mean_srcc(), row.mean_plcc())));
    }

    let extra = |f: Field| report.rows.iter().any(|r| r.datasets.values().any(|m| f(m).is_some()));
    let sections: [(&str, Field); 3] = [
        ("pairwise accuracy (ranking head)", |m| m.pairwise_accuracy),
        ("pairwise accuracy (score difference)", |m| m.score_difference_accuracy),
        ("authenticity accuracy", |m| m.authenticity_accuracy),
    ];
    for (title, f) in sections {
        if !extra(f) {
            continue;
        }
        out.push_str(&format!("\n{title}:\n\n| model |"));
        for n in &names {
            out.push_str(&format!(" {n} |"));
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(names.len()));
        out.push('\n');
        for row in &report.rows {
            out.push_str(&format!("| {} |", row.label));
            for n in &names {
                out.push_str(&format!(" {} |", format_opt(row.datasets.get(n).and_then(f))));
            }
            out.push('\n');
        }
    }
    if !report.pooled_authenticity.is_empty() {
        out.push_str("\npooled authenticity accuracy:\n\n");
        for (label, acc) in &report.pooled_authenticity {
            out.push_str(&format!("- {label}: {}\n", format_fixed(*acc, DECIMALS)));
        }
    }
    if report.rows.iter().any(|r| r.datasets.values().any(|m| m.unparseable_count > 0)) {
        out.push_str("\nunparseable responses:\n\n");
        for row in &report.rows {
            for (n, m) in &row.datasets {
                out.push_str(&format!("- {} / {n}: {}\n", row.label, m.unparseable_count));
            }
        }
    }
    if !report.notes.is_empty() {
        out.push('\n');
        for n in &report.notes {
            out.push_str(n);
            out.push('\n');
        }
    }
    out
}

fn structured(report: &MetricsReport) -> String {
    let mut out = String::new();
    for row in &report.rows {
        for (name, m) in &row.datasets {
            let rec = StructuredRecord {
                row: &row.label,
                dataset: name,
                srcc: m.srcc.map(|v| format_fixed(v, DECIMALS)),
                plcc: m.plcc.map(|v| format_fixed(v, DECIMALS)),
                pairwise_accuracy: m.pairwise_accuracy.map(|v| format_fixed(v, DECIMALS)),
                score_difference_accuracy: m.score_difference_accuracy.map(|v| format_fixed(v, DECIMALS)),
                authenticity_accuracy: m.authenticity_accuracy.map(|v| format_fixed(v, DECIMALS)),
                unparseable_count: m.unparseable_count,
                n: m.n,
            };
            out.push_str(&serde_json::to_string(&rec).expect("plain record serializes"));
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ps(a: &[f64], b: &[f64]) -> PairedSamples {
        PairedSamples::new(a.to_vec(), b.to_vec()).unwrap()
    }

    #[test]
    fn srcc_examples() {
        assert_eq!(srcc(&ps(&[1., 2., 3.], &[10., 20., 30.])).unwrap(), 1.0);
        assert_eq!(srcc(&ps(&[1., 2., 3.], &[3., 2., 1.])).unwrap(), -1.0);
        // d = [1,1,1,1], 1 - 6*4/(4*15) = 0.6
        assert!((srcc(&ps(&[1., 2., 3., 4.], &[2., 1., 4., 3.])).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(srcc(&ps(&[1., 1., 1.], &[1., 2., 3.])), Err(MetricsError::ConstantInput));
    }

    #[test]
    fn plcc_examples() {
        assert!((plcc(&ps(&[1., 2., 3.], &[3., 5., 7.])).unwrap() - 1.0).abs() < 1e-15);
        assert!((plcc(&ps(&[1., 2., 3.], &[-1., -2., -3.])).unwrap() + 1.0).abs() < 1e-15);
        // cov = 4, var = 5 each
        assert!((plcc(&ps(&[1., 2., 3., 4.], &[1., 3., 2., 4.])).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(plcc(&ps(&[1., 2.], &[4., 4.])), Err(MetricsError::ConstantInput));
    }

    #[test]
    fn input_validation() {
        assert_eq!(PairedSamples::new(vec![1.0], vec![1.0]), Err(MetricsError::TooFew(1)));
        assert_eq!(PairedSamples::new(vec![1.0, 2.0], vec![1.0]), Err(MetricsError::LengthMismatch(2, 1)));
        assert_eq!(PairedSamples::new(vec![1.0, f64::NAN], vec![1.0, 2.0]), Err(MetricsError::NonFinite(1)));
    }

    #[test]
    fn average_ranks_share_ties() {
        assert_eq!(average_ranks(&[10., 20., 20., 5.]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn accuracies() {
        use Preference::*;
        assert_eq!(pairwise_accuracy(&[First, Second], &[First, Second]).unwrap(), 1.0);
        assert_eq!(pairwise_accuracy(&[First, Second], &[Second, First]).unwrap(), 0.0);
        assert_eq!(pairwise_accuracy(&[First, First, First, Second], &[First, First, First, First]).unwrap(), 0.75);
        assert!(pairwise_accuracy(&[First], &[]).is_err());
        assert_eq!(binary_accuracy(&[0.9, 0.1], &[true, false], 0.5).unwrap(), 1.0);
        assert_eq!(binary_accuracy(&[0.9, 0.1], &[false, true], 0.5).unwrap(), 0.0);
        assert_eq!(binary_accuracy(&[0.5], &[true], 0.5).unwrap(), 1.0);
        assert!(binary_accuracy(&[0.5], &[true, false], 0.5).is_err());
        assert!(binary_accuracy(&[0.5], &[true], 1.0).is_err());
    }

    #[test]
    fn side_by_side_examples() {
        assert_eq!(side_by_side(PreferenceCounts { good: 0, same: 7, bad: 0 }).unwrap(), 1.0);
        assert_eq!(side_by_side(PreferenceCounts { good: 1, same: 0, bad: 0 }), Err(MetricsError::UndefinedRatio));
        assert_eq!(side_by_side(PreferenceCounts { good: 45, same: 33, bad: 22 }).unwrap(), 78.0 / 55.0);
        assert!((78.0f64 / 55.0 - 1.418_181_818_181_818).abs() < 1e-15);
    }

    #[test]
    fn cells() {
        assert_eq!(format_cell(Some(0.856), Some(0.867)), "0.856/0.867");
        assert_eq!(format_cell(Some(0.813), Some(0.807)), "0.813/0.807");
        assert_eq!(format_cell(Some(1.0), Some(0.5)), "1.000/0.500");
        assert_eq!(format_cell(Some(-0.25), None), "-0.250/-");
    }

    #[test]
    fn unparseable_predictions_are_counted() {
        let m = DatasetMetrics::from_predictions(&[Some(1.0), None, Some(3.0), Some(2.0)], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.unparseable_count, 1);
        assert_eq!(m.n, 3);
        assert_eq!(m.srcc, Some(0.5));
    }

    #[test]
    fn report_layouts() {
        let mut datasets = BTreeMap::new();
        datasets.insert(
            "koniq".to_string(),
            DatasetMetrics {
                srcc: Some(0.856),
                plcc: Some(0.867),
                ..Default::default()
            },
        );
        datasets.insert(
            "spaq".to_string(),
            DatasetMetrics {
                srcc: Some(0.9),
                plcc: Some(0.7),
                unparseable_count: 2,
                ..Default::default()
            },
        );
        let report = MetricsReport {
            title: "demo".into(),
            rows: vec![ReportRow { label: "m".into(), datasets }],
            ..Default::default()
        };
        let md = format_report(&report, ReportStyle::MarkdownTable);
        assert!(md.contains("| model | koniq | spaq | average |"));
        assert!(md.contains("| m | 0.856/0.867 | 0.900/0.700 | 0.878/0.783 |"));
        assert!(md.contains("- m / spaq: 2"));
        let js = format_report(&report, ReportStyle::Structured);
        let first = js.lines().next().unwrap();
        assert!(first.starts_with(r#"{"row":"m","dataset":"koniq","srcc":"0.856","plcc":"0.867""#));
        assert_eq!(js.lines().count(), 2);
    }

    proptest! {
        #[test]
        fn correlations_are_symmetric(v in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..40)) {
            let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let (x, y) = (ps(&a, &b), ps(&b, &a));
            if let (Ok(s1), Ok(s2)) = (srcc(&x), srcc(&y)) {
                prop_assert_eq!(s1, s2);
                prop_assert!((-1.0..=1.0).contains(&s1));
            }
            if let (Ok(p1), Ok(p2)) = (plcc(&x), plcc(&y)) {
                prop_assert!((p1 - p2).abs() < 1e-15);
            }
        }

        #[test]
        fn side_by_side_all_same(n in 1u64..10_000) {
            prop_assert_eq!(side_by_side(PreferenceCounts { good: 0, same: n, bad: 0 }).unwrap(), 1.0);
        }
    }
}
