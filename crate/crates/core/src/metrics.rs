//! Scoring: binary metrics against human labels, pass@k, length strata,
//! and benchmark-level correlation.

use std::cmp::Ordering;
use std::fmt::Write as _;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::beq::Metric;
use crate::exec::Execution;
use crate::statement::{Verdict, VerifRecord};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("input is constant")]
    ConstantInput,
    #[error("all pairs are tied")]
    AllTied,
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("missing verdicts: {0}")]
    MissingVerdicts(String),
}

/// Rounds half-to-even at one decimal, for presentation only.
pub fn round1(x: f64) -> f64 {
    (x * 10.0).round_ties_even() / 10.0
}

fn fmt_pct(x: Option<f64>) -> String {
    x.map_or_else(|| "—".to_string(), |v| format!("{:.1}", round1(v)))
}

/// Confusion counts and derived percentages. Undefined ratios are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryScore {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl BinaryScore {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let precision = (tp + fp > 0).then(|| 100.0 * tp as f64 / (tp + fp) as f64);
        let recall = (tp + fn_ > 0).then(|| 100.0 * tp as f64 / (tp + fn_) as f64);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) => f1_from(p, r),
            _ => None,
        };
        Self {
            tp,
            fp,
            tn,
            fn_,
            precision,
            recall,
            f1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Harmonic mean of two percentages.
pub fn f1_from(precision: f64, recall: f64) -> Option<f64> {
    let sum = precision + recall;
    (sum > 0.0).then(|| 2.0 * precision * recall / sum)
}

pub fn binary_metrics(predictions: &[bool], labels: &[bool]) -> Result<BinaryScore, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(predictions.len(), labels.len()));
    }
    if predictions.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(BinaryScore::from_counts(tp, fp, tn, fn_))
}

/// Default length cuts: below 115, 115 to 165 inclusive, above 165.
pub const DEFAULT_LENGTH_CUTS: (usize, usize) = (115, 165);

/// Bucket (0, 1 or 2) of a reference length.
pub fn length_bucket(len: usize, cuts: (usize, usize)) -> usize {
    if len < cuts.0 {
        0
    } else if len <= cuts.1 {
        1
    } else {
        2
    }
}

pub fn stratify_by_length(
    records: &[VerifRecord],
    cuts: (usize, usize),
) -> Result<[Vec<&VerifRecord>; 3], MetricsError> {
    if cuts.0 >= cuts.1 {
        return Err(MetricsError::Domain(format!("cuts must increase: {} >= {}", cuts.0, cuts.1)));
    }
    let mut out: [Vec<&VerifRecord>; 3] = Default::default();
    for r in records {
        out[length_bucket(r.reference_length, cuts)].push(r);
    }
    Ok(out)
}

fn check_pass_domain(n: u64, c: u64, k: u64) -> Result<(), MetricsError> {
    if c > n || k == 0 || k > n {
        return Err(MetricsError::Domain(format!("need 0 <= c <= n and 1 <= k <= n, got n={n} c={c} k={k}")));
    }
    Ok(())
}

/// Unbiased pass@k, `1 - C(n-c, k) / C(n, k)`, in product form.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, MetricsError> {
    check_pass_domain(n, c, k)?;
    if n - c < k {
        return Ok(1.0);
    }
    let miss: f64 = (n - c + 1..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - miss)
}

/// pass@k in exact rational arithmetic.
pub fn pass_at_k_exact(n: u64, c: u64, k: u64) -> Result<Ratio<i128>, MetricsError> {
    check_pass_domain(n, c, k)?;
    if n - c < k {
        return Ok(Ratio::from_integer(1));
    }
    let mut miss = Ratio::from_integer(1i128);
    for i in n - c + 1..=n {
        miss *= Ratio::new(i128::from(i - k), i128::from(i));
    }
    Ok(Ratio::from_integer(1) - miss)
}

/// pass@k for a problem with fewer than `k` samples uses all of them; an
/// empty pool scores 0.
pub fn pass_at_k_clamped(n: u64, c: u64, k: u64) -> Result<f64, MetricsError> {
    if n == 0 {
        return Ok(0.0);
    }
    pass_at_k(n, c, k.min(n))
}

fn check_pair_input(xs: &[f64], ys: &[f64]) -> Result<(), MetricsError> {
    if xs.len() != ys.len() {
        return Err(MetricsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(MetricsError::TooFewPoints(xs.len()));
    }
    if let Some(i) = xs.iter().chain(ys).position(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite(i % xs.len()));
    }
    Ok(())
}

/// Sample Pearson correlation, computed from centered sums.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    check_pair_input(xs, ys)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::ConstantInput);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pair counts behind Kendall's tau-b.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KendallCounts {
    /// n(n-1)/2
    pub pairs: u64,
    /// Pairs tied in x.
    pub ties_x: u64,
    /// Pairs tied in y.
    pub ties_y: u64,
    /// Concordant minus discordant pairs.
    pub score: i64,
}

impl KendallCounts {
    pub fn tau_b(&self) -> Result<f64, MetricsError> {
        let dx = self.pairs - self.ties_x;
        let dy = self.pairs - self.ties_y;
        if dx == 0 || dy == 0 {
            return Err(MetricsError::AllTied);
        }
        Ok(self.score as f64 / ((dx as f64) * (dy as f64)).sqrt())
    }
}

fn tied_pairs(run: u64) -> u64 {
    run * run.saturating_sub(1) / 2
}

/// Knight's O(n log n) pair counting.
pub fn kendall_counts(xs: &[f64], ys: &[f64]) -> Result<KendallCounts, MetricsError> {
    check_pair_input(xs, ys)?;
    let n = xs.len();
    // adding 0.0 folds -0.0 into 0.0, so total_cmp agrees with ==
    let mut pts: Vec<(f64, f64)> = xs.iter().zip(ys).map(|(&x, &y)| (x + 0.0, y + 0.0)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let (mut ties_x, mut ties_xy) = (0u64, 0u64);
    let (mut run_x, mut run_xy) = (1u64, 1u64);
    for w in pts.windows(2) {
        if w[0].0 == w[1].0 {
            run_x += 1;
            if w[0].1 == w[1].1 {
                run_xy += 1;
            } else {
                ties_xy += tied_pairs(run_xy);
                run_xy = 1;
            }
        } else {
            ties_x += tied_pairs(run_x);
            ties_xy += tied_pairs(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    ties_x += tied_pairs(run_x);
    ties_xy += tied_pairs(run_xy);

    let mut ys_sorted: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let swaps = merge_count(&mut ys_sorted);

    let mut ties_y = 0u64;
    let mut run_y = 1u64;
    for w in ys_sorted.windows(2) {
        if w[0] == w[1] {
            run_y += 1;
        } else {
            ties_y += tied_pairs(run_y);
            run_y = 1;
        }
    }
    ties_y += tied_pairs(run_y);

    let pairs = tied_pairs(n as u64);
    let score = pairs as i64 - ties_x as i64 - ties_y as i64 + ties_xy as i64 - 2 * swaps as i64;
    Ok(KendallCounts {
        pairs,
        ties_x,
        ties_y,
        score,
    })
}

/// Sorts ascending and returns the number of strict inversions.
fn merge_count(v: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid]) + merge_count(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j].total_cmp(&v[i]) == Ordering::Less {
            swaps += (mid - i) as u64;
            merged.push(v[j]);
            j += 1;
        } else {
            merged.push(v[i]);
            i += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..]);
    v.copy_from_slice(&merged);
    swaps
}

pub fn kendall_tau_b(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    kendall_counts(xs, ys)?.tau_b()
}

/// Correlates many (x, y) series at once.
pub fn correlate_batch(series: &[(Vec<f64>, Vec<f64>)], exec: Execution) -> Vec<(Option<f64>, Option<f64>)> {
    exec.map(series, |(x, y)| (pearson(x, y).ok(), kendall_tau_b(x, y).ok()))
}

/// Outcome of one problem under one selection method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemOutcome {
    pub problem_id: String,
    pub pool_size: usize,
    pub survivors: usize,
    /// Index into the original pool of the selected candidate.
    pub chosen_index: Option<usize>,
    pub beq_l: Option<Verdict>,
    pub beq_plus: Option<Verdict>,
    /// Survivors equivalent to the reference under BEq+, when computed.
    pub correct: Option<usize>,
    /// Human judgment of the selected candidate, when a label exists.
    pub human_label: Option<bool>,
}

impl ProblemOutcome {
    pub fn type_checks(&self) -> bool {
        self.survivors > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassAtK {
    pub k: u64,
    pub rate: f64,
}

/// One row of the sampling-method table. Rates are percentages at full
/// precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub problems: usize,
    pub type_check_rate: f64,
    pub human_accuracy: Option<f64>,
    pub beq_l_rate: Option<f64>,
    pub beq_plus_rate: Option<f64>,
    pub pass_at_k: Vec<PassAtK>,
}

impl EvalReport {
    pub fn benchmark_point(&self) -> Option<BenchmarkPoint> {
        Some(BenchmarkPoint {
            label: self.method.clone(),
            human_accuracy: self.human_accuracy?,
            type_check_rate: self.type_check_rate,
            beq_l_rate: self.beq_l_rate?,
            beq_plus_rate: self.beq_plus_rate?,
        })
    }
}

fn rate(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * hits as f64 / total as f64
    }
}

/// Aggregates per-problem outcomes into one report row.
pub fn aggregate_report(
    method: &str,
    outcomes: &[ProblemOutcome],
    metrics: &[Metric],
    k_list: &[u64],
) -> Result<EvalReport, MetricsError> {
    let n = outcomes.len();
    let mut missing = Vec::new();
    let mut beq_rate = |metric: Metric| -> Option<f64> {
        if !metrics.contains(&metric) {
            return None;
        }
        let mut hits = 0;
        for o in outcomes {
            let v = match metric {
                Metric::BeqL => o.beq_l,
                Metric::BeqPlus => o.beq_plus,
            };
            match v {
                Some(Verdict::Equivalent) => hits += 1,
                Some(_) => {}
                None if o.type_checks() => missing.push(format!("{} ({metric})", o.problem_id)),
                None => {}
            }
        }
        Some(rate(hits, n))
    };
    let beq_l_rate = beq_rate(Metric::BeqL);
    let beq_plus_rate = beq_rate(Metric::BeqPlus);

    let mut pass = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let mut total = 0.0;
        for o in outcomes {
            let c = match o.correct {
                Some(c) => c,
                None if o.type_checks() => {
                    missing.push(format!("{} (pass@{k})", o.problem_id));
                    continue;
                }
                None => 0,
            };
            total += pass_at_k_clamped(o.pool_size as u64, c as u64, k)?;
        }
        pass.push(PassAtK {
            k,
            rate: if n == 0 { 0.0 } else { 100.0 * total / n as f64 },
        });
    }
    if !missing.is_empty() {
        missing.dedup();
        return Err(MetricsError::MissingVerdicts(missing.join(", ")));
    }

    let labels: Vec<bool> = outcomes.iter().filter_map(|o| o.human_label).collect();
    let human_accuracy = (!labels.is_empty() && labels.len() == n)
        .then(|| rate(labels.iter().filter(|&&l| l).count(), n));
    Ok(EvalReport {
        method: method.to_string(),
        problems: n,
        type_check_rate: rate(outcomes.iter().filter(|o| o.type_checks()).count(), n),
        human_accuracy,
        beq_l_rate,
        beq_plus_rate,
        pass_at_k: pass,
    })
}

/// Markdown table in the sampling-method layout; absent values show "—".
pub fn report_markdown(rows: &[EvalReport]) -> String {
    let ks: Vec<u64> = rows.first().map(|r| r.pass_at_k.iter().map(|p| p.k).collect()).unwrap_or_default();
    let mut out = String::from("| Method | Type-Check | Accuracy | BEq_L | BEq+ |");
    for k in &ks {
        let _ = write!(out, " pass@{k} |");
    }
    out.push_str("\n|---|---:|---:|---:|---:|");
    for _ in &ks {
        out.push_str("---:|");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(
            out,
            "| {} | {} | {} | {} | {} |",
            r.method,
            fmt_pct(Some(r.type_check_rate)),
            fmt_pct(r.human_accuracy),
            fmt_pct(r.beq_l_rate),
            fmt_pct(r.beq_plus_rate)
        );
        for k in &ks {
            let v = r.pass_at_k.iter().find(|p| p.k == *k).map(|p| p.rate);
            let _ = write!(out, " {} |", fmt_pct(v));
        }
        out.push('\n');
    }
    out
}

/// Binary scores overall and per length stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifReport {
    pub metric: Metric,
    pub overall: BinaryScore,
    pub cuts: (usize, usize),
    pub strata: Vec<Option<BinaryScore>>,
    pub errors: usize,
}

pub fn verif_markdown(report: &VerifReport) -> String {
    let (lo, hi) = report.cuts;
    let names = [
        "Overall".to_string(),
        format!("< {lo}"),
        format!("{lo}–{hi}"),
        format!("> {hi}"),
    ];
    let mut out = format!("| {} | N | Precision | Recall | F1 |\n|---|---:|---:|---:|---:|\n", report.metric);
    let rows = std::iter::once(Some(&report.overall)).chain(report.strata.iter().map(Option::as_ref));
    for (name, score) in names.iter().zip(rows) {
        match score {
            Some(s) => {
                let _ = writeln!(
                    out,
                    "| {name} | {} | {} | {} | {} |",
                    s.total(),
                    fmt_pct(s.precision),
                    fmt_pct(s.recall),
                    fmt_pct(s.f1)
                );
            }
            None => {
                let _ = writeln!(out, "| {name} | 0 | — | — | — |");
            }
        }
    }
    out
}

/// One model/method run with its human accuracy and automated rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkPoint {
    pub label: String,
    pub human_accuracy: f64,
    pub type_check_rate: f64,
    pub beq_l_rate: f64,
    pub beq_plus_rate: f64,
}

impl BenchmarkPoint {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("human_accuracy", self.human_accuracy),
            ("type_check_rate", self.type_check_rate),
            ("beq_l_rate", self.beq_l_rate),
            ("beq_plus_rate", self.beq_plus_rate),
        ] {
            if !(0.0..=100.0).contains(&v) {
                return Err(format!("{name} = {v} is outside [0, 100]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub metric: String,
    pub pearson: Option<f64>,
    pub kendall: Option<f64>,
}

/// Pearson and Kendall tau-b of human accuracy against each automated rate.
pub fn correlate(points: &[BenchmarkPoint], exec: Execution) -> Result<Vec<CorrelationRow>, MetricsError> {
    if points.len() < 2 {
        return Err(MetricsError::TooFewPoints(points.len()));
    }
    let human: Vec<f64> = points.iter().map(|p| p.human_accuracy).collect();
    type Column = (&'static str, fn(&BenchmarkPoint) -> f64);
    let columns: [Column; 3] = [
        ("Type-Check", |p| p.type_check_rate),
        ("BEq_L", |p| p.beq_l_rate),
        ("BEq+", |p| p.beq_plus_rate),
    ];
    let series: Vec<(Vec<f64>, Vec<f64>)> = columns
        .iter()
        .map(|(_, f)| (human.clone(), points.iter().map(f).collect()))
        .collect();
    Ok(columns
        .iter()
        .zip(correlate_batch(&series, exec))
        .map(|((name, _), (pearson, kendall))| CorrelationRow {
            metric: name.to_string(),
            pearson,
            kendall,
        })
        .collect())
}

pub fn correlation_markdown(rows: &[CorrelationRow]) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "—".to_string(), |x| format!("{x:.3}"));
    let mut out = String::from("| Metric | Pearson | Kendall |\n|---|---:|---:|\n");
    for r in rows {
        let _ = writeln!(out, "| {} | {} | {} |", r.metric, fmt(r.pearson), fmt(r.kendall));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_is_half_even() {
        assert_eq!(round1(0.25), 0.2);
        assert_eq!(round1(0.75), 0.8);
        assert_eq!(round1(47.213), 47.2);
    }

    #[test]
    fn undefined_ratios_are_absent() {
        let s = binary_metrics(&[false, false], &[true, false]).unwrap();
        assert_eq!(s.precision, None);
        assert_eq!(s.recall, Some(0.0));
        assert_eq!(s.f1, None);
        assert_eq!(binary_metrics(&[], &[]), Err(MetricsError::EmptyInput));
        assert_eq!(binary_metrics(&[true], &[]), Err(MetricsError::LengthMismatch(1, 0)));
        let perfect = binary_metrics(&[true, false, true], &[true, false, true]).unwrap();
        assert_eq!((perfect.precision, perfect.recall, perfect.f1), (Some(100.0), Some(100.0), Some(100.0)));
    }

    #[test]
    fn length_buckets() {
        let cuts = DEFAULT_LENGTH_CUTS;
        assert_eq!(length_bucket(114, cuts), 0);
        assert_eq!(length_bucket(115, cuts), 1);
        assert_eq!(length_bucket(165, cuts), 1);
        assert_eq!(length_bucket(166, cuts), 2);
        assert!(stratify_by_length(&[], (5, 5)).is_err());
    }

    #[test]
    fn pass_at_k_examples() {
        assert_eq!(pass_at_k(50, 0, 7).unwrap(), 0.0);
        assert!((pass_at_k(2, 1, 1).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(pass_at_k_exact(5, 2, 3).unwrap(), Ratio::new(9, 10));
        assert_eq!(pass_at_k(4, 1, 4).unwrap(), 1.0);
        assert!(pass_at_k(3, 4, 1).is_err());
        assert!(pass_at_k(3, 1, 0).is_err());
        assert_eq!(pass_at_k_clamped(0, 0, 5).unwrap(), 0.0);
        assert_eq!(pass_at_k_clamped(3, 1, 50).unwrap(), 1.0);
    }

    #[test]
    fn correlation_extremes() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(kendall_tau_b(&x, &x).unwrap(), 1.0);
        assert_eq!(kendall_tau_b(&x, &neg).unwrap(), -1.0);
        assert_eq!(pearson(&x, &[1.0; 4]), Err(MetricsError::ConstantInput));
        assert_eq!(kendall_tau_b(&x, &[1.0; 4]), Err(MetricsError::AllTied));
        assert_eq!(pearson(&[1.0], &[1.0]), Err(MetricsError::TooFewPoints(1)));
    }

    #[test]
    fn kendall_with_ties_small() {
        // pairs: (1,1) (1,2) (2,2) (3,1)
        let c = kendall_counts(&[1.0, 1.0, 2.0, 3.0], &[1.0, 2.0, 2.0, 1.0]).unwrap();
        assert_eq!(c.pairs, 6);
        assert_eq!(c.ties_x, 1);
        assert_eq!(c.ties_y, 2);
        // concordant: (1,1)-(2,2); discordant: (1,2)-(3,1), (2,2)-(3,1)
        assert_eq!(c.score, 1 - 2);
    }

    #[test]
    fn aggregate_rates() {
        let o = |id: &str, surv: usize, v: Option<Verdict>, correct: Option<usize>| ProblemOutcome {
            problem_id: id.into(),
            pool_size: 4,
            survivors: surv,
            chosen_index: (surv > 0).then_some(0),
            beq_l: v,
            beq_plus: v,
            correct,
            human_label: None,
        };
        let rows = [
            o("a", 2, Some(Verdict::Equivalent), Some(1)),
            o("b", 1, Some(Verdict::NotProven), Some(0)),
            o("c", 0, None, None),
            o("d", 3, Some(Verdict::Equivalent), Some(3)),
        ];
        let r = aggregate_report("m", &rows, &[Metric::BeqL, Metric::BeqPlus], &[1, 4]).unwrap();
        assert_eq!(r.type_check_rate, 75.0);
        assert_eq!(r.beq_plus_rate, Some(50.0));
        assert_eq!(r.pass_at_k[1].rate, 50.0);
        assert!((r.pass_at_k[0].rate - 100.0 * (0.25 + 0.75) / 4.0).abs() < 1e-12);
        assert_eq!(r.human_accuracy, None);
        let md = report_markdown(&[r]);
        assert!(md.contains("| m | 75.0 | — | 50.0 | 50.0 | 25.0 | 50.0 |"), "{md}");

        let bad = [o("x", 1, None, Some(0))];
        assert!(matches!(
            aggregate_report("m", &bad, &[Metric::BeqPlus], &[]),
            Err(MetricsError::MissingVerdicts(_))
        ));
    }
}
