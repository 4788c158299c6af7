//! Evaluation harness: answer-quality metrics, latency, per-domain reports,
//! threshold sweeps, and LLM judging of the QA bank.

pub mod judge;
pub mod metrics;

use std::collections::BTreeMap;
use std::fmt::{Display, Write as _};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use judge::{judge_qa_quality, Dimension, JudgeError, QAQualityScores};
pub use metrics::{lcs_len, normalize_answer, rouge_l, token_f1};

use crate::router::{check_threshold, Answer, RouteMode, Router, RouterError};

pub const SWEEP_HEADER: &str = "threshold,direct_fraction,f1,latency_ms";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
    #[error("sweep needs at least two thresholds")]
    TooFewThresholds,
    #[error(transparent)]
    Router(#[from] RouterError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub query: String,
    pub answer: String,
    pub domain: String,
}

pub fn parse_dataset(text: &str) -> Result<Vec<DatasetRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| EvalError::BadRecord { line: i + 1, reason };
        let rec: DatasetRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if rec.query.trim().is_empty() {
            return Err(bad("empty query".into()));
        }
        if rec.answer.trim().is_empty() {
            return Err(bad("empty ground-truth answer".into()));
        }
        out.push(rec);
    }
    if out.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>, EvalError> {
    parse_dataset(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordResult {
    pub query: String,
    pub domain: String,
    pub ground_truth: String,
    pub answer: Option<String>,
    pub mode: Option<RouteMode>,
    pub top_score: Option<f32>,
    pub f1: f64,
    pub rouge_l: f64,
    /// Harness-side wall clock around the system call; 0 when not measured.
    pub latency_ms: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainStats {
    pub count: usize,
    /// Mean token F1 scaled to 0..100.
    pub f1: f64,
    pub rouge_l: f64,
    pub latency_s: f64,
    pub direct_fraction: f64,
    pub generated_fraction: f64,
    pub errors: usize,
    pub direct_latency_s: Option<f64>,
    pub generated_latency_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rouge_beta: f64,
    pub latency_reported: bool,
    pub threshold: Option<f64>,
    pub overall: DomainStats,
    pub per_domain: BTreeMap<String, DomainStats>,
    pub records: Vec<RecordResult>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn domain_stats(records: &[&RecordResult]) -> DomainStats {
    let n = records.len() as f64;
    let route = |m: RouteMode| records.iter().filter(move |r| r.mode == Some(m));
    let latency_of = |m: RouteMode| mean(route(m).map(|r| r.latency_ms / 1000.0));
    DomainStats {
        count: records.len(),
        f1: 100.0 * records.iter().map(|r| r.f1).sum::<f64>() / n,
        rouge_l: records.iter().map(|r| r.rouge_l).sum::<f64>() / n,
        latency_s: records.iter().map(|r| r.latency_ms / 1000.0).sum::<f64>() / n,
        direct_fraction: route(RouteMode::Direct).count() as f64 / n,
        generated_fraction: route(RouteMode::Generated).count() as f64 / n,
        errors: records.iter().filter(|r| r.error.is_some()).count(),
        direct_latency_s: latency_of(RouteMode::Direct),
        generated_latency_s: latency_of(RouteMode::Generated),
    }
}

/// Count-weighted combination of per-domain statistics.
fn combine(parts: &BTreeMap<String, DomainStats>) -> DomainStats {
    let total: usize = parts.values().map(|d| d.count).sum();
    let w = |f: fn(&DomainStats) -> f64| {
        parts.values().map(|d| f(d) * d.count as f64).sum::<f64>() / total as f64
    };
    let w_opt = |f: fn(&DomainStats) -> Option<f64>, share: fn(&DomainStats) -> f64| {
        let (sum, weight) = parts.values().fold((0.0, 0.0), |(s, wt), d| match f(d) {
            Some(v) => {
                let k = share(d) * d.count as f64;
                (s + v * k, wt + k)
            }
            None => (s, wt),
        });
        (weight > 0.0).then(|| sum / weight)
    };
    DomainStats {
        count: total,
        f1: w(|d| d.f1),
        rouge_l: w(|d| d.rouge_l),
        latency_s: w(|d| d.latency_s),
        direct_fraction: w(|d| d.direct_fraction),
        generated_fraction: w(|d| d.generated_fraction),
        errors: parts.values().map(|d| d.errors).sum(),
        direct_latency_s: w_opt(|d| d.direct_latency_s, |d| d.direct_fraction),
        generated_latency_s: w_opt(|d| d.generated_latency_s, |d| d.generated_fraction),
    }
}

fn score_record<E: Display>(rec: &DatasetRecord, outcome: Result<Answer, E>, latency_ms: f64) -> RecordResult {
    let base = RecordResult {
        query: rec.query.clone(),
        domain: rec.domain.clone(),
        ground_truth: rec.answer.clone(),
        answer: None,
        mode: None,
        top_score: None,
        f1: 0.0,
        rouge_l: 0.0,
        latency_ms,
        error: None,
    };
    match outcome {
        Ok(a) => RecordResult {
            f1: token_f1(&a.text, &rec.answer),
            rouge_l: rouge_l(&a.text, &rec.answer),
            mode: Some(a.mode),
            top_score: Some(a.top_score),
            answer: Some(a.text),
            ..base
        },
        Err(e) => RecordResult {
            error: Some(e.to_string()),
            ..base
        },
    }
}

pub fn summarize(records: Vec<RecordResult>, threshold: Option<f64>, latency_reported: bool) -> EvalReport {
    let mut by_domain: BTreeMap<String, Vec<&RecordResult>> = BTreeMap::new();
    for r in &records {
        by_domain.entry(r.domain.clone()).or_default().push(r);
    }
    let per_domain: BTreeMap<String, DomainStats> =
        by_domain.into_iter().map(|(d, rs)| (d, domain_stats(&rs))).collect();
    EvalReport {
        rouge_beta: 1.0,
        latency_reported,
        threshold,
        overall: combine(&per_domain),
        per_domain,
        records,
    }
}

/// Calls `system` once per record, sequentially, timing each call.
/// Failures score 0 and are kept in the report.
pub fn run_eval<F, E>(dataset: &[DatasetRecord], mut system: F) -> Result<EvalReport, EvalError>
where
    F: FnMut(&str) -> Result<Answer, E>,
    E: Display,
{
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let records = dataset
        .iter()
        .map(|rec| {
            let start = Instant::now();
            let outcome = system(&rec.query);
            let ms = start.elapsed().as_secs_f64() * 1000.0;
            score_record(rec, outcome, ms)
        })
        .collect();
    Ok(summarize(records, None, true))
}

/// Quality-only variant: queries run concurrently and latency is not reported.
pub fn run_eval_parallel<F, E>(dataset: &[DatasetRecord], system: F) -> Result<EvalReport, EvalError>
where
    F: Fn(&str) -> Result<Answer, E> + Sync,
    E: Display,
{
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let records = dataset
        .par_iter()
        .map(|rec| score_record(rec, system(&rec.query), 0.0))
        .collect();
    Ok(summarize(records, None, false))
}

pub fn eval_router(dataset: &[DatasetRecord], router: &Router, threshold: Option<f64>) -> Result<EvalReport, EvalError> {
    if let Some(t) = threshold {
        check_threshold(t)?;
    }
    let mut report = run_eval(dataset, |q| router.answer_query(q, threshold))?;
    report.threshold = Some(threshold.unwrap_or(router.config().threshold));
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub direct_fraction: f64,
    pub f1: f64,
    pub latency_ms: f64,
}

/// One full evaluation per threshold.
pub fn threshold_sweep(dataset: &[DatasetRecord], router: &Router, thresholds: &[f64]) -> Result<Vec<SweepRow>, EvalError> {
    if thresholds.len() < 2 {
        return Err(EvalError::TooFewThresholds);
    }
    for &t in thresholds {
        check_threshold(t)?;
    }
    thresholds
        .iter()
        .map(|&t| {
            let r = eval_router(dataset, router, Some(t))?;
            Ok(SweepRow {
                threshold: t,
                direct_fraction: r.overall.direct_fraction,
                f1: r.overall.f1,
                latency_ms: r.overall.latency_s * 1000.0,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        writeln!(out, "{},{:.6},{:.4},{:.3}", r.threshold, r.direct_fraction, r.f1, r.latency_ms).unwrap();
    }
    out
}

pub fn parse_thresholds(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("bad threshold {t:?}: {e}")))
        .collect()
}

impl EvalReport {
    /// Aligned text table of the per-domain and overall rows.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "F1 x100; ROUGE-L is the LCS F-measure with beta = {}; latency in seconds{}",
            self.rouge_beta,
            if self.latency_reported { "" } else { " (not measured)" }
        )
        .unwrap();
        if let Some(t) = self.threshold {
            writeln!(out, "threshold {t}").unwrap();
        }
        writeln!(
            out,
            "{:<16} {:>6} {:>8} {:>8} {:>10} {:>8} {:>7}",
            "domain", "count", "F1", "ROUGE-L", "latency_s", "direct", "errors"
        )
        .unwrap();
        let rows = self.per_domain.iter().map(|(d, s)| (d.as_str(), s)).chain([("overall", &self.overall)]);
        for (name, s) in rows {
            writeln!(
                out,
                "{:<16} {:>6} {:>8.2} {:>8.4} {:>10.4} {:>7.1}% {:>7}",
                name,
                s.count,
                s.f1,
                s.rouge_l,
                s.latency_s,
                s.direct_fraction * 100.0,
                s.errors
            )
            .unwrap();
        }
        out
    }
}
