//! Hate-class precision/recall/F1, relative improvement between a baseline
//! and an augmented run, grouped summaries, and CSV/Markdown reports.
//!
//! Arithmetic is carried at full precision; rounding happens only when a
//! value is rendered. Rendering uses the standard formatter, which rounds the
//! exact binary value half-to-even.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

/// Which experiment cell a record belongs to.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RunContext {
    pub held_out: String,
    pub model: String,
    pub condition: String,
}

impl RunContext {
    pub fn new(held_out: impl Into<String>, model: impl Into<String>, condition: impl Into<String>) -> Self {
        Self {
            held_out: held_out.into(),
            model: model.into(),
            condition: condition.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub context: RunContext,
    /// Absent for records loaded from published tables.
    pub counts: Option<ConfusionCounts>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a 0/0 ratio was reported as 0.
    #[serde(default)]
    pub degenerate: bool,
}

fn ratio(num: f64, den: f64) -> (f64, bool) {
    if den == 0.0 {
        (0.0, true)
    } else {
        (num / den, false)
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    ratio(2.0 * precision * recall, precision + recall).0
}

impl MetricsRecord {
    pub fn from_counts(context: RunContext, counts: ConfusionCounts) -> Self {
        let tp = counts.tp as f64;
        let (precision, dp) = ratio(tp, tp + counts.fp as f64);
        let (recall, dr) = ratio(tp, tp + counts.fn_ as f64);
        let (f1, df) = ratio(2.0 * precision * recall, precision + recall);
        Self {
            context,
            counts: Some(counts),
            precision,
            recall,
            f1,
            degenerate: dp || dr || df,
        }
    }

    pub fn from_scores(context: RunContext, precision: f64, recall: f64, f1: f64) -> Self {
        Self {
            context,
            counts: None,
            precision,
            recall,
            f1,
            degenerate: false,
        }
    }

    pub fn n_scored(&self) -> Option<u64> {
        self.counts.map(|c| c.tp + c.fp + c.fn_ + c.tn)
    }
}

/// Confusion counts with HATE as the positive class.
pub fn compute_prf(predictions: &[Label], gold: &[Label], context: RunContext) -> Result<MetricsRecord> {
    if predictions.len() != gold.len() {
        return Err(Error::LengthMismatch {
            predictions: predictions.len(),
            gold: gold.len(),
        });
    }
    if gold.is_empty() {
        return Err(Error::Empty {
            what: "prediction list".into(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (p, g) in predictions.iter().zip(gold) {
        match (p, g) {
            (Label::Hate, Label::Hate) => c.tp += 1,
            (Label::Hate, Label::Nonhate) => c.fp += 1,
            (Label::Nonhate, Label::Hate) => c.fn_ += 1,
            (Label::Nonhate, Label::Nonhate) => c.tn += 1,
        }
    }
    Ok(MetricsRecord::from_counts(context, c))
}

/// Percent changes `100 * (augmented - baseline) / baseline`; `None` where
/// the baseline value is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub precision_pct: Option<f64>,
    pub recall_pct: Option<f64>,
    pub f1_pct: Option<f64>,
}

impl Improvement {
    pub fn has_zero_baseline(&self) -> bool {
        self.precision_pct.is_none() || self.recall_pct.is_none() || self.f1_pct.is_none()
    }

    fn get(&self, m: usize) -> Option<f64> {
        [self.precision_pct, self.recall_pct, self.f1_pct][m]
    }
}

fn pct_change(old: f64, new: f64) -> Option<f64> {
    (old != 0.0).then(|| 100.0 * (new - old) / old)
}

fn check_pair(baseline: &MetricsRecord, augmented: &MetricsRecord) -> Result<()> {
    let (b, a) = (&baseline.context, &augmented.context);
    if b.held_out != a.held_out || b.model != a.model {
        return Err(Error::InconsistentPair {
            detail: format!(
                "baseline {}/{} paired with {}/{}",
                b.held_out, b.model, a.held_out, a.model
            ),
        });
    }
    Ok(())
}

pub fn relative_improvement(baseline: &MetricsRecord, augmented: &MetricsRecord) -> Result<Improvement> {
    check_pair(baseline, augmented)?;
    Ok(Improvement {
        precision_pct: pct_change(baseline.precision, augmented.precision),
        recall_pct: pct_change(baseline.recall, augmented.recall),
        f1_pct: pct_change(baseline.f1, augmented.f1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Model,
    Condition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "name", rename_all = "lowercase")]
pub enum Grouping {
    Model(String),
    Condition(String),
    Overall,
}

impl Grouping {
    pub fn label(&self) -> &str {
        match self {
            Grouping::Model(n) | Grouping::Condition(n) => n,
            Grouping::Overall => "overall",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementSummary {
    pub grouping: Grouping,
    pub delta_precision_pct: Option<f64>,
    pub delta_recall_pct: Option<f64>,
    pub delta_f1_pct: Option<f64>,
    pub n_pairs: usize,
    /// Pairs where at least one delta was undefined and left out.
    pub n_zero_baseline: usize,
}

fn mean(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Per-model summaries (first-appearance order) plus an overall summary.
pub fn summarize(rows: &[(MetricsRecord, MetricsRecord)]) -> Result<Vec<ImprovementSummary>> {
    summarize_by(rows, GroupBy::Model)
}

/// Mean per-experiment improvement for each group, then an overall row
/// that is the mean of the group means.
pub fn summarize_by(rows: &[(MetricsRecord, MetricsRecord)], by: GroupBy) -> Result<Vec<ImprovementSummary>> {
    if rows.is_empty() {
        return Err(Error::Empty {
            what: "improvement rows".into(),
        });
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<Improvement>> = BTreeMap::new();
    for (base, aug) in rows {
        if base.context.condition == aug.context.condition {
            return Err(Error::InconsistentPair {
                detail: format!(
                    "both sides of {}/{} have condition `{}`",
                    base.context.held_out, base.context.model, base.context.condition
                ),
            });
        }
        let imp = relative_improvement(base, aug)?;
        let key = match by {
            GroupBy::Model => aug.context.model.clone(),
            GroupBy::Condition => aug.context.condition.clone(),
        };
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(imp);
    }
    let mut out: Vec<ImprovementSummary> = order
        .into_iter()
        .map(|key| {
            let imps = &groups[&key];
            ImprovementSummary {
                grouping: match by {
                    GroupBy::Model => Grouping::Model(key.clone()),
                    GroupBy::Condition => Grouping::Condition(key.clone()),
                },
                delta_precision_pct: mean(imps.iter().map(|i| i.get(0))),
                delta_recall_pct: mean(imps.iter().map(|i| i.get(1))),
                delta_f1_pct: mean(imps.iter().map(|i| i.get(2))),
                n_pairs: imps.len(),
                n_zero_baseline: imps.iter().filter(|i| i.has_zero_baseline()).count(),
            }
        })
        .collect();
    let overall = ImprovementSummary {
        grouping: Grouping::Overall,
        delta_precision_pct: mean(out.iter().map(|s| s.delta_precision_pct)),
        delta_recall_pct: mean(out.iter().map(|s| s.delta_recall_pct)),
        delta_f1_pct: mean(out.iter().map(|s| s.delta_f1_pct)),
        n_pairs: rows.len(),
        n_zero_baseline: out.iter().map(|s| s.n_zero_baseline).sum(),
    };
    out.push(overall);
    Ok(out)
}

/// Pairs every record whose condition differs from `baseline_condition`
/// with the baseline record of the same held-out dataset and model.
pub fn pair_with_baseline(records: &[MetricsRecord], baseline_condition: &str) -> Result<Vec<(MetricsRecord, MetricsRecord)>> {
    let baselines: BTreeMap<(&str, &str), &MetricsRecord> = records
        .iter()
        .filter(|r| r.context.condition == baseline_condition)
        .map(|r| ((r.context.held_out.as_str(), r.context.model.as_str()), r))
        .collect();
    records
        .iter()
        .filter(|r| r.context.condition != baseline_condition)
        .map(|aug| {
            let key = (aug.context.held_out.as_str(), aug.context.model.as_str());
            baselines
                .get(&key)
                .map(|b| ((*b).clone(), aug.clone()))
                .ok_or_else(|| Error::InconsistentPair {
                    detail: format!(
                        "no `{baseline_condition}` record for {}/{}",
                        aug.context.held_out, aug.context.model
                    ),
                })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub title: Option<String>,
    pub records: Vec<MetricsRecord>,
    pub summaries: Vec<ImprovementSummary>,
}

pub fn render_metric(v: f64) -> String {
    format!("{v:.3}")
}

pub fn render_delta(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.1}%"),
        None => "n/a".to_string(),
    }
}

/// Renders a report. Records are ordered by (held_out, model, condition);
/// summaries keep their given order. CSV output holds the records, or the
/// summaries when there are no records.
pub fn emit_report(report: &Report, format: ReportFormat) -> Result<String> {
    if report.records.is_empty() && report.summaries.is_empty() {
        return Err(Error::Empty {
            what: "report input".into(),
        });
    }
    let mut records = report.records.clone();
    records.sort_by(|a, b| a.context.cmp(&b.context));
    match format {
        ReportFormat::Csv => Ok(if records.is_empty() {
            summaries_csv(&report.summaries)
        } else {
            metrics_csv(&records)
        }),
        ReportFormat::Markdown => Ok(markdown(report.title.as_deref(), &records, &report.summaries)),
    }
}

fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["held_out", "model", "condition", "precision", "recall", "f1"]).expect("in-memory");
    for r in records {
        w.write_record([
            r.context.held_out.as_str(),
            &r.context.model,
            &r.context.condition,
            &render_metric(r.precision),
            &render_metric(r.recall),
            &render_metric(r.f1),
        ])
        .expect("in-memory");
    }
    String::from_utf8(w.into_inner().expect("in-memory")).expect("utf8")
}

fn summaries_csv(summaries: &[ImprovementSummary]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["group", "delta_precision_pct", "delta_recall_pct", "delta_f1_pct"]).expect("in-memory");
    let num = |v: Option<f64>| v.map(|v| format!("{v:.1}")).unwrap_or_default();
    for s in summaries {
        w.write_record([
            s.grouping.label(),
            &num(s.delta_precision_pct),
            &num(s.delta_recall_pct),
            &num(s.delta_f1_pct),
        ])
        .expect("in-memory");
    }
    String::from_utf8(w.into_inner().expect("in-memory")).expect("utf8")
}

fn markdown(title: Option<&str>, records: &[MetricsRecord], summaries: &[ImprovementSummary]) -> String {
    let mut out = String::new();
    if let Some(t) = title {
        let _ = writeln!(out, "# {t}\n");
    }
    let mut current: Option<&str> = None;
    for r in records {
        if current != Some(r.context.held_out.as_str()) {
            if current.is_some() {
                out.push('\n');
            }
            current = Some(&r.context.held_out);
            let _ = writeln!(out, "## Held out: {}\n", r.context.held_out);
            out.push_str("| model | condition | precision | recall | f1 |\n");
            out.push_str("|---|---|---:|---:|---:|\n");
        }
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} |",
            r.context.model,
            r.context.condition,
            render_metric(r.precision),
            render_metric(r.recall),
            render_metric(r.f1)
        );
    }
    let (groups, overall): (Vec<_>, Vec<_>) = summaries.iter().partition(|s| s.grouping != Grouping::Overall);
    if !groups.is_empty() {
        let what = match groups[0].grouping {
            Grouping::Condition(_) => "condition",
            _ => "model",
        };
        if !out.is_empty() {
            out.push('\n');
        }
        let _ = writeln!(out, "## Average improvement per {what}\n");
        let _ = writeln!(out, "| {what} | Δ precision | Δ recall | Δ f1 |");
        out.push_str("|---|---:|---:|---:|\n");
        for s in groups {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} |",
                s.grouping.label(),
                render_delta(s.delta_precision_pct),
                render_delta(s.delta_recall_pct),
                render_delta(s.delta_f1_pct)
            );
        }
    }
    for s in overall {
        let _ = writeln!(
            out,
            "\n## Overall average improvement\n\n| Δ precision | Δ recall | Δ f1 |\n|---:|---:|---:|\n| {} | {} | {} |",
            render_delta(s.delta_precision_pct),
            render_delta(s.delta_recall_pct),
            render_delta(s.delta_f1_pct)
        );
    }
    out
}

#[derive(Debug, Deserialize)]
struct MetricsRow {
    held_out: String,
    model: String,
    condition: String,
    precision: f64,
    recall: f64,
    f1: f64,
}

/// Parses `held_out,model,condition,precision,recall,f1` CSV (the published
/// table fixture format, and the CSV produced by [`emit_report`]). Extra
/// columns are ignored.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.deserialize::<MetricsRow>()
        .map(|row| {
            let row = row.map_err(|e| Error::Format(format!("metrics csv: {e}")))?;
            Ok(MetricsRecord::from_scores(
                RunContext::new(row.held_out, row.model, row.condition),
                row.precision,
                row.recall,
                row.f1,
            ))
        })
        .collect()
}
