//! 4-vs-1 cross-dataset experiments.
//!
//! A classifier is trained on the training splits of every registered
//! dataset except one, optionally augmented with synthetic material, and
//! scored on the test split of the held-out dataset.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{assemble_augmentation, merge_training_material, AugmentationSpec, SelectionManifest};
use crate::backend::{BackendClient, BackendDescriptor, StopReason, TrainingLog, TrainingSchedule};
use crate::corpus::{split_train_test, stratified_split, Dataset, Label, Origin, Split, DEFAULT_VAL_FRACTION};
use crate::error::{Error, Result};
use crate::genpipe::SyntheticCorpus;
use crate::metrics::{compute_prf, pair_with_baseline, MetricsRecord, RunContext};
use crate::util::{derive_seed, write_json, write_jsonl};

pub const BASELINE_CONDITION: &str = "4-vs-1";
pub const AUGMENTED_CONDITION: &str = "4-vs-1: Gen";

/// Hate-confidence cut-off used to turn scores into labels.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// A gold dataset with its fixed train and test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Dataset,
    pub test: Dataset,
}

impl SplitDataset {
    pub fn new(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<Self> {
        let (train, test) = split_train_test(dataset, test_fraction, seed)?;
        Ok(Self { train, test })
    }

    pub fn name(&self) -> &str {
        self.train.name()
    }
}

/// A training condition: gold only, or gold plus an augmentation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub name: String,
    #[serde(default)]
    pub augmentation: Option<AugmentationSpec>,
    /// Allow synthetic items derived from the held-out dataset.
    #[serde(default)]
    pub include_held_out: bool,
}

impl Condition {
    pub fn baseline() -> Self {
        Self {
            name: BASELINE_CONDITION.into(),
            augmentation: None,
            include_held_out: false,
        }
    }

    pub fn augmented(spec: AugmentationSpec) -> Self {
        Self {
            name: AUGMENTED_CONDITION.into(),
            augmentation: Some(spec),
            include_held_out: false,
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub plan_id: String,
    pub held_out: String,
    pub training_sets: Vec<String>,
    pub condition: String,
    pub augmentation: Option<AugmentationSpec>,
    pub include_held_out: bool,
    pub schedule: TrainingSchedule,
    pub backend: BackendDescriptor,
    pub seed: u64,
}

fn slug(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
            out.push(c);
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

/// Plans one cell: train on every registered dataset except `held_out`.
pub fn plan_4v1(
    registry: &[SplitDataset],
    held_out: &str,
    condition: &Condition,
    schedule: &TrainingSchedule,
    backend: &BackendDescriptor,
    seed: u64,
) -> Result<ExperimentPlan> {
    if !registry.iter().any(|d| d.name() == held_out) {
        return Err(Error::UnknownDataset { name: held_out.into() });
    }
    if registry.len() < 2 {
        return Err(Error::InvalidArgument("a 4-vs-1 plan needs at least two datasets".into()));
    }
    let training_sets: Vec<String> = registry
        .iter()
        .map(|d| d.name().to_string())
        .filter(|n| n != held_out)
        .collect();
    let augmentation = condition.augmentation.clone().map(|mut spec| {
        if !condition.include_held_out {
            spec.exclude_source_datasets.insert(held_out.to_string());
        }
        spec
    });
    Ok(ExperimentPlan {
        plan_id: format!("{}/{}/{}", slug(held_out), slug(&backend.name), slug(&condition.name)),
        held_out: held_out.into(),
        training_sets,
        condition: condition.name.clone(),
        augmentation,
        include_held_out: condition.include_held_out,
        schedule: schedule.clone(),
        backend: backend.clone(),
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub plan_id: String,
    pub n_train_gold: usize,
    pub n_train_synth: usize,
    /// Gold training items per contributing dataset.
    pub gold_per_dataset: BTreeMap<String, usize>,
    pub n_fit: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub held_out_sources_excluded: bool,
    pub selection: Option<SelectionManifest>,
    pub classifier_model_id: String,
    pub stop_reason: StopReason,
    pub best_eval: usize,
    pub seed: u64,
    pub decision_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub plan_id: String,
    pub metrics: MetricsRecord,
    pub training_log: TrainingLog,
    pub manifest: RunManifest,
}

/// Fails if any held-out text, or any synthetic item derived from the
/// held-out dataset when exclusion is on, reaches the training material.
fn audit_leakage(plan: &ExperimentPlan, held: &SplitDataset, material: &[crate::corpus::LabeledExample]) -> Result<()> {
    let held_texts: HashSet<&str> = held
        .train
        .examples()
        .iter()
        .chain(held.test.examples())
        .map(|e| e.text.as_str())
        .collect();
    if let Some(e) = material.iter().find(|e| held_texts.contains(e.text.as_str())) {
        return Err(Error::TestLeakage {
            detail: format!("training item `{}` repeats a text of held-out `{}`", e.id, plan.held_out),
        });
    }
    if !plan.include_held_out {
        if let Some(e) = material
            .iter()
            .find(|e| e.origin == Origin::Synthetic && e.source_dataset == plan.held_out)
        {
            return Err(Error::TestLeakage {
                detail: format!("synthetic item `{}` derives from held-out `{}`", e.id, plan.held_out),
            });
        }
    }
    Ok(())
}

/// Runs one plan. With `run_dir`, every artifact is written below it.
pub fn run_experiment(
    plan: &ExperimentPlan,
    registry: &[SplitDataset],
    corpora: &[SyntheticCorpus],
    client: &BackendClient,
    run_dir: Option<&Path>,
) -> Result<RunResult> {
    let find = |name: &str| {
        registry
            .iter()
            .find(|d| d.name() == name)
            .ok_or_else(|| Error::UnknownDataset { name: name.into() })
    };
    let held = find(&plan.held_out)?;
    let mut gold = Vec::new();
    let mut gold_per_dataset = BTreeMap::new();
    for name in &plan.training_sets {
        let d = find(name)?;
        gold_per_dataset.insert(name.clone(), d.train.len());
        gold.extend(d.train.examples().iter().cloned());
    }
    let (synthetic, selection) = match &plan.augmentation {
        Some(spec) => {
            let aug = assemble_augmentation(spec, corpora)?;
            (aug.examples, Some(aug.manifest))
        }
        None => (Vec::new(), None),
    };
    let n_train_gold = gold.len();
    let n_train_synth = synthetic.len();
    let material = merge_training_material(&gold, &synthetic, derive_seed(plan.seed, "xeval/merge"))?;
    audit_leakage(plan, held, &material)?;

    let (fit, val) = stratified_split(
        material.clone(),
        DEFAULT_VAL_FRACTION,
        derive_seed(plan.seed, "xeval/val"),
        Split::Train,
        Split::Val,
    )?;
    let schedule = TrainingSchedule {
        seed: plan.seed,
        ..plan.schedule.clone()
    };
    let (classifier, log) = client.train_classifier(&fit, &val, &schedule)?;

    let test = held.test.examples();
    let texts: Vec<String> = test.iter().map(|e| e.text.clone()).collect();
    let scores = client.predict(&classifier, &texts)?;
    let predictions: Vec<Label> = scores
        .iter()
        .map(|&s| if s >= DECISION_THRESHOLD { Label::Hate } else { Label::Nonhate })
        .collect();
    let gold_labels: Vec<Label> = test.iter().map(|e| e.label).collect();
    let metrics = compute_prf(
        &predictions,
        &gold_labels,
        RunContext::new(&plan.held_out, &plan.backend.name, &plan.condition),
    )?;

    let manifest = RunManifest {
        plan_id: plan.plan_id.clone(),
        n_train_gold,
        n_train_synth,
        gold_per_dataset,
        n_fit: fit.len(),
        n_val: val.len(),
        n_test: test.len(),
        held_out_sources_excluded: !plan.include_held_out,
        selection,
        classifier_model_id: classifier.model_id.clone(),
        stop_reason: log.stop_reason,
        best_eval: log.best_eval,
        seed: plan.seed,
        decision_threshold: DECISION_THRESHOLD,
    };
    if let Some(dir) = run_dir {
        write_json(&dir.join("config.json"), plan)?;
        write_jsonl(&dir.join("material.jsonl"), &material)?;
        let log_path = dir.join("training_log.jsonl");
        std::fs::write(&log_path, log.to_jsonl()).map_err(|e| Error::io(&log_path, e))?;
        write_json(&dir.join("metrics.json"), &metrics)?;
        write_json(&dir.join("manifest.json"), &manifest)?;
    }
    Ok(RunResult {
        plan_id: plan.plan_id.clone(),
        metrics,
        training_log: log,
        manifest,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub held_out: String,
    pub model: String,
    pub condition: String,
    pub outcome: std::result::Result<RunResult, CellError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    held_out: &'a str,
    model: &'a str,
    condition: &'a str,
    precision: Option<f64>,
    recall: Option<f64>,
    f1: Option<f64>,
    n_test: Option<usize>,
    n_train_gold: Option<usize>,
    n_train_synth: Option<usize>,
    error: Option<String>,
}

impl ResultTable {
    pub fn successes(&self) -> impl Iterator<Item = &RunResult> {
        self.rows.iter().filter_map(|r| r.outcome.as_ref().ok())
    }

    pub fn errors(&self) -> impl Iterator<Item = (&ResultRow, &CellError)> {
        self.rows.iter().filter_map(|r| r.outcome.as_ref().err().map(|e| (r, e)))
    }

    pub fn records(&self) -> Vec<MetricsRecord> {
        self.successes().map(|r| r.metrics.clone()).collect()
    }

    /// (baseline, augmented) pairs for every non-baseline condition.
    pub fn pairs(&self, baseline_condition: &str) -> Result<Vec<(MetricsRecord, MetricsRecord)>> {
        pair_with_baseline(&self.records(), baseline_condition)
    }

    /// Sorted by (held_out, model, condition); error cells leave the metric
    /// columns empty and fill the trailing `error` column.
    pub fn to_csv(&self) -> Result<String> {
        let mut rows: Vec<&ResultRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| (&a.held_out, &a.model, &a.condition).cmp(&(&b.held_out, &b.model, &b.condition)));
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            let ok = r.outcome.as_ref().ok();
            w.serialize(CsvRow {
                held_out: &r.held_out,
                model: &r.model,
                condition: &r.condition,
                precision: ok.map(|x| x.metrics.precision),
                recall: ok.map(|x| x.metrics.recall),
                f1: ok.map(|x| x.metrics.f1),
                n_test: ok.map(|x| x.manifest.n_test),
                n_train_gold: ok.map(|x| x.manifest.n_train_gold),
                n_train_synth: ok.map(|x| x.manifest.n_train_synth),
                error: r.outcome.as_ref().err().map(|e| format!("{}: {}", e.code, e.message)),
            })
            .map_err(|e| Error::Format(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Everything a suite needs besides the backends.
#[derive(Debug, Clone)]
pub struct SuiteSpec {
    /// Held-out datasets to cycle through; empty means all registered.
    pub held_out: Vec<String>,
    pub conditions: Vec<Condition>,
    pub schedule: TrainingSchedule,
    pub seed: u64,
    pub workers: usize,
    /// Root for per-cell run directories.
    pub out_dir: Option<PathBuf>,
}

/// Runs every (held_out, backend, condition) cell on a pool of
/// `spec.workers` threads. Cell failures are recorded, not propagated.
pub fn run_suite(
    registry: &[SplitDataset],
    clients: &[BackendClient],
    corpora: &[SyntheticCorpus],
    spec: &SuiteSpec,
) -> Result<ResultTable> {
    if registry.is_empty() || clients.is_empty() || spec.conditions.is_empty() {
        return Err(Error::Empty {
            what: "suite registry, backends or conditions".into(),
        });
    }
    let held_outs: Vec<String> = if spec.held_out.is_empty() {
        registry.iter().map(|d| d.name().to_string()).collect()
    } else {
        spec.held_out.clone()
    };
    let mut cells = Vec::new();
    for h in &held_outs {
        for c in clients {
            for cond in &spec.conditions {
                cells.push((h.clone(), c.clone(), cond.clone()));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    let rows = pool.install(|| {
        cells
            .par_iter()
            .map(|(held_out, client, cond)| {
                let outcome = plan_4v1(registry, held_out, cond, &spec.schedule, client.descriptor(), spec.seed)
                    .and_then(|plan| {
                        let dir = spec.out_dir.as_ref().map(|d| d.join("runs").join(&plan.plan_id));
                        run_experiment(&plan, registry, corpora, client, dir.as_deref())
                    })
                    .map_err(|e| CellError {
                        code: e.code().to_string(),
                        message: e.to_string(),
                    });
                ResultRow {
                    held_out: held_out.clone(),
                    model: client.name().to_string(),
                    condition: cond.name.clone(),
                    outcome,
                }
            })
            .collect::<Vec<_>>()
    });
    Ok(ResultTable { rows })
}
