//! Declarative end-to-end runs.
//!
//! A TOML [`RunConfig`] names the gold datasets, backends, corpus build,
//! augmentation conditions, suite and zero-shot settings. Each stage writes
//! into the output directory and leaves a record under `stages/` holding
//! the hash of its inputs; a stage whose inputs hash the same as its record
//! is skipped.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backend::{
    BackendClient, BackendDescriptor, Capability, HttpBackend, ReferenceBackend, SubprocessBackend, TrainingSchedule, Transport,
};
use crate::corpus::{read_raw_records, ingest, Dataset, LabelMap, LabeledExample, DEFAULT_TEST_FRACTION};
use crate::error::{Error, Result};
use crate::genpipe::{build_synthetic_corpus, CorpusBuildConfig, SyntheticCorpus};
use crate::metrics::{emit_report, pair_with_baseline, summarize, summarize_by, GroupBy, MetricsRecord, Report, ReportFormat};
use crate::util::{derive_seed, hash_json, read_json, read_jsonl, sha256_hex, write_json, write_jsonl, write_text};
use crate::xeval::{plan_4v1, run_suite, Condition, ResultTable, SplitDataset, SuiteSpec, BASELINE_CONDITION};
use crate::zeroshot::{evaluate_zero_shot, CompletionClient, CompletionClientConfig, HttpCompletionClient, PromptTemplate, StubCompletionServer, StubReply};

pub const CONFIG_VERSION: u32 = 1;

/// Environment variable read for the completion API key unless the config
/// names another.
pub const DEFAULT_API_KEY_ENV: &str = "SYNTHAUG_COMPLETION_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    /// `.jsonl` or `.csv` with `id`, `text`, `label`; relative to the config.
    pub path: PathBuf,
    /// Raw label to target (`hate`, `nonhate` or `discard`).
    pub labels: BTreeMap<String, crate::corpus::LabelTarget>,
    #[serde(default)]
    pub lenient: bool,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_test_fraction() -> f64 {
    DEFAULT_TEST_FRACTION
}

impl DatasetConfig {
    fn label_map(&self) -> LabelMap {
        let map = LabelMap {
            map: self.labels.clone(),
            ..LabelMap::default()
        };
        if self.lenient {
            map.lenient()
        } else {
            map
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Reference,
    Subprocess,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub name: String,
    pub kind: BackendKind,
    /// Subprocess command; `{self}` expands to the running executable.
    #[serde(default)]
    pub command: Vec<String>,
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    #[serde(default)]
    pub url: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_pool_size() -> usize {
    1
}

fn default_timeout_ms() -> u64 {
    60_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusStageConfig {
    /// Backend used for the fidelity classifier and the generators.
    pub backend: String,
    #[serde(default)]
    pub build: CorpusBuildConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalCorpusConfig {
    pub name: String,
    /// Synthetic examples in the corpus JSON Lines format.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    /// Empty means every declared dataset.
    #[serde(default)]
    pub held_out: Vec<String>,
    pub models: Vec<String>,
    #[serde(default = "default_baseline")]
    pub baseline: String,
    pub conditions: Vec<Condition>,
}

fn default_baseline() -> String {
    BASELINE_CONDITION.into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZeroShotConfig {
    #[serde(default)]
    pub enabled: bool,
    /// Empty means every declared dataset.
    #[serde(default)]
    pub datasets: Vec<String>,
    #[serde(default = "default_sample_fraction")]
    pub sample_fraction: f64,
    #[serde(default)]
    pub client: CompletionClientConfig,
    #[serde(default)]
    pub template: PromptTemplate,
    /// Serve completions from the bundled stub instead of `client.endpoint`:
    /// `toy-keyword` or `constant:<text>`.
    #[serde(default)]
    pub stub: Option<String>,
}

fn default_sample_fraction() -> f64 {
    crate::zeroshot::DEFAULT_SAMPLE_FRACTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub datasets: Vec<DatasetConfig>,
    #[serde(default)]
    pub backends: Vec<BackendConfig>,
    #[serde(default)]
    pub schedule: TrainingSchedule,
    #[serde(default)]
    pub corpus: Option<CorpusStageConfig>,
    #[serde(default)]
    pub external_corpora: Vec<ExternalCorpusConfig>,
    #[serde(default)]
    pub suite: Option<SuiteConfig>,
    #[serde(default)]
    pub zeroshot: Option<ZeroShotConfig>,
    /// Directory relative paths resolve against; the config file's folder.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_workers() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::ConfigInvalid {
        field: field.into(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let field = e.span().map(|s| format!("bytes {}..{}", s.start, s.end)).unwrap_or_else(|| "<document>".into());
            invalid(field, e.message().to_string())
        })?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(invalid("version", format!("unsupported version {}, expected {CONFIG_VERSION}", self.version)));
        }
        if self.workers == 0 {
            return Err(invalid("workers", "must be >= 1"));
        }
        if self.datasets.is_empty() {
            return Err(invalid("datasets", "at least one dataset is required"));
        }
        let mut names = BTreeSet::new();
        for (i, d) in self.datasets.iter().enumerate() {
            if !names.insert(d.name.as_str()) {
                return Err(invalid(format!("datasets[{i}].name"), format!("duplicate dataset `{}`", d.name)));
            }
            if !self.resolve(&d.path).exists() {
                return Err(invalid(format!("datasets[{i}].path"), format!("{} does not exist", d.path.display())));
            }
            if !(0.0..1.0).contains(&d.test_fraction) {
                return Err(invalid(format!("datasets[{i}].test_fraction"), "must lie in [0, 1)"));
            }
        }
        let mut backends = BTreeSet::new();
        for (i, b) in self.backends.iter().enumerate() {
            if !backends.insert(b.name.as_str()) {
                return Err(invalid(format!("backends[{i}].name"), format!("duplicate backend `{}`", b.name)));
            }
            match b.kind {
                BackendKind::Subprocess if b.command.is_empty() => {
                    return Err(invalid(format!("backends[{i}].command"), "required for subprocess backends"))
                }
                BackendKind::Http if b.url.is_none() => {
                    return Err(invalid(format!("backends[{i}].url"), "required for http backends"))
                }
                _ => {}
            }
        }
        self.schedule.validate()?;
        let mut corpora = BTreeSet::new();
        if let Some(c) = &self.corpus {
            if !backends.contains(c.backend.as_str()) {
                return Err(invalid("corpus.backend", format!("undeclared backend `{}`", c.backend)));
            }
            c.build.schedule.validate().map_err(|e| invalid("corpus.schedule", e.to_string()))?;
            corpora.insert(c.build.name.as_str());
        }
        for (i, e) in self.external_corpora.iter().enumerate() {
            if !corpora.insert(e.name.as_str()) {
                return Err(invalid(format!("external_corpora[{i}].name"), format!("duplicate corpus `{}`", e.name)));
            }
            if !self.resolve(&e.path).exists() {
                return Err(invalid(format!("external_corpora[{i}].path"), format!("{} does not exist", e.path.display())));
            }
        }
        if let Some(s) = &self.suite {
            for (i, m) in s.models.iter().enumerate() {
                if !backends.contains(m.as_str()) {
                    return Err(invalid(format!("suite.models[{i}]"), format!("undeclared backend `{m}`")));
                }
            }
            if s.models.is_empty() {
                return Err(invalid("suite.models", "at least one model is required"));
            }
            for (i, h) in s.held_out.iter().enumerate() {
                if !names.contains(h.as_str()) {
                    return Err(invalid(format!("suite.held_out[{i}]"), format!("undeclared dataset `{h}`")));
                }
            }
            if s.conditions.is_empty() {
                return Err(invalid("suite.conditions", "at least one condition is required"));
            }
            let mut conds = BTreeSet::new();
            for (i, c) in s.conditions.iter().enumerate() {
                if !conds.insert(c.name.as_str()) {
                    return Err(invalid(format!("suite.conditions[{i}].name"), format!("duplicate condition `{}`", c.name)));
                }
                if let Some(a) = &c.augmentation {
                    for (j, src) in a.sources.iter().enumerate() {
                        if !corpora.contains(src.corpus.as_str()) {
                            return Err(invalid(
                                format!("suite.conditions[{i}].augmentation.sources[{j}].corpus"),
                                format!("undeclared corpus `{}`", src.corpus),
                            ));
                        }
                    }
                    let sum: f64 = a.sources.iter().map(|s| s.weight).sum();
                    if a.total_count > 0 && (sum - 1.0).abs() > 1e-9 {
                        return Err(invalid(format!("suite.conditions[{i}].augmentation.sources"), format!("weights sum to {sum}")));
                    }
                }
            }
        }
        if let Some(z) = &self.zeroshot {
            for (i, d) in z.datasets.iter().enumerate() {
                if !names.contains(d.as_str()) {
                    return Err(invalid(format!("zeroshot.datasets[{i}]"), format!("undeclared dataset `{d}`")));
                }
            }
            if !(z.sample_fraction > 0.0 && z.sample_fraction <= 1.0) {
                return Err(invalid("zeroshot.sample_fraction", "must lie in (0, 1]"));
            }
            z.client.validate()?;
            z.template.validate()?;
            if let Some(stub) = &z.stub {
                if stub != "toy-keyword" && !stub.starts_with("constant:") {
                    return Err(invalid("zeroshot.stub", format!("unknown stub `{stub}`")));
                }
            }
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    BuildCorpus,
    Assemble,
    Xeval,
    Zeroshot,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::BuildCorpus => "build-corpus",
            Stage::Assemble => "assemble",
            Stage::Xeval => "xeval",
            Stage::Zeroshot => "zeroshot",
            Stage::Report => "report",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ran,
    Unchanged,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub config_hash: String,
    pub input_hash: String,
    pub outputs: Vec<String>,
}

/// Error report written to `error.json` when a stage fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub code: String,
    pub message: String,
    pub stage: Option<Stage>,
    pub config_hash: Option<String>,
}

impl ErrorReport {
    pub fn new(err: &Error, stage: Option<Stage>, config_hash: Option<String>) -> Self {
        Self {
            code: err.code().into(),
            message: err.to_string(),
            stage,
            config_hash,
        }
    }
}

pub struct Pipeline {
    config: RunConfig,
    out: PathBuf,
    config_hash: String,
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let out = config.resolve(&config.output_dir);
        let config_hash = config.hash();
        Ok(Self { config, out, config_hash })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    /// Stages executed by `all`, in order.
    pub fn plan_all(&self) -> Vec<Stage> {
        let mut stages = vec![Stage::Ingest];
        if self.config.corpus.is_some() {
            stages.push(Stage::BuildCorpus);
        }
        if let Some(s) = &self.config.suite {
            if s.conditions.iter().any(|c| c.augmentation.is_some()) {
                stages.push(Stage::Assemble);
            }
            stages.push(Stage::Xeval);
        }
        if self.config.zeroshot.as_ref().is_some_and(|z| z.enabled) {
            stages.push(Stage::Zeroshot);
        }
        if self.config.suite.is_some() || self.config.zeroshot.as_ref().is_some_and(|z| z.enabled) {
            stages.push(Stage::Report);
        }
        stages
    }

    pub fn run_all(&self) -> Result<Vec<(Stage, StageStatus)>> {
        self.plan_all().into_iter().map(|s| self.run_stage(s).map(|st| (s, st))).collect()
    }

    fn needs_corpus(&self) -> bool {
        let Some(corpus) = &self.config.corpus else { return false };
        self.config.suite.as_ref().is_some_and(|s| {
            s.conditions
                .iter()
                .filter_map(|c| c.augmentation.as_ref())
                .any(|a| a.sources.iter().any(|src| src.corpus == corpus.build.name))
        })
    }

    fn upstream(&self, stage: Stage) -> Vec<Stage> {
        match stage {
            Stage::Ingest => vec![],
            Stage::BuildCorpus | Stage::Zeroshot => vec![Stage::Ingest],
            Stage::Assemble | Stage::Xeval => {
                let mut v = vec![Stage::Ingest];
                if self.needs_corpus() {
                    v.push(Stage::BuildCorpus);
                }
                v
            }
            Stage::Report => {
                let mut v = Vec::new();
                if self.config.suite.is_some() {
                    v.push(Stage::Xeval);
                }
                if self.config.zeroshot.as_ref().is_some_and(|z| z.enabled) {
                    v.push(Stage::Zeroshot);
                }
                v
            }
        }
    }

    /// Hash of everything a stage reads: its config section, input file
    /// contents and the input hashes of its upstream stages.
    pub fn input_hash(&self, stage: Stage) -> Result<String> {
        let c = &self.config;
        let upstream: Vec<String> = self
            .upstream(stage)
            .into_iter()
            .map(|s| self.input_hash(s))
            .collect::<Result<_>>()?;
        let section = match stage {
            Stage::Ingest => {
                let files: Vec<String> = c
                    .datasets
                    .iter()
                    .map(|d| file_hash(&c.resolve(&d.path)))
                    .collect::<Result<_>>()?;
                serde_json::json!({ "datasets": c.datasets, "files": files, "seed": c.seed })
            }
            Stage::BuildCorpus => serde_json::json!({ "corpus": c.corpus, "backends": c.backends, "seed": c.seed }),
            Stage::Assemble | Stage::Xeval => {
                let files: Vec<String> = c
                    .external_corpora
                    .iter()
                    .map(|e| file_hash(&c.resolve(&e.path)))
                    .collect::<Result<_>>()?;
                serde_json::json!({
                    "suite": c.suite, "external": c.external_corpora, "files": files,
                    "schedule": c.schedule, "backends": c.backends, "seed": c.seed,
                })
            }
            Stage::Zeroshot => serde_json::json!({ "zeroshot": c.zeroshot, "seed": c.seed }),
            Stage::Report => serde_json::json!({ "suite": c.suite }),
        };
        Ok(hash_json(&serde_json::json!({ "stage": stage, "section": section, "upstream": upstream })))
    }

    fn record_path(&self, stage: Stage) -> PathBuf {
        self.out.join("stages").join(format!("{}.json", stage.name()))
    }

    fn read_record(&self, stage: Stage) -> Option<StageRecord> {
        read_json(&self.record_path(stage)).ok()
    }

    fn is_current(&self, stage: Stage, input_hash: &str) -> bool {
        self.read_record(stage).is_some_and(|r| {
            r.input_hash == input_hash && r.outputs.iter().all(|o| self.out.join(o).exists())
        })
    }

    /// Runs one stage unless its record shows the same inputs.
    pub fn run_stage(&self, stage: Stage) -> Result<StageStatus> {
        for up in self.upstream(stage) {
            let h = self.input_hash(up)?;
            if !self.is_current(up, &h) {
                return Err(Error::StageDependencyMissing {
                    stage: stage.name().into(),
                    missing: up.name().into(),
                });
            }
        }
        let input_hash = self.input_hash(stage)?;
        if self.is_current(stage, &input_hash) {
            log::info!("{stage}: unchanged");
            return Ok(StageStatus::Unchanged);
        }
        let outputs = match stage {
            Stage::Ingest => self.ingest()?,
            Stage::BuildCorpus => match self.build_corpus()? {
                Some(o) => o,
                None => return Ok(StageStatus::Skipped),
            },
            Stage::Assemble => self.assemble()?,
            Stage::Xeval => self.xeval()?,
            Stage::Zeroshot => self.zeroshot()?,
            Stage::Report => self.report()?,
        };
        write_json(
            &self.record_path(stage),
            &StageRecord {
                stage,
                config_hash: self.config_hash.clone(),
                input_hash,
                outputs,
            },
        )?;
        log::info!("{stage}: done");
        Ok(StageStatus::Ran)
    }

    /// Writes `error.json` into the output directory.
    pub fn write_error(&self, err: &Error, stage: Option<Stage>) -> Result<()> {
        write_json(&self.out.join("error.json"), &ErrorReport::new(err, stage, Some(self.config_hash.clone())))
    }

    fn client_for(&self, name: &str) -> Result<BackendClient> {
        let b = self
            .config
            .backends
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| invalid("backends", format!("undeclared backend `{name}`")))?;
        Ok(match b.kind {
            BackendKind::Reference => BackendClient::new(ReferenceBackend::new(&b.name)),
            BackendKind::Subprocess => {
                let exe = std::env::current_exe().map_err(|e| Error::io(Path::new("<current exe>"), e))?;
                let command = b
                    .command
                    .iter()
                    .map(|a| a.replace("{self}", &exe.to_string_lossy()))
                    .collect();
                let desc = BackendDescriptor::new(&b.name, Capability::ALL, Transport::Subprocess);
                BackendClient::new(SubprocessBackend::new(desc, command, b.pool_size)?)
            }
            BackendKind::Http => {
                let desc = BackendDescriptor::new(&b.name, Capability::ALL, Transport::Http);
                BackendClient::new(HttpBackend::new(
                    desc,
                    b.url.clone().expect("validated"),
                    Duration::from_millis(b.timeout_ms),
                ))
            }
        })
    }

    fn dataset_dir(&self, name: &str) -> PathBuf {
        self.out.join("ingest").join(name)
    }

    fn ingest(&self) -> Result<Vec<String>> {
        let mut outputs = Vec::new();
        let mut cards = BTreeMap::new();
        for d in &self.config.datasets {
            let records = read_raw_records(&self.config.resolve(&d.path))?;
            let dataset = ingest(&records, &d.label_map(), &d.name)?;
            let split = SplitDataset::new(&dataset, d.test_fraction, derive_seed(self.config.seed, &format!("split/{}", d.name)))?;
            let dir = self.dataset_dir(&d.name);
            split.train.write_jsonl(&dir.join("train.jsonl"))?;
            split.test.write_jsonl(&dir.join("test.jsonl"))?;
            cards.insert(d.name.clone(), serde_json::json!({
                "card": dataset.card(),
                "train": split.train.len(),
                "test": split.test.len(),
            }));
            outputs.push(format!("ingest/{}/train.jsonl", d.name));
            outputs.push(format!("ingest/{}/test.jsonl", d.name));
        }
        write_json(
            &self.out.join("ingest/datasets.json"),
            &serde_json::json!({ "config_hash": self.config_hash, "datasets": cards }),
        )?;
        outputs.push("ingest/datasets.json".into());
        Ok(outputs)
    }

    /// Train/test splits written by `ingest`.
    pub fn load_registry(&self) -> Result<Vec<SplitDataset>> {
        self.config
            .datasets
            .iter()
            .map(|d| {
                let dir = self.dataset_dir(&d.name);
                Ok(SplitDataset {
                    train: Dataset::read_jsonl(&d.name, &dir.join("train.jsonl"))?,
                    test: Dataset::read_jsonl(&d.name, &dir.join("test.jsonl"))?,
                })
            })
            .collect()
    }

    fn corpus_dir(&self) -> Option<PathBuf> {
        self.config.corpus.as_ref().map(|c| self.out.join("corpus").join(&c.build.name))
    }

    fn build_corpus(&self) -> Result<Option<Vec<String>>> {
        let Some(c) = &self.config.corpus else { return Ok(None) };
        let client = self.client_for(&c.backend)?;
        let trains: Vec<Dataset> = self.load_registry()?.into_iter().map(|d| d.train).collect();
        let cfg = CorpusBuildConfig {
            seed: derive_seed(self.config.seed, "build-corpus"),
            ..c.build.clone()
        };
        let corpus = build_synthetic_corpus(&client, &trains, &cfg)?;
        crate::genpipe::ensure_complete(&corpus)?;
        let dir = self.corpus_dir().expect("corpus configured");
        corpus.write_dir(&dir)?;
        let rel = format!("corpus/{}/manifest.json", c.build.name);
        Ok(Some(vec![rel]))
    }

    /// The generated corpus (if any) and every external corpus.
    pub fn load_corpora(&self) -> Result<Vec<SyntheticCorpus>> {
        let mut out = Vec::new();
        if let Some(dir) = self.corpus_dir() {
            if self.needs_corpus() || dir.join("manifest.json").exists() {
                out.push(SyntheticCorpus::read_dir(&dir)?);
            }
        }
        for e in &self.config.external_corpora {
            let examples: Vec<LabeledExample> = read_jsonl(&self.config.resolve(&e.path))?;
            out.push(SyntheticCorpus::from_examples(&e.name, &examples)?);
        }
        Ok(out)
    }

    fn suite(&self) -> Result<&SuiteConfig> {
        self.config.suite.as_ref().ok_or_else(|| invalid("suite", "no suite configured"))
    }

    fn held_outs(&self) -> Vec<String> {
        match &self.config.suite {
            Some(s) if !s.held_out.is_empty() => s.held_out.clone(),
            _ => self.config.datasets.iter().map(|d| d.name.clone()).collect(),
        }
    }

    fn assemble(&self) -> Result<Vec<String>> {
        let suite = self.suite()?;
        let registry = self.load_registry()?;
        let corpora = self.load_corpora()?;
        let mut outputs = Vec::new();
        let dummy = BackendDescriptor::new("assemble", [], Transport::InProcess);
        for cond in suite.conditions.iter().filter(|c| c.augmentation.is_some()) {
            for held in self.held_outs() {
                let plan = plan_4v1(&registry, &held, cond, &self.config.schedule, &dummy, self.config.seed)?;
                let spec = plan.augmentation.expect("augmented condition");
                let aug = crate::augment::assemble_augmentation(&spec, &corpora)?;
                let rel = format!("assemble/{}/{}", slug(&cond.name), slug(&held));
                let dir = self.out.join(&rel);
                write_jsonl(&dir.join("selection.jsonl"), &aug.examples)?;
                write_json(
                    &dir.join("manifest.json"),
                    &serde_json::json!({ "config_hash": self.config_hash, "condition": cond.name, "held_out": held, "selection": aug.manifest }),
                )?;
                outputs.push(format!("{rel}/manifest.json"));
            }
        }
        Ok(outputs)
    }

    fn xeval(&self) -> Result<Vec<String>> {
        let suite = self.suite()?;
        let registry = self.load_registry()?;
        let corpora = self.load_corpora()?;
        let clients = suite.models.iter().map(|m| self.client_for(m)).collect::<Result<Vec<_>>>()?;
        let spec = SuiteSpec {
            held_out: self.held_outs(),
            conditions: suite.conditions.clone(),
            schedule: self.config.schedule.clone(),
            seed: self.config.seed,
            workers: self.config.workers,
            out_dir: Some(self.out.join("xeval")),
        };
        let table = run_suite(&registry, &clients, &corpora, &spec)?;
        write_json(&self.out.join("xeval/results.json"), &table)?;
        let csv = table.to_csv()?;
        write_text(&self.out.join("metrics.csv"), &csv)?;
        for (row, err) in table.errors() {
            log::warn!("cell {}/{}/{} failed: {}", row.held_out, row.model, row.condition, err.message);
        }
        Ok(vec!["metrics.csv".into(), "xeval/results.json".into()])
    }

    fn start_stub(&self, z: &ZeroShotConfig) -> Result<Option<StubCompletionServer>> {
        let Some(kind) = &z.stub else { return Ok(None) };
        let server = if kind == "toy-keyword" {
            StubCompletionServer::start("127.0.0.1:0", Arc::new(|p: &str| StubReply::Text(crate::toy::keyword_reply(p).into())))?
        } else {
            StubCompletionServer::constant("127.0.0.1:0", kind.trim_start_matches("constant:"))?
        };
        Ok(Some(server))
    }

    fn zeroshot(&self) -> Result<Vec<String>> {
        let z = self
            .config
            .zeroshot
            .as_ref()
            .ok_or_else(|| invalid("zeroshot", "no zero-shot section configured"))?;
        let stub = self.start_stub(z)?;
        let client_cfg = CompletionClientConfig {
            endpoint: stub.as_ref().map(|s| s.url().to_string()).unwrap_or_else(|| z.client.endpoint.clone()),
            ..z.client.clone()
        };
        let client: Arc<dyn CompletionClient> = Arc::new(HttpCompletionClient::new(client_cfg.clone())?);
        let registry = self.load_registry()?;
        let names: Vec<String> = if z.datasets.is_empty() {
            registry.iter().map(|d| d.name().to_string()).collect()
        } else {
            z.datasets.clone()
        };
        let mut records = Vec::new();
        let mut outputs = Vec::new();
        for name in names {
            let d = registry.iter().find(|d| d.name() == name).ok_or(Error::UnknownDataset { name: name.clone() })?;
            let seed = derive_seed(self.config.seed, &format!("zeroshot/{name}"));
            let outcome = evaluate_zero_shot(&d.test, Arc::clone(&client), &client_cfg, &z.template, z.sample_fraction, seed)?;
            let rel = format!("zeroshot/{}", slug(&name));
            outcome.write_transcript(&self.out.join(&rel).join("transcript.jsonl"))?;
            write_json(
                &self.out.join(&rel).join("metrics.json"),
                &serde_json::json!({
                    "config_hash": self.config_hash,
                    "metrics": outcome.metrics,
                    "n_sampled": outcome.results.len(),
                    "n_unparsed": outcome.n_unparsed,
                    "n_failed": outcome.n_failed,
                    "sampling": "class-stratified",
                    "sample_fraction": z.sample_fraction,
                }),
            )?;
            outputs.push(format!("{rel}/transcript.jsonl"));
            records.push(outcome.metrics);
        }
        write_json(&self.out.join("zeroshot/records.json"), &records)?;
        outputs.push("zeroshot/records.json".into());
        Ok(outputs)
    }

    fn report(&self) -> Result<Vec<String>> {
        let mut records: Vec<MetricsRecord> = Vec::new();
        let mut summaries = Vec::new();
        if let Some(suite) = &self.config.suite {
            let table: ResultTable = read_json(&self.out.join("xeval/results.json"))?;
            let xeval_records = table.records();
            let pairs = pair_with_baseline(&xeval_records, &suite.baseline)?;
            if !pairs.is_empty() {
                let n_conditions = suite.conditions.iter().filter(|c| c.name != suite.baseline).count();
                summaries = if n_conditions > 1 {
                    summarize_by(&pairs, GroupBy::Condition)?
                } else {
                    summarize(&pairs)?
                };
            }
            records.extend(xeval_records);
        }
        if self.config.zeroshot.as_ref().is_some_and(|z| z.enabled) {
            let zs: Vec<MetricsRecord> = read_json(&self.out.join("zeroshot/records.json"))?;
            records.extend(zs);
        }
        let report = Report {
            title: Some(format!("Run report (config {})", &self.config_hash[..12])),
            records,
            summaries: summaries.clone(),
        };
        let md = emit_report(&report, ReportFormat::Markdown)?;
        write_text(&self.out.join("report.md"), &md)?;
        let mut outputs = vec!["report.md".to_string()];
        if !summaries.is_empty() {
            let csv = emit_report(
                &Report {
                    summaries,
                    ..Report::default()
                },
                ReportFormat::Csv,
            )?;
            write_text(&self.out.join("summary.csv"), &csv)?;
            outputs.push("summary.csv".into());
        }
        Ok(outputs)
    }
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
