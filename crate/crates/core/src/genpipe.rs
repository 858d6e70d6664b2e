//! Synthetic corpus construction.
//!
//! Per source dataset: tune one generator on the hate examples and one on
//! the non-hate examples of the training split, sample unconditionally,
//! keep only generated hate sequences that a classifier trained on the same
//! split scores at or above the confidence threshold, and top the hate pool
//! up by resampling until the per-class quota is met.

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendClient, ClassifierHandle, GeneratorHandle, TrainingSchedule};
use crate::corpus::{split_train_val, Dataset, Label, LabeledExample, Origin, Provenance, Split};
use crate::error::{Error, Result};
use crate::util::{derive_seed, read_json, read_jsonl, write_json, write_jsonl};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticItem {
    pub text: String,
    pub filter_confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_group: Option<String>,
}

impl SyntheticItem {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            filter_confidence: None,
            target_group: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPool {
    pub source_dataset: String,
    pub class: Label,
    pub items: Vec<SyntheticItem>,
    /// Model that produced the pool; absent for imported corpora.
    pub generator: Option<String>,
}

impl SyntheticPool {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_filtered(&self) -> bool {
        !self.items.is_empty() && self.items.iter().all(|i| i.filter_confidence.is_some())
    }

    pub fn texts(&self) -> Vec<String> {
        self.items.iter().map(|i| i.text.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterPolicy {
    pub classifier: ClassifierHandle,
    pub threshold: f64,
    pub target_class: Label,
}

impl FilterPolicy {
    pub const DEFAULT_THRESHOLD: f64 = 0.7;

    pub fn new(classifier: ClassifierHandle, threshold: f64, target_class: Label) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "filter threshold {threshold} must lie strictly between 0 and 1"
            )));
        }
        Ok(Self {
            classifier,
            threshold,
            target_class,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionStats {
    pub input: usize,
    pub kept: usize,
    pub retention: f64,
    /// Target-class confidence of every input item, ten equal bins over [0,1].
    pub histogram: [usize; 10],
}

impl RetentionStats {
    fn merge(&mut self, other: &RetentionStats) {
        self.input += other.input;
        self.kept += other.kept;
        for (a, b) in self.histogram.iter_mut().zip(other.histogram) {
            *a += b;
        }
        self.retention = if self.input == 0 { 0.0 } else { self.kept as f64 / self.input as f64 };
    }

    fn empty() -> Self {
        Self {
            input: 0,
            kept: 0,
            retention: 0.0,
            histogram: [0; 10],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolOptions {
    pub max_tokens: usize,
    /// Exact-string deduplication within a pool.
    pub dedup: bool,
    /// Sampling rounds allowed before giving up.
    pub max_rounds: usize,
}

impl Default for PoolOptions {
    fn default() -> Self {
        Self {
            max_tokens: 30,
            dedup: false,
            max_rounds: 10,
        }
    }
}

fn reject_test_split(examples: &[LabeledExample]) -> Result<()> {
    match examples.iter().find(|e| e.split == Split::Test) {
        Some(e) => Err(Error::TestLeakage {
            detail: format!("test example `{}` of `{}` offered for generation", e.id, e.source_dataset),
        }),
        None => Ok(()),
    }
}

/// Tunes one generator per class on a training split.
pub fn build_class_generators(client: &BackendClient, train: &Dataset) -> Result<(GeneratorHandle, GeneratorHandle)> {
    reject_test_split(train.examples())?;
    let by_class = |l: Label| -> Vec<LabeledExample> { train.examples().iter().filter(|e| e.label == l).cloned().collect() };
    let hate = by_class(Label::Hate);
    let non = by_class(Label::Nonhate);
    if hate.is_empty() || non.is_empty() {
        let present = if hate.is_empty() { Label::Nonhate } else { Label::Hate };
        return Err(Error::SingleClassTrain { present });
    }
    let g_h = client.tune_generator(&hate, train.name(), Label::Hate)?;
    let g_nh = client.tune_generator(&non, train.name(), Label::Nonhate)?;
    Ok((g_h, g_nh))
}

/// Samples `count` unfiltered items. With deduplication, keeps resampling
/// (new seed per round) until `count` distinct texts are collected.
pub fn generate_pool(client: &BackendClient, generator: &GeneratorHandle, count: usize, opts: &PoolOptions, seed: u64) -> Result<SyntheticPool> {
    if count == 0 {
        return Err(Error::InvalidArgument("pool size must be >= 1".into()));
    }
    let mut items: Vec<SyntheticItem> = Vec::with_capacity(count);
    let mut seen: HashSet<String> = HashSet::new();
    let mut rounds = 0;
    while items.len() < count {
        if rounds == opts.max_rounds.max(1) {
            return Err(Error::SamplingExhausted {
                dataset: generator.dataset.clone(),
                label: generator.class,
                requested: count,
                collected: items.len(),
                rounds,
            });
        }
        let round_seed = derive_seed(seed, &format!("pool/{}/{rounds}", generator.model_id));
        let need = count - items.len();
        for text in client.sample(generator, need, opts.max_tokens, round_seed)? {
            if opts.dedup && !seen.insert(text.clone()) {
                continue;
            }
            items.push(SyntheticItem::new(text));
        }
        rounds += 1;
    }
    Ok(SyntheticPool {
        source_dataset: generator.dataset.clone(),
        class: generator.class,
        items,
        generator: Some(generator.model_id.clone()),
    })
}

const PREDICT_BATCH: usize = 512;

/// Keeps items whose target-class confidence is at least the threshold
/// (ties kept) and records each kept item's confidence.
pub fn apply_fidelity_filter(client: &BackendClient, pool: &SyntheticPool, policy: &FilterPolicy) -> Result<(SyntheticPool, RetentionStats)> {
    if policy.target_class != pool.class {
        return Err(Error::InvalidArgument(format!(
            "policy targets {} but pool holds {}",
            policy.target_class, pool.class
        )));
    }
    let texts = pool.texts();
    let scores: Vec<f64> = texts
        .par_chunks(PREDICT_BATCH)
        .map(|chunk| client.predict(&policy.classifier, chunk))
        .collect::<Result<Vec<_>>>()?
        .concat();
    let mut stats = RetentionStats::empty();
    let mut kept = Vec::new();
    for (item, hate_score) in pool.items.iter().zip(scores) {
        let conf = match policy.target_class {
            Label::Hate => hate_score,
            Label::Nonhate => 1.0 - hate_score,
        };
        stats.histogram[((conf * 10.0).floor() as usize).min(9)] += 1;
        if conf >= policy.threshold {
            kept.push(SyntheticItem {
                filter_confidence: Some(conf),
                ..item.clone()
            });
        }
    }
    stats.input = pool.items.len();
    stats.kept = kept.len();
    stats.retention = if stats.input == 0 { 0.0 } else { stats.kept as f64 / stats.input as f64 };
    Ok((
        SyntheticPool {
            items: kept,
            ..pool.clone()
        },
        stats,
    ))
}

/// Parameters for [`build_synthetic_corpus`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusBuildConfig {
    pub name: String,
    pub per_class_count: usize,
    pub threshold: f64,
    /// Also filter the non-hate pool (by non-hate confidence).
    pub filter_nonhate: bool,
    pub pool: PoolOptions,
    /// Schedule for the fidelity classifier.
    pub schedule: TrainingSchedule,
    pub seed: u64,
}

impl Default for CorpusBuildConfig {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            per_class_count: 100_000,
            threshold: FilterPolicy::DEFAULT_THRESHOLD,
            filter_nonhate: false,
            pool: PoolOptions::default(),
            schedule: TrainingSchedule::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellManifest {
    pub dataset: String,
    pub class: Label,
    pub count: usize,
    /// Sequences drawn from the generator, including those filtered out.
    pub raw_sampled: usize,
    pub rounds: usize,
    pub retention: Option<RetentionStats>,
    pub generator_model_id: Option<String>,
    pub classifier_model_id: Option<String>,
    /// Items whose text equals a gold training text of the same dataset.
    pub gold_overlap: usize,
    pub exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub name: String,
    pub per_class_count: usize,
    pub threshold: f64,
    pub filter_nonhate: bool,
    pub max_tokens: usize,
    pub dedup: bool,
    pub seed: u64,
    pub cells: Vec<CellManifest>,
    pub total: usize,
}

impl CorpusManifest {
    pub fn is_complete(&self) -> bool {
        !self.cells.iter().any(|c| c.exhausted)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub name: String,
    pub pools: Vec<SyntheticPool>,
    pub manifest: CorpusManifest,
}

impl SyntheticCorpus {
    /// Wraps externally produced synthetic examples (e.g. a third-party
    /// corpus) as a corpus with one pool per (source dataset, class).
    pub fn from_examples(name: &str, examples: &[LabeledExample]) -> Result<Self> {
        let mut pools: Vec<SyntheticPool> = Vec::new();
        for ex in examples {
            ex.validate()?;
            let pos = pools.iter().position(|p| p.source_dataset == ex.source_dataset && p.class == ex.label);
            let pool = match pos {
                Some(i) => &mut pools[i],
                None => {
                    pools.push(SyntheticPool {
                        source_dataset: ex.source_dataset.clone(),
                        class: ex.label,
                        items: Vec::new(),
                        generator: None,
                    });
                    pools.last_mut().expect("just pushed")
                }
            };
            pool.items.push(SyntheticItem {
                text: ex.text.clone(),
                filter_confidence: ex.provenance.as_ref().and_then(|p| p.filter_confidence),
                target_group: ex.provenance.as_ref().and_then(|p| p.target_group.clone()),
            });
        }
        let mut corpus = Self {
            name: name.to_string(),
            manifest: CorpusManifest {
                name: name.to_string(),
                per_class_count: 0,
                threshold: 0.0,
                filter_nonhate: false,
                max_tokens: 0,
                dedup: false,
                seed: 0,
                cells: Vec::new(),
                total: 0,
            },
            pools,
        };
        corpus.manifest.cells = corpus
            .pools
            .iter()
            .map(|p| CellManifest {
                dataset: p.source_dataset.clone(),
                class: p.class,
                count: p.len(),
                raw_sampled: p.len(),
                rounds: 0,
                retention: None,
                generator_model_id: None,
                classifier_model_id: None,
                gold_overlap: 0,
                exhausted: false,
            })
            .collect();
        corpus.manifest.total = corpus.pools.iter().map(SyntheticPool::len).sum();
        Ok(corpus)
    }

    pub fn total(&self) -> usize {
        self.pools.iter().map(SyntheticPool::len).sum()
    }

    /// Manifest counts equal pool sizes and the total is their sum.
    pub fn verify_manifest(&self) -> Result<()> {
        let mut sum = 0;
        for pool in &self.pools {
            let cell = self
                .manifest
                .cells
                .iter()
                .find(|c| c.dataset == pool.source_dataset && c.class == pool.class)
                .ok_or_else(|| Error::Format(format!("no manifest cell for {}/{}", pool.source_dataset, pool.class)))?;
            if cell.count != pool.len() {
                return Err(Error::Format(format!(
                    "manifest says {} items for {}/{}, pool has {}",
                    cell.count,
                    pool.source_dataset,
                    pool.class,
                    pool.len()
                )));
            }
            sum += pool.len();
        }
        if sum != self.manifest.total || self.manifest.cells.len() != self.pools.len() {
            return Err(Error::Format(format!("manifest total {} != {sum}", self.manifest.total)));
        }
        Ok(())
    }

    /// Flattens the corpus into synthetic labeled examples with provenance.
    pub fn examples(&self) -> Vec<LabeledExample> {
        self.pools
            .iter()
            .flat_map(|pool| {
                pool.items.iter().enumerate().map(move |(i, item)| LabeledExample {
                    id: format!("{}/{}/{}/{i}", self.name, pool.source_dataset, pool.class.as_str()),
                    text: item.text.clone(),
                    label: pool.class,
                    source_dataset: pool.source_dataset.clone(),
                    split: Split::Unsplit,
                    origin: Origin::Synthetic,
                    provenance: Some(Provenance {
                        corpus: Some(self.name.clone()),
                        generator_class: Some(pool.class),
                        target_group: item.target_group.clone(),
                        filter_confidence: item.filter_confidence,
                    }),
                })
            })
            .collect()
    }

    /// One `<dataset>_<class>.jsonl` per pool plus `manifest.json`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        for pool in &self.pools {
            let examples: Vec<LabeledExample> = self
                .examples()
                .into_iter()
                .filter(|e| e.source_dataset == pool.source_dataset && e.label == pool.class)
                .collect();
            write_jsonl(&dir.join(pool_file_name(&pool.source_dataset, pool.class)), &examples)?;
        }
        write_json(&dir.join("manifest.json"), &self.manifest)
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let manifest: CorpusManifest = read_json(&dir.join("manifest.json"))?;
        let mut pools = Vec::new();
        for cell in &manifest.cells {
            let examples: Vec<LabeledExample> = read_jsonl(&dir.join(pool_file_name(&cell.dataset, cell.class)))?;
            pools.push(SyntheticPool {
                source_dataset: cell.dataset.clone(),
                class: cell.class,
                items: examples
                    .into_iter()
                    .map(|e| {
                        let prov = e.provenance.unwrap_or_default();
                        SyntheticItem {
                            text: e.text,
                            filter_confidence: prov.filter_confidence,
                            target_group: prov.target_group,
                        }
                    })
                    .collect(),
                generator: cell.generator_model_id.clone(),
            });
        }
        let corpus = Self {
            name: manifest.name.clone(),
            pools,
            manifest,
        };
        corpus.verify_manifest()?;
        Ok(corpus)
    }
}

fn pool_file_name(dataset: &str, class: Label) -> String {
    let safe: String = dataset
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}_{}.jsonl", class.as_str())
}

struct FilledPool {
    pool: SyntheticPool,
    raw_sampled: usize,
    rounds: usize,
    stats: RetentionStats,
    exhausted: bool,
}

/// Samples quota-sized batches and filters each until `quota` items pass,
/// or the round budget runs out (partial pool, `exhausted` set).
fn fill_filtered_pool(client: &BackendClient, generator: &GeneratorHandle, policy: &FilterPolicy, quota: usize, opts: &PoolOptions, seed: u64) -> Result<FilledPool> {
    let mut items: Vec<SyntheticItem> = Vec::with_capacity(quota);
    let mut seen = HashSet::new();
    let mut stats = RetentionStats::empty();
    let mut rounds = 0;
    while items.len() < quota && rounds < opts.max_rounds.max(1) {
        let round_seed = derive_seed(seed, &format!("topup/{}/{rounds}", generator.model_id));
        let texts = client.sample(generator, quota, opts.max_tokens, round_seed)?;
        let raw = SyntheticPool {
            source_dataset: generator.dataset.clone(),
            class: generator.class,
            items: texts
                .into_iter()
                .map(SyntheticItem::new)
                .collect(),
            generator: Some(generator.model_id.clone()),
        };
        let (kept, round_stats) = apply_fidelity_filter(client, &raw, policy)?;
        stats.merge(&round_stats);
        for item in kept.items {
            if items.len() == quota {
                break;
            }
            if opts.dedup && !seen.insert(item.text.clone()) {
                continue;
            }
            items.push(item);
        }
        rounds += 1;
    }
    Ok(FilledPool {
        exhausted: items.len() < quota,
        raw_sampled: stats.input,
        pool: SyntheticPool {
            source_dataset: generator.dataset.clone(),
            class: generator.class,
            items,
            generator: Some(generator.model_id.clone()),
        },
        rounds,
        stats,
    })
}

fn build_for_dataset(client: &BackendClient, train: &Dataset, cfg: &CorpusBuildConfig) -> Result<Vec<(SyntheticPool, CellManifest)>> {
    reject_test_split(train.examples())?;
    let seed = derive_seed(cfg.seed, &format!("corpus/{}", train.name()));
    let (fit, val) = split_train_val(train, crate::corpus::DEFAULT_VAL_FRACTION, seed)?;
    let schedule = TrainingSchedule {
        seed,
        ..cfg.schedule.clone()
    };
    let (classifier, _) = client.train_classifier(fit.examples(), val.examples(), &schedule)?;
    let (g_h, g_nh) = build_class_generators(client, train)?;
    let gold: HashSet<&str> = train.examples().iter().map(|e| e.text.as_str()).collect();

    let mut cells = Vec::with_capacity(2);
    for generator in [&g_h, &g_nh] {
        let filtered = generator.class == Label::Hate || cfg.filter_nonhate;
        let cell_seed = derive_seed(seed, generator.class.as_str());
        let (pool, raw, rounds, stats, exhausted) = if filtered {
            let policy = FilterPolicy::new(classifier.clone(), cfg.threshold, generator.class)?;
            let f = fill_filtered_pool(client, generator, &policy, cfg.per_class_count, &cfg.pool, cell_seed)?;
            (f.pool, f.raw_sampled, f.rounds, Some(f.stats), f.exhausted)
        } else {
            match generate_pool(client, generator, cfg.per_class_count, &cfg.pool, cell_seed) {
                Ok(p) => (p, cfg.per_class_count, 1, None, false),
                Err(Error::SamplingExhausted { .. }) => (
                    SyntheticPool {
                        source_dataset: generator.dataset.clone(),
                        class: generator.class,
                        items: Vec::new(),
                        generator: Some(generator.model_id.clone()),
                    },
                    0,
                    cfg.pool.max_rounds,
                    None,
                    true,
                ),
                Err(e) => return Err(e),
            }
        };
        let overlap = pool.items.iter().filter(|i| gold.contains(i.text.as_str())).count();
        let manifest = CellManifest {
            dataset: train.name().to_string(),
            class: generator.class,
            count: pool.len(),
            raw_sampled: raw,
            rounds,
            retention: stats,
            generator_model_id: Some(generator.model_id.clone()),
            classifier_model_id: filtered.then(|| classifier.model_id.clone()),
            gold_overlap: overlap,
            exhausted,
        };
        cells.push((pool, manifest));
    }
    Ok(cells)
}

/// Builds a corpus from the training splits of `datasets`. Datasets are
/// processed in parallel; pool order follows the input order (hate pool
/// first). A pool that cannot reach its quota is returned partially and
/// marked `exhausted` in the manifest.
pub fn build_synthetic_corpus(client: &BackendClient, datasets: &[Dataset], cfg: &CorpusBuildConfig) -> Result<SyntheticCorpus> {
    if cfg.per_class_count == 0 {
        return Err(Error::InvalidArgument("per_class_count must be >= 1".into()));
    }
    let per_dataset: Vec<Vec<(SyntheticPool, CellManifest)>> = datasets
        .par_iter()
        .map(|d| build_for_dataset(client, d, cfg))
        .collect::<Result<_>>()?;
    let (pools, cells): (Vec<_>, Vec<_>) = per_dataset.into_iter().flatten().unzip();
    let total = pools.iter().map(SyntheticPool::len).sum();
    let corpus = SyntheticCorpus {
        name: cfg.name.clone(),
        pools,
        manifest: CorpusManifest {
            name: cfg.name.clone(),
            per_class_count: cfg.per_class_count,
            threshold: cfg.threshold,
            filter_nonhate: cfg.filter_nonhate,
            max_tokens: cfg.pool.max_tokens,
            dedup: cfg.pool.dedup,
            seed: cfg.seed,
            cells,
            total,
        },
    };
    corpus.verify_manifest()?;
    Ok(corpus)
}

/// Turns an exhausted manifest into the corresponding error.
pub fn ensure_complete(corpus: &SyntheticCorpus) -> Result<()> {
    match corpus.manifest.cells.iter().find(|c| c.exhausted) {
        None => Ok(()),
        Some(c) => Err(Error::SamplingExhausted {
            dataset: c.dataset.clone(),
            label: c.class,
            requested: corpus.manifest.per_class_count,
            collected: c.count,
            rounds: c.rounds,
        }),
    }
}
