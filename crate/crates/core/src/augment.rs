//! Stratified selection of synthetic examples and merging with gold data.
//!
//! Each source corpus receives `weight * total_count` items (largest
//! remainder rounding across sources). Within a source the quota is split
//! evenly across the cross product of the observed values of its strata
//! keys; leftover items go one each to the first cells in lexicographic key
//! order. Cells are sampled without replacement under a seeded shuffle.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledExample, Origin};
use crate::error::{Error, Result};
use crate::genpipe::SyntheticCorpus;
use crate::util::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratumField {
    SourceDataset,
    Class,
    TargetGroup,
}

impl StratumField {
    fn value(self, ex: &LabeledExample) -> Option<String> {
        match self {
            StratumField::SourceDataset => Some(ex.source_dataset.clone()),
            StratumField::Class => Some(ex.label.as_str().to_string()),
            StratumField::TargetGroup => ex.provenance.as_ref().and_then(|p| p.target_group.clone()),
        }
    }

    fn name(self) -> &'static str {
        match self {
            StratumField::SourceDataset => "source_dataset",
            StratumField::Class => "class",
            StratumField::TargetGroup => "target_group",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSource {
    /// Name of the synthetic corpus to draw from.
    pub corpus: String,
    pub weight: f64,
    pub strata_keys: Vec<StratumField>,
}

impl CorpusSource {
    /// Balanced over source dataset and class.
    pub fn by_dataset_and_class(corpus: impl Into<String>, weight: f64) -> Self {
        Self {
            corpus: corpus.into(),
            weight,
            strata_keys: vec![StratumField::SourceDataset, StratumField::Class],
        }
    }

    /// Balanced over class and target group.
    pub fn by_class_and_target(corpus: impl Into<String>, weight: f64) -> Self {
        Self {
            corpus: corpus.into(),
            weight,
            strata_keys: vec![StratumField::Class, StratumField::TargetGroup],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    #[serde(default = "AugmentationSpec::default_total")]
    pub total_count: usize,
    pub sources: Vec<CorpusSource>,
    #[serde(default)]
    pub exclude_source_datasets: BTreeSet<String>,
    #[serde(default)]
    pub seed: u64,
}

impl AugmentationSpec {
    pub const DEFAULT_TOTAL: usize = 240_000;

    fn default_total() -> usize {
        Self::DEFAULT_TOTAL
    }

    pub fn new(total_count: usize, sources: Vec<CorpusSource>) -> Self {
        Self {
            total_count,
            sources,
            exclude_source_datasets: BTreeSet::new(),
            seed: 0,
        }
    }

    pub fn excluding(mut self, datasets: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.exclude_source_datasets.extend(datasets.into_iter().map(Into::into));
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::InvalidArgument("augmentation spec has no sources".into()));
        }
        let mut names = HashSet::new();
        for s in &self.sources {
            if !(0.0..=1.0).contains(&s.weight) {
                return Err(Error::InvalidArgument(format!("weight {} of `{}` outside [0,1]", s.weight, s.corpus)));
            }
            if !names.insert(s.corpus.as_str()) {
                return Err(Error::InvalidArgument(format!("corpus `{}` listed twice", s.corpus)));
            }
            if s.strata_keys.is_empty() {
                return Err(Error::InvalidArgument(format!("source `{}` has no strata keys", s.corpus)));
            }
        }
        let sum: f64 = self.sources.iter().map(|s| s.weight).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("source weights sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Integer quota per source: floors of `weight * total`, remainder to the
    /// largest fractional parts (earlier sources win ties).
    pub fn source_quotas(&self) -> Vec<usize> {
        let exact: Vec<f64> = self.sources.iter().map(|s| s.weight * self.total_count as f64).collect();
        let mut quotas: Vec<usize> = exact.iter().map(|x| (x + 1e-9).floor() as usize).collect();
        let assigned: usize = quotas.iter().sum();
        let mut rem = self.total_count.saturating_sub(assigned);
        let mut order: Vec<usize> = (0..quotas.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - quotas[a] as f64;
            let fb = exact[b] - quotas[b] as f64;
            fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        for i in order.into_iter().cycle() {
            if rem == 0 {
                break;
            }
            quotas[i] += 1;
            rem -= 1;
        }
        quotas
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSelection {
    pub source: String,
    /// `key=value` pairs joined with `|`.
    pub stratum: String,
    pub selected: usize,
    pub available: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionManifest {
    pub seed: u64,
    pub total_count: usize,
    pub source_quotas: BTreeMap<String, usize>,
    pub excluded_source_datasets: Vec<String>,
    pub strata: Vec<StratumSelection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmentation {
    pub examples: Vec<LabeledExample>,
    pub manifest: SelectionManifest,
}

fn stratum_label(keys: &[StratumField], values: &[String]) -> String {
    keys.iter()
        .zip(values)
        .map(|(k, v)| format!("{}={v}", k.name()))
        .collect::<Vec<_>>()
        .join("|")
}

/// Cartesian product of per-key value sets, lexicographically ordered.
fn cross_product(value_sets: &[BTreeSet<String>]) -> Vec<Vec<String>> {
    value_sets.iter().fold(vec![Vec::new()], |acc, values| {
        acc.iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut next = prefix.clone();
                    next.push(v.clone());
                    next
                })
            })
            .collect()
    })
}

pub fn assemble_augmentation(spec: &AugmentationSpec, corpora: &[SyntheticCorpus]) -> Result<Augmentation> {
    let mut manifest = SelectionManifest {
        seed: spec.seed,
        total_count: spec.total_count,
        source_quotas: BTreeMap::new(),
        excluded_source_datasets: spec.exclude_source_datasets.iter().cloned().collect(),
        strata: Vec::new(),
    };
    if spec.total_count == 0 {
        return Ok(Augmentation {
            examples: Vec::new(),
            manifest,
        });
    }
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.total_count);
    for (source, quota) in spec.sources.iter().zip(spec.source_quotas()) {
        manifest.source_quotas.insert(source.corpus.clone(), quota);
        if quota == 0 {
            continue;
        }
        let corpus = corpora
            .iter()
            .find(|c| c.name == source.corpus)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown corpus `{}`", source.corpus)))?;

        let mut cells: BTreeMap<Vec<String>, Vec<LabeledExample>> = BTreeMap::new();
        for ex in corpus.examples() {
            if spec.exclude_source_datasets.contains(&ex.source_dataset) {
                continue;
            }
            let key = source
                .strata_keys
                .iter()
                .map(|k| {
                    k.value(&ex).ok_or_else(|| {
                        Error::Format(format!("item `{}` lacks stratum key `{}`", ex.id, k.name()))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            cells.entry(key).or_default().push(ex);
        }
        let value_sets: Vec<BTreeSet<String>> = (0..source.strata_keys.len())
            .map(|i| cells.keys().map(|k| k[i].clone()).collect())
            .collect();
        let all_cells = cross_product(&value_sets);
        if all_cells.is_empty() || cells.is_empty() {
            return Err(Error::StratumUnderflow {
                source_name: source.corpus.clone(),
                stratum: "*".into(),
                needed: quota,
                available: 0,
                shortfall: quota,
            });
        }
        let base = quota / all_cells.len();
        let extra = quota % all_cells.len();
        for (i, key) in all_cells.iter().enumerate() {
            let need = base + usize::from(i < extra);
            let label = stratum_label(&source.strata_keys, key);
            let mut items = cells.remove(key).unwrap_or_default();
            if items.len() < need {
                return Err(Error::StratumUnderflow {
                    source_name: source.corpus.clone(),
                    stratum: label,
                    needed: need,
                    available: items.len(),
                    shortfall: need - items.len(),
                });
            }
            manifest.strata.push(StratumSelection {
                source: source.corpus.clone(),
                stratum: label.clone(),
                selected: need,
                available: items.len(),
            });
            items.sort_by(|a, b| a.id.cmp(&b.id));
            let mut rng = rng_for(spec.seed, &format!("augment/{}/{label}", source.corpus));
            items.shuffle(&mut rng);
            items.truncate(need);
            out.extend(items);
        }
    }
    Ok(Augmentation { examples: out, manifest })
}

/// Concatenates gold and synthetic material and shuffles it under `seed`.
pub fn merge_training_material(gold: &[LabeledExample], augmentation: &[LabeledExample], seed: u64) -> Result<Vec<LabeledExample>> {
    if let Some(bad) = augmentation.iter().find(|e| e.origin != Origin::Synthetic) {
        return Err(Error::OriginViolation { id: bad.id.clone() });
    }
    let mut all: Vec<LabeledExample> = gold.iter().chain(augmentation).cloned().collect();
    all.shuffle(&mut rng_for(seed, "merge"));
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Label, Provenance, Split};

    fn synth(corpus: &str, dataset: &str, label: Label, n: usize, group: Option<&str>) -> Vec<LabeledExample> {
        (0..n)
            .map(|i| LabeledExample {
                id: format!("{corpus}/{dataset}/{}/{i}", label.as_str()),
                text: format!("{dataset} {} {i}", label.as_str()),
                label,
                source_dataset: dataset.into(),
                split: Split::Unsplit,
                origin: Origin::Synthetic,
                provenance: Some(Provenance {
                    corpus: Some(corpus.into()),
                    generator_class: Some(label),
                    target_group: group.map(String::from),
                    filter_confidence: None,
                }),
            })
            .collect()
    }

    fn corpus(name: &str, datasets: &[&str], per_cell: usize) -> SyntheticCorpus {
        let ex: Vec<_> = datasets
            .iter()
            .flat_map(|d| Label::ALL.into_iter().flat_map(move |l| synth(name, d, l, per_cell, None)))
            .collect();
        SyntheticCorpus::from_examples(name, &ex).unwrap()
    }

    #[test]
    fn quota_remainders_go_to_sorted_cells() {
        let c = corpus("m", &["A", "B", "C"], 10);
        let spec = AugmentationSpec::new(8, vec![CorpusSource::by_dataset_and_class("m", 1.0)]);
        let aug = assemble_augmentation(&spec, &[c]).unwrap();
        let counts: Vec<(String, usize)> = aug.manifest.strata.iter().map(|s| (s.stratum.clone(), s.selected)).collect();
        assert_eq!(
            counts,
            vec![
                ("source_dataset=A|class=hate".into(), 2),
                ("source_dataset=A|class=nonhate".into(), 2),
                ("source_dataset=B|class=hate".into(), 1),
                ("source_dataset=B|class=nonhate".into(), 1),
                ("source_dataset=C|class=hate".into(), 1),
                ("source_dataset=C|class=nonhate".into(), 1),
            ]
        );
    }

    #[test]
    fn zero_total_is_empty() {
        let spec = AugmentationSpec::new(0, vec![]);
        assert!(assemble_augmentation(&spec, &[]).unwrap().examples.is_empty());
    }

    #[test]
    fn underflow_names_the_stratum() {
        let c = corpus("m", &["A", "B"], 3);
        let spec = AugmentationSpec::new(20, vec![CorpusSource::by_dataset_and_class("m", 1.0)]);
        match assemble_augmentation(&spec, &[c]).unwrap_err() {
            Error::StratumUnderflow { stratum, shortfall, .. } => {
                assert_eq!(stratum, "source_dataset=A|class=hate");
                assert_eq!(shortfall, 2);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn target_group_strata() {
        let mut ex = Vec::new();
        for g in ["g1", "g2", "g3"] {
            ex.extend(synth("tg", "toxigen", Label::Hate, 5, Some(g)).into_iter().map(|mut e| {
                e.id = format!("{}-{g}", e.id);
                e
            }));
            ex.extend(synth("tg", "toxigen", Label::Nonhate, 5, Some(g)).into_iter().map(|mut e| {
                e.id = format!("{}-{g}", e.id);
                e
            }));
        }
        let c = SyntheticCorpus::from_examples("tg", &ex).unwrap();
        let spec = AugmentationSpec::new(12, vec![CorpusSource::by_class_and_target("tg", 1.0)]);
        let aug = assemble_augmentation(&spec, &[c]).unwrap();
        assert_eq!(aug.examples.len(), 12);
        assert!(aug.manifest.strata.iter().all(|s| s.selected == 2));
    }

    #[test]
    fn missing_target_group_is_an_error() {
        let c = corpus("m", &["A"], 3);
        let spec = AugmentationSpec::new(2, vec![CorpusSource::by_class_and_target("m", 1.0)]);
        assert_eq!(assemble_augmentation(&spec, &[c]).unwrap_err().code(), "FORMAT_ERROR");
    }

    #[test]
    fn weights_must_sum_to_one() {
        let c = corpus("m", &["A"], 3);
        let spec = AugmentationSpec::new(2, vec![CorpusSource::by_dataset_and_class("m", 0.5)]);
        assert!(assemble_augmentation(&spec, &[c]).is_err());
    }

    #[test]
    fn largest_remainder_source_quotas() {
        let spec = AugmentationSpec::new(
            10,
            vec![
                CorpusSource::by_dataset_and_class("a", 1.0 / 3.0),
                CorpusSource::by_dataset_and_class("b", 1.0 / 3.0),
                CorpusSource::by_dataset_and_class("c", 1.0 / 3.0),
            ],
        );
        assert_eq!(spec.source_quotas(), vec![4, 3, 3]);
    }

    #[test]
    fn merge_counts_and_origin_check() {
        let gold: Vec<_> = (0..40).map(|i| LabeledExample::gold(format!("g{i}"), "x", Label::Nonhate, "D")).collect();
        let syn = synth("m", "A", Label::Hate, 240, None);
        let merged = merge_training_material(&gold, &syn, 1).unwrap();
        assert_eq!(merged.len(), 280);
        assert_eq!(merged.iter().filter(|e| e.origin == Origin::Synthetic).count(), 240);
        let only_gold = merge_training_material(&gold, &[], 1).unwrap();
        let mut a: Vec<_> = only_gold.iter().map(|e| e.id.clone()).collect();
        let mut b: Vec<_> = gold.iter().map(|e| e.id.clone()).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert_eq!(merge_training_material(&gold, &gold[..1], 1).unwrap_err().code(), "ORIGIN_VIOLATION");
    }
}
