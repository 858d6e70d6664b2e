//! Binary-labeled corpora: ingestion from heterogeneous raw dumps, text
//! normalization and deterministic class-stratified splits.
//!
//! Everything in here is a pure function of its inputs. A [`Dataset`] is
//! immutable once built and its [`DatasetCard`] is always recomputed from
//! the examples it holds.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::util::{read_jsonl, rng_for, round_half_up, write_jsonl};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Hate,
    Nonhate,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Hate, Label::Nonhate];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Hate => "hate",
            Label::Nonhate => "nonhate",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hate" => Some(Label::Hate),
            "nonhate" => Some(Label::Nonhate),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Hate => "HATE",
            Label::Nonhate => "NONHATE",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unsplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Gold,
    Synthetic,
}

/// Where a synthetic example came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub corpus: Option<String>,
    pub generator_class: Option<Label>,
    pub target_group: Option<String>,
    pub filter_confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub text: String,
    pub label: Label,
    pub source_dataset: String,
    pub split: Split,
    pub origin: Origin,
    pub provenance: Option<Provenance>,
}

impl LabeledExample {
    pub fn gold(id: impl Into<String>, text: impl Into<String>, label: Label, dataset: &str) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label,
            source_dataset: dataset.to_string(),
            split: Split::Unsplit,
            origin: Origin::Gold,
            provenance: None,
        }
    }

    /// Checks the per-example invariants.
    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::EmptyText { id: self.id.clone() });
        }
        let conf = self.provenance.as_ref().and_then(|p| p.filter_confidence);
        match self.origin {
            Origin::Gold if conf.is_some() => Err(Error::Format(format!(
                "gold example `{}` carries a filter confidence",
                self.id
            ))),
            Origin::Synthetic
                if self.provenance.as_ref().and_then(|p| p.corpus.as_ref()).is_none() =>
            {
                Err(Error::Format(format!(
                    "synthetic example `{}` has no corpus name",
                    self.id
                )))
            }
            _ => match conf {
                Some(c) if !(0.0..=1.0).contains(&c) => Err(Error::Format(format!(
                    "example `{}` filter confidence {c} outside [0,1]",
                    self.id
                ))),
                _ => Ok(()),
            },
        }
    }
}

/// NFC, internal whitespace runs collapsed to one space, ends trimmed.
pub fn normalize_text(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetCard {
    pub source: String,
    pub size: usize,
    pub hate_class_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    examples: Vec<LabeledExample>,
    card: DatasetCard,
}

impl Dataset {
    /// Builds a dataset, enforcing id uniqueness and `source_dataset == name`.
    pub fn new(name: impl Into<String>, examples: Vec<LabeledExample>, source: impl Into<String>) -> Result<Self> {
        let name = name.into();
        let mut seen = HashSet::with_capacity(examples.len());
        for ex in &examples {
            if ex.source_dataset != name {
                return Err(Error::Format(format!(
                    "example `{}` belongs to `{}`, not `{name}`",
                    ex.id, ex.source_dataset
                )));
            }
            if !seen.insert(ex.id.as_str()) {
                return Err(Error::DuplicateId {
                    dataset: name,
                    id: ex.id.clone(),
                });
            }
            ex.validate()?;
        }
        let card = DatasetCard {
            source: source.into(),
            size: examples.len(),
            hate_class_ratio: hate_ratio(&examples),
        };
        Ok(Self { name, examples, card })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn into_examples(self) -> Vec<LabeledExample> {
        self.examples
    }

    pub fn card(&self) -> &DatasetCard {
        &self.card
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.examples.iter().filter(|e| e.label == label).count()
    }

    /// Sub-dataset holding only the examples tagged with `split`.
    pub fn subset(&self, split: Split) -> Dataset {
        let examples: Vec<_> = self.examples.iter().filter(|e| e.split == split).cloned().collect();
        let card = DatasetCard {
            source: self.card.source.clone(),
            size: examples.len(),
            hate_class_ratio: hate_ratio(&examples),
        };
        Dataset {
            name: self.name.clone(),
            examples,
            card,
        }
    }

    /// Union of two parts of the same dataset (e.g. train and test halves).
    pub fn combine(a: &Dataset, b: &Dataset) -> Result<Dataset> {
        let mut examples = a.examples.clone();
        examples.extend(b.examples.iter().cloned());
        Dataset::new(a.name.clone(), examples, a.card.source.clone())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.examples)
    }

    pub fn read_jsonl(name: &str, path: &Path) -> Result<Dataset> {
        let examples: Vec<LabeledExample> = read_jsonl(path)?;
        Dataset::new(name, examples, path.display().to_string())
    }
}

fn hate_ratio(examples: &[LabeledExample]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    examples.iter().filter(|e| e.label == Label::Hate).count() as f64 / examples.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelTarget {
    Hate,
    Nonhate,
    Discard,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMapMode {
    #[default]
    Strict,
    Lenient,
}

/// Raw-label collapse onto the binary scheme. Lookups are exact after
/// trimming surrounding whitespace.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    #[serde(default)]
    pub mode: LabelMapMode,
    pub map: BTreeMap<String, LabelTarget>,
}

impl LabelMap {
    pub fn strict<'a>(pairs: impl IntoIterator<Item = (&'a str, LabelTarget)>) -> Self {
        Self {
            mode: LabelMapMode::Strict,
            map: pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }

    pub fn lenient(mut self) -> Self {
        self.mode = LabelMapMode::Lenient;
        self
    }

    pub fn resolve(&self, raw: &str) -> Option<LabelTarget> {
        match self.map.get(raw.trim()) {
            Some(t) => Some(*t),
            None if self.mode == LabelMapMode::Lenient => Some(LabelTarget::Discard),
            None => None,
        }
    }
}

/// One row of an unprocessed source dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub text: String,
    pub label: String,
}

impl RawRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label: label.into(),
        }
    }
}

/// Reads raw records from `.jsonl` or `.csv` (header `id,text,label`).
pub fn read_raw_records(path: &Path) -> Result<Vec<RawRecord>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => {
            let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
            rdr.deserialize()
                .map(|r| r.map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
                .collect()
        }
        _ => read_jsonl(path),
    }
}

/// Maps raw labels onto the binary scheme, normalizes text and drops
/// discarded categories.
pub fn ingest(records: &[RawRecord], label_map: &LabelMap, name: &str) -> Result<Dataset> {
    if records.is_empty() {
        return Err(Error::EmptyInput {
            dataset: name.to_string(),
        });
    }
    let mut examples = Vec::with_capacity(records.len());
    let mut seen = HashSet::with_capacity(records.len());
    for rec in records {
        if !seen.insert(rec.id.as_str()) {
            return Err(Error::DuplicateId {
                dataset: name.to_string(),
                id: rec.id.clone(),
            });
        }
        let label = match label_map.resolve(&rec.label) {
            Some(LabelTarget::Hate) => Label::Hate,
            Some(LabelTarget::Nonhate) => Label::Nonhate,
            Some(LabelTarget::Discard) => continue,
            None => {
                return Err(Error::UnmappedLabel {
                    id: rec.id.clone(),
                    label: rec.label.clone(),
                })
            }
        };
        let text = normalize_text(&rec.text);
        if text.is_empty() {
            return Err(Error::EmptyText { id: rec.id.clone() });
        }
        examples.push(LabeledExample::gold(rec.id.clone(), text, label, name));
    }
    if examples.is_empty() {
        return Err(Error::EmptyInput {
            dataset: name.to_string(),
        });
    }
    Dataset::new(name, examples, name)
}

/// Class-stratified split of a flat example list. Per class, the held part
/// gets `round_half_up(fraction * class_count)` members chosen by a seeded
/// shuffle; both parts keep input order. Returns `(kept, held)`.
pub fn stratified_split(
    examples: Vec<LabeledExample>,
    fraction: f64,
    seed: u64,
    kept_split: Split,
    held_split: Split,
) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "split fraction {fraction} outside [0, 1)"
        )));
    }
    if fraction == 0.0 {
        let kept = examples
            .into_iter()
            .map(|mut e| {
                e.split = kept_split;
                e
            })
            .collect();
        return Ok((kept, Vec::new()));
    }
    let mut held_mask = vec![false; examples.len()];
    for label in Label::ALL {
        let mut idx: Vec<usize> = (0..examples.len()).filter(|&i| examples[i].label == label).collect();
        if idx.len() < 2 {
            return Err(Error::ClassTooSmall {
                label,
                count: idx.len(),
                required: 2,
            });
        }
        let k = round_half_up(fraction * idx.len() as f64).min(idx.len());
        let mut rng = rng_for(seed, &format!("stratified-split/{label}"));
        idx.shuffle(&mut rng);
        for &i in &idx[..k] {
            held_mask[i] = true;
        }
    }
    let mut kept = Vec::new();
    let mut held = Vec::new();
    for (mut ex, is_held) in examples.into_iter().zip(held_mask) {
        if is_held {
            ex.split = held_split;
            held.push(ex);
        } else {
            ex.split = kept_split;
            kept.push(ex);
        }
    }
    Ok((kept, held))
}

fn split_dataset(dataset: &Dataset, fraction: f64, seed: u64, kept: Split, held: Split) -> Result<(Dataset, Dataset)> {
    let (a, b) = stratified_split(dataset.examples.clone(), fraction, seed, kept, held)?;
    Ok((
        Dataset::new(dataset.name.clone(), a, dataset.card.source.clone())?,
        Dataset::new(dataset.name.clone(), b, dataset.card.source.clone())?,
    ))
}

/// Stratified train/test split; the default test fraction is 0.2.
pub fn split_train_test(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    split_dataset(dataset, test_fraction, seed, Split::Train, Split::Test)
}

/// Stratified train/validation split; the default validation fraction is 0.1.
pub fn split_train_val(train: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    split_dataset(train, val_fraction, seed, Split::Train, Split::Val)
}

pub const DEFAULT_TEST_FRACTION: f64 = 0.2;
pub const DEFAULT_VAL_FRACTION: f64 = 0.1;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labeled(n_hate: usize, n_non: usize) -> Dataset {
        let mut ex = Vec::new();
        for i in 0..n_hate {
            ex.push(LabeledExample::gold(format!("h{i}"), format!("hate text {i}"), Label::Hate, "T"));
        }
        for i in 0..n_non {
            ex.push(LabeledExample::gold(format!("n{i}"), format!("calm text {i}"), Label::Nonhate, "T"));
        }
        Dataset::new("T", ex, "test").unwrap()
    }

    fn ids(d: &Dataset) -> Vec<String> {
        d.examples().iter().map(|e| e.id.clone()).collect()
    }

    #[test]
    fn ingest_collapses_and_discards() {
        let recs = vec![
            RawRecord::new("1", "a", "hateful"),
            RawRecord::new("2", "b", "abusive"),
            RawRecord::new("3", "c", "normal"),
            RawRecord::new("4", "d", "normal"),
        ];
        let map = LabelMap::strict([
            ("hateful", LabelTarget::Hate),
            ("abusive", LabelTarget::Discard),
            ("normal", LabelTarget::Nonhate),
        ]);
        let d = ingest(&recs, &map, "X").unwrap();
        assert_eq!(d.len(), 3);
        assert!((d.card().hate_class_ratio - 1.0 / 3.0).abs() < 1e-12);
        assert!(d.examples().iter().all(|e| e.source_dataset == "X" && e.origin == Origin::Gold));
    }

    #[test]
    fn ingest_strict_rejects_unknown_label() {
        let recs = vec![RawRecord::new("1", "a", "spam")];
        let map = LabelMap::strict([("hate", LabelTarget::Hate)]);
        assert!(matches!(ingest(&recs, &map, "X"), Err(Error::UnmappedLabel { .. })));
        let d = ingest(
            &[RawRecord::new("1", "a", "spam"), RawRecord::new("2", "b", "hate")],
            &map.clone().lenient(),
            "X",
        )
        .unwrap();
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn ingest_errors() {
        let map = LabelMap::strict([("x", LabelTarget::Discard), ("h", LabelTarget::Hate)]);
        assert!(matches!(ingest(&[], &map, "X"), Err(Error::EmptyInput { .. })));
        assert!(matches!(
            ingest(&[RawRecord::new("1", "t", "x")], &map, "X"),
            Err(Error::EmptyInput { .. })
        ));
        assert!(matches!(
            ingest(&[RawRecord::new("1", "t", "h"), RawRecord::new("1", "u", "h")], &map, "X"),
            Err(Error::DuplicateId { .. })
        ));
        assert!(matches!(
            ingest(&[RawRecord::new("1", " \t\n", "h")], &map, "X"),
            Err(Error::EmptyText { .. })
        ));
    }

    #[test]
    fn duplicate_texts_are_kept() {
        let map = LabelMap::strict([("h", LabelTarget::Hate)]);
        let d = ingest(&[RawRecord::new("1", "same", "h"), RawRecord::new("2", "same", "h")], &map, "X").unwrap();
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn normalization_nfc_and_whitespace() {
        // "e" + combining acute composes to a single code point
        assert_eq!(normalize_text("  caf\u{0065}\u{0301}\t\n  au   lait "), "caf\u{00e9} au lait");
        assert_eq!(normalize_text("Keep CASE @user http://x.y"), "Keep CASE @user http://x.y");
    }

    #[test]
    fn split_ten_examples() {
        let d = labeled(5, 5);
        let (train, test) = split_train_test(&d, 0.2, 3).unwrap();
        assert_eq!(test.count(Label::Hate), 1);
        assert_eq!(test.count(Label::Nonhate), 1);
        assert_eq!(train.len(), 8);
        assert!(test.examples().iter().all(|e| e.split == Split::Test));
        assert!(train.examples().iter().all(|e| e.split == Split::Train));
        let (_, test2) = split_train_test(&d, 0.2, 3).unwrap();
        assert_eq!(ids(&test), ids(&test2));
    }

    #[test]
    fn split_hundred_at_fifteen_percent() {
        // strata: 15 * 0.2 = 3, 85 * 0.2 = 17
        let d = labeled(15, 85);
        let (_, test) = split_train_test(&d, 0.2, 11).unwrap();
        assert_eq!(test.count(Label::Hate), 3);
        assert_eq!(test.len(), 20);
    }

    #[test]
    fn split_val_thousand() {
        // strata: 110 * 0.1 = 11, 890 * 0.1 = 89
        let d = labeled(110, 890);
        let (train, val) = split_train_val(&d, 0.1, 5).unwrap();
        assert_eq!(val.len(), 100);
        assert_eq!(val.count(Label::Hate), 11);
        assert_eq!(train.len(), 900);
    }

    #[test]
    fn split_val_zero_is_identity() {
        let d = labeled(3, 4);
        let (train, val) = split_train_val(&d, 0.0, 5).unwrap();
        assert!(val.is_empty());
        assert_eq!(ids(&train), ids(&d));
    }

    #[test]
    fn split_rejects_tiny_class() {
        let d = labeled(1, 10);
        assert!(matches!(
            split_train_test(&d, 0.2, 1),
            Err(Error::ClassTooSmall { label: Label::Hate, count: 1, .. })
        ));
    }

    #[test]
    fn jsonl_shape() {
        let ex = LabeledExample::gold("a", "t", Label::Hate, "D");
        let line = serde_json::to_string(&ex).unwrap();
        assert_eq!(
            line,
            r#"{"id":"a","text":"t","label":"hate","source_dataset":"D","split":"unsplit","origin":"gold","provenance":null}"#
        );
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once.clone());
        }

        #[test]
        fn split_partitions_and_stratifies(n_hate in 2usize..60, n_non in 2usize..60, frac in 0.05f64..0.6, seed in any::<u64>()) {
            let d = labeled(n_hate, n_non);
            let (a, b) = split_train_test(&d, frac, seed).unwrap();
            let mut all: Vec<String> = ids(&a).into_iter().chain(ids(&b)).collect();
            all.sort();
            let mut orig = ids(&d);
            orig.sort();
            prop_assert_eq!(all, orig);
            for (label, n) in [(Label::Hate, n_hate), (Label::Nonhate, n_non)] {
                let dev = b.count(label) as f64 - frac * n as f64;
                prop_assert!(dev.abs() < 1.0);
            }
            let (a2, b2) = split_train_test(&d, frac, seed).unwrap();
            prop_assert_eq!(serde_json::to_string(a.examples()).unwrap(), serde_json::to_string(a2.examples()).unwrap());
            prop_assert_eq!(ids(&b), ids(&b2));
        }
    }
}
