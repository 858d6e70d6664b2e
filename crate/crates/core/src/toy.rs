//! Small synthetic gold datasets for tests, examples and the bundled config.
//!
//! Texts are bags of placeholder tokens: `h*` cue words lean hateful, `n*`
//! cue words lean neutral, `g*` name a target group and every dataset has
//! its own filler vocabulary. Each dataset favours a different window of
//! hate cues, so a classifier trained on four of them transfers imperfectly
//! to the fifth.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ingest, Dataset, Label, LabelMap, LabelTarget, LabeledExample, Origin, Provenance, RawRecord, Split};
use crate::error::Result;
use crate::genpipe::SyntheticCorpus;
use crate::util::rng_for;

const HATE_CUES: usize = 20;
const NEUTRAL_CUES: usize = 20;
const FILLER: usize = 40;
const GROUPS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    pub name: String,
    /// Examples kept after label mapping.
    pub size: usize,
    pub hate_ratio: f64,
    /// Raw label strings used for hate and non-hate records.
    pub hate_labels: Vec<String>,
    pub nonhate_label: String,
    /// Extra raw label that the label map discards, if any.
    pub discard_label: Option<String>,
    /// Fraction of hate records labeled non-hate; non-hate records are
    /// flipped at a fifth of this rate.
    pub label_noise: f64,
}

impl ToySpec {
    pub fn label_map(&self) -> LabelMap {
        let mut pairs: Vec<(&str, LabelTarget)> = self.hate_labels.iter().map(|l| (l.as_str(), LabelTarget::Hate)).collect();
        pairs.push((self.nonhate_label.as_str(), LabelTarget::Nonhate));
        if let Some(d) = &self.discard_label {
            pairs.push((d.as_str(), LabelTarget::Discard));
        }
        LabelMap::strict(pairs)
    }
}

fn spec(name: &str, size: usize, hate_ratio: f64, hate: &[&str], non: &str, discard: Option<&str>) -> ToySpec {
    ToySpec {
        name: name.into(),
        size,
        hate_ratio,
        hate_labels: hate.iter().map(|s| s.to_string()).collect(),
        nonhate_label: non.into(),
        discard_label: discard.map(String::from),
        label_noise: 0.05,
    }
}

/// Five datasets whose class ratios follow the benchmark collection.
pub fn toy_specs(size: usize) -> Vec<ToySpec> {
    vec![
        spec("DV", size, 0.24, &["hate"], "neither", Some("offensive")),
        spec("FT", size, 0.11, &["hateful"], "normal", Some("spam")),
        spec("WS", size, 0.15, &["racism", "sexism"], "none", None),
        spec("SF", size, 0.11, &["hate"], "noHate", Some("relation")),
        spec("SE", size, 0.40, &["1"], "0", None),
    ]
}

fn toy_text(rng: &mut impl Rng, dataset_idx: usize, prefix: &str, hateful: bool) -> String {
    let len = rng.random_range(8..=16);
    let window = dataset_idx * 3;
    let mut words = Vec::with_capacity(len + 1);
    words.push(format!("g{}", rng.random_range(0..GROUPS)));
    for _ in 0..len {
        let r: f64 = rng.random();
        let w = if hateful && r < 0.3 {
            format!("h{}", (window + rng.random_range(0..10)) % HATE_CUES)
        } else if !hateful && r < 0.3 {
            format!("n{}", rng.random_range(0..NEUTRAL_CUES))
        } else if !hateful && r < 0.33 {
            format!("h{}", rng.random_range(0..HATE_CUES))
        } else {
            format!("{prefix}{}", rng.random_range(0..FILLER))
        };
        words.push(w);
    }
    words.join(" ")
}

/// Raw records for one spec; texts are unique within the dataset.
pub fn toy_records(spec: &ToySpec, dataset_idx: usize, seed: u64) -> Vec<RawRecord> {
    let mut rng = rng_for(seed, &format!("toy/{}", spec.name));
    let prefix = spec.name.to_lowercase();
    let n_hate = (spec.hate_ratio * spec.size as f64).round() as usize;
    let n_discard = if spec.discard_label.is_some() { spec.size / 10 } else { 0 };
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(spec.size + n_discard);
    let mut i = 0;
    while out.len() < spec.size + n_discard {
        let hateful = i < n_hate;
        let text = toy_text(&mut rng, dataset_idx, &prefix, hateful);
        if !seen.insert(text.clone()) {
            continue;
        }
        let flip_rate = if hateful { spec.label_noise } else { spec.label_noise / 5.0 };
        let noisy = rng.random::<f64>() < flip_rate;
        let label = if i >= spec.size {
            spec.discard_label.clone().expect("discard label")
        } else if hateful != noisy {
            spec.hate_labels[i % spec.hate_labels.len()].clone()
        } else {
            spec.nonhate_label.clone()
        };
        out.push(RawRecord::new(format!("{}-{i:05}", spec.name), text, label));
        i += 1;
    }
    out
}

/// Ingested toy datasets, `size` examples each.
pub fn toy_registry(size: usize, seed: u64) -> Result<Vec<Dataset>> {
    toy_specs(size)
        .iter()
        .enumerate()
        .map(|(i, s)| ingest(&toy_records(s, i, seed), &s.label_map(), &s.name))
        .collect()
}

/// An external synthetic corpus with target-group annotations: `per_cell`
/// items for every (class, group) pair, all attributed to `source`.
pub fn toy_group_corpus(name: &str, source: &str, per_cell: usize, seed: u64) -> Result<SyntheticCorpus> {
    let mut rng = rng_for(seed, &format!("toy-group/{name}"));
    let mut seen = HashSet::new();
    let mut examples = Vec::with_capacity(per_cell * 2 * GROUPS);
    for label in Label::ALL {
        for g in 0..GROUPS {
            let mut k = 0;
            while k < per_cell {
                let body = toy_text(&mut rng, 7, "tg", label == Label::Hate);
                let text = format!("g{g} {}", body.split_once(' ').map(|(_, rest)| rest).unwrap_or(""));
                if !seen.insert(text.clone()) {
                    continue;
                }
                examples.push(LabeledExample {
                    id: format!("{name}-{}-g{g}-{k}", label.as_str()),
                    text,
                    label,
                    source_dataset: source.into(),
                    split: Split::Unsplit,
                    origin: Origin::Synthetic,
                    provenance: Some(Provenance {
                        corpus: Some(name.into()),
                        generator_class: Some(label),
                        target_group: Some(format!("g{g}")),
                        filter_confidence: None,
                    }),
                });
                k += 1;
            }
        }
    }
    SyntheticCorpus::from_examples(name, &examples)
}

/// Completion reply for the toy data: `Hateful` when the text inside the
/// prompt's final quoted block carries at least two `h*` cue tokens.
pub fn keyword_reply(prompt: &str) -> &'static str {
    let text = prompt
        .rsplit_once("Text: \"")
        .map(|(_, rest)| rest.rsplit_once('"').map(|(t, _)| t).unwrap_or(rest))
        .unwrap_or(prompt);
    let cues = text
        .split_whitespace()
        .filter(|w| w.len() > 1 && w.starts_with('h') && w[1..].chars().all(|c| c.is_ascii_digit()))
        .count();
    if cues >= 2 {
        " Hateful"
    } else {
        " Non-hateful"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_sizes_and_ratios() {
        let reg = toy_registry(500, 1).unwrap();
        assert_eq!(reg.len(), 5);
        for d in &reg {
            assert_eq!(d.len(), 500);
            assert!(d.count(Label::Hate) >= 2);
        }
        let se = &reg[4];
        let ratio = se.card().hate_class_ratio;
        assert!((ratio - 0.40).abs() < 0.06, "{ratio}");
    }

    #[test]
    fn texts_never_collide_across_datasets() {
        let reg = toy_registry(300, 2).unwrap();
        let mut seen = HashSet::new();
        for d in &reg {
            for e in d.examples() {
                assert!(seen.insert(e.text.clone()));
            }
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(toy_registry(50, 3).unwrap(), toy_registry(50, 3).unwrap());
    }

    #[test]
    fn keyword_reply_reads_only_the_input() {
        assert_eq!(keyword_reply("h1 h2 h3\nText: \"g0 h4 dv1\"\nCategory:"), " Non-hateful");
        assert_eq!(keyword_reply("Text: \"g0 h4 dv1 h7\"\nCategory:"), " Hateful");
    }

    #[test]
    fn group_corpus_cells() {
        let c = toy_group_corpus("tg", "toxigen", 10, 0).unwrap();
        assert_eq!(c.total(), 2 * GROUPS * 10);
        assert!(c.examples().iter().all(|e| e.provenance.as_ref().unwrap().target_group.is_some()));
    }
}
