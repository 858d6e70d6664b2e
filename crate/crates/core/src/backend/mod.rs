//! Model backends.
//!
//! A [`Backend`] trains and applies classifiers and tunes and samples
//! generators. Callers never talk to a backend directly: they go through a
//! [`BackendClient`], which enforces the declared capabilities and the
//! pre/postconditions of each operation so that in-process, subprocess and
//! HTTP backends behave identically from the pipeline's point of view.

mod http;
mod lexicon;
mod ngram;
pub mod protocol;
mod reference;
mod stub;
mod subprocess;
mod training;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, LabeledExample};
use crate::error::{Error, Result};
use crate::util::whitespace_tokens;

pub use http::{serve_http, HttpBackend, HttpServerHandle};
pub use lexicon::{tokenize, LogisticModel};
pub use ngram::{MarkovModel, END, START};
pub use reference::ReferenceBackend;
pub use stub::{FaultInjector, HashScoreBackend};
pub use subprocess::SubprocessBackend;
pub use training::{
    run_with_early_stopping, EvalRecord, StopReason, TrainingLog, TrainingRun, TrainingSchedule,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    TrainClassifier,
    Predict,
    TuneGenerator,
    Sample,
}

impl Capability {
    pub const ALL: [Capability; 4] = [
        Capability::TrainClassifier,
        Capability::Predict,
        Capability::TuneGenerator,
        Capability::Sample,
    ];
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Capability::TrainClassifier => "TRAIN_CLASSIFIER",
            Capability::Predict => "PREDICT",
            Capability::TuneGenerator => "TUNE_GENERATOR",
            Capability::Sample => "SAMPLE",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    InProcess,
    Subprocess,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub capabilities: BTreeSet<Capability>,
    pub transport: Transport,
    #[serde(default)]
    pub config: BTreeMap<String, String>,
}

impl BackendDescriptor {
    pub fn new(name: impl Into<String>, capabilities: impl IntoIterator<Item = Capability>, transport: Transport) -> Self {
        Self {
            name: name.into(),
            capabilities: capabilities.into_iter().collect(),
            transport,
            config: BTreeMap::new(),
        }
    }

    pub fn supports(&self, cap: Capability) -> bool {
        self.capabilities.contains(&cap)
    }

    pub fn require(&self, cap: Capability) -> Result<()> {
        if self.supports(cap) {
            Ok(())
        } else {
            Err(Error::CapabilityMissing {
                backend: self.name.clone(),
                capability: cap.to_string(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHandle {
    pub backend: BackendDescriptor,
    pub model_id: String,
    pub trained_on: Vec<String>,
    pub schedule_used: TrainingSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorHandle {
    pub backend: BackendDescriptor,
    pub model_id: String,
    pub dataset: String,
    pub class: Label,
}

impl GeneratorHandle {
    pub fn conditioned_on(&self) -> (&str, Label) {
        (&self.dataset, self.class)
    }
}

/// What a backend returns from classifier training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model_id: String,
    pub log: TrainingLog,
}

/// Raw backend operations. Implementations may assume the [`BackendClient`]
/// has already checked capabilities and preconditions. Unimplemented
/// operations fall back to `CAPABILITY_MISSING`.
pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    fn train(&self, _train: &[LabeledExample], _val: &[LabeledExample], _schedule: &TrainingSchedule) -> Result<TrainedModel> {
        unreachable_capability(self.descriptor(), Capability::TrainClassifier)
    }

    fn score(&self, _model_id: &str, _texts: &[String]) -> Result<Vec<f64>> {
        unreachable_capability(self.descriptor(), Capability::Predict)
    }

    fn tune(&self, _examples: &[LabeledExample], _dataset: &str, _class: Label) -> Result<String> {
        unreachable_capability(self.descriptor(), Capability::TuneGenerator)
    }

    fn generate(&self, _model_id: &str, _count: usize, _max_tokens: usize, _seed: u64) -> Result<Vec<String>> {
        unreachable_capability(self.descriptor(), Capability::Sample)
    }
}

fn unreachable_capability<T>(desc: &BackendDescriptor, cap: Capability) -> Result<T> {
    Err(Error::CapabilityMissing {
        backend: desc.name.clone(),
        capability: cap.to_string(),
    })
}

/// Contract-enforcing front end over any [`Backend`]. Cheap to clone.
#[derive(Clone)]
pub struct BackendClient {
    inner: Arc<dyn Backend>,
}

impl fmt::Debug for BackendClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackendClient").field("backend", self.inner.descriptor()).finish()
    }
}

impl BackendClient {
    pub fn new(backend: impl Backend + 'static) -> Self {
        Self { inner: Arc::new(backend) }
    }

    pub fn from_arc(inner: Arc<dyn Backend>) -> Self {
        Self { inner }
    }

    pub fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    pub fn name(&self) -> &str {
        &self.inner.descriptor().name
    }

    pub fn train_classifier(
        &self,
        train: &[LabeledExample],
        val: &[LabeledExample],
        schedule: &TrainingSchedule,
    ) -> Result<(ClassifierHandle, TrainingLog)> {
        self.descriptor().require(Capability::TrainClassifier)?;
        schedule.validate()?;
        let has = |l: Label| train.iter().any(|e| e.label == l);
        match (has(Label::Hate), has(Label::Nonhate)) {
            (true, true) => {}
            (true, false) => return Err(Error::SingleClassTrain { present: Label::Hate }),
            (false, true) => return Err(Error::SingleClassTrain { present: Label::Nonhate }),
            (false, false) => return Err(Error::Empty { what: "training set".into() }),
        }
        let trained = self.inner.train(train, val, schedule)?;
        let trained_on: BTreeSet<&str> = train.iter().map(|e| e.source_dataset.as_str()).collect();
        let handle = ClassifierHandle {
            backend: self.descriptor().clone(),
            model_id: trained.model_id,
            trained_on: trained_on.into_iter().map(str::to_string).collect(),
            schedule_used: schedule.clone(),
        };
        Ok((handle, trained.log))
    }

    pub fn predict(&self, classifier: &ClassifierHandle, texts: &[String]) -> Result<Vec<f64>> {
        self.descriptor().require(Capability::Predict)?;
        if texts.is_empty() {
            return Err(Error::Empty { what: "texts to score".into() });
        }
        let scores = self.inner.score(&classifier.model_id, texts)?;
        if scores.len() != texts.len() {
            return Err(Error::backend(
                format!("backend returned {} scores for {} texts", scores.len(), texts.len()),
                false,
            ));
        }
        if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::backend(format!("score {bad} outside [0,1]"), false));
        }
        Ok(scores)
    }

    pub fn tune_generator(&self, examples: &[LabeledExample], dataset: &str, class: Label) -> Result<GeneratorHandle> {
        self.descriptor().require(Capability::TuneGenerator)?;
        if examples.is_empty() {
            return Err(Error::Empty { what: "generator tuning examples".into() });
        }
        if let Some(bad) = examples.iter().find(|e| e.label != class || e.source_dataset != dataset) {
            return Err(Error::MixedClassInput {
                detail: format!(
                    "example `{}` is {}/{}, target is {dataset}/{class}",
                    bad.id, bad.source_dataset, bad.label
                ),
            });
        }
        let model_id = self.inner.tune(examples, dataset, class)?;
        Ok(GeneratorHandle {
            backend: self.descriptor().clone(),
            model_id,
            dataset: dataset.to_string(),
            class,
        })
    }

    /// Samples exactly `count` sequences. Sequences longer than
    /// `max_tokens` whitespace tokens are cut at the budget.
    pub fn sample(&self, generator: &GeneratorHandle, count: usize, max_tokens: usize, seed: u64) -> Result<Vec<String>> {
        self.descriptor().require(Capability::Sample)?;
        if count == 0 {
            return Err(Error::InvalidArgument("sample count must be >= 1".into()));
        }
        if max_tokens == 0 {
            return Err(Error::InvalidArgument("max_tokens must be >= 1".into()));
        }
        let samples = self.inner.generate(&generator.model_id, count, max_tokens, seed)?;
        if samples.len() != count {
            return Err(Error::backend(
                format!("backend returned {} samples, requested {count}", samples.len()),
                false,
            ));
        }
        Ok(samples
            .into_iter()
            .map(|s| {
                if whitespace_tokens(&s) > max_tokens {
                    s.split_whitespace().take(max_tokens).collect::<Vec<_>>().join(" ")
                } else {
                    s
                }
            })
            .collect())
    }
}
