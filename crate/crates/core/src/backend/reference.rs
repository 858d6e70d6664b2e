use std::collections::HashMap;
use std::sync::RwLock;

use crate::corpus::{Label, LabeledExample};
use crate::error::{Error, Result};
use crate::util::hash_json;

use super::lexicon::{LogisticModel, LogisticTrainer};
use super::ngram::MarkovModel;
use super::training::{run_with_early_stopping, TrainingSchedule};
use super::{Backend, BackendDescriptor, Capability, TrainedModel, Transport};

/// Deterministic in-process backend: logistic token-count classifier plus
/// order-2 Markov generator. Model ids are content hashes of the training
/// inputs, so identical inputs always yield identical ids and models.
#[derive(Debug)]
pub struct ReferenceBackend {
    descriptor: BackendDescriptor,
    classifiers: RwLock<HashMap<String, LogisticModel>>,
    generators: RwLock<HashMap<String, MarkovModel>>,
}

impl Default for ReferenceBackend {
    fn default() -> Self {
        Self::new("reference")
    }
}

impl ReferenceBackend {
    pub fn new(name: &str) -> Self {
        Self::with_capabilities(name, Capability::ALL)
    }

    pub fn with_capabilities(name: &str, caps: impl IntoIterator<Item = Capability>) -> Self {
        Self {
            descriptor: BackendDescriptor::new(name, caps, Transport::InProcess),
            classifiers: RwLock::default(),
            generators: RwLock::default(),
        }
    }

    /// Registers a hand-built classifier and returns its model id.
    pub fn insert_classifier(&self, model: LogisticModel) -> String {
        let id = format!("lex-{}", &hash_json(&model)[..16]);
        self.classifiers.write().expect("lock").insert(id.clone(), model);
        id
    }

    pub fn classifier(&self, model_id: &str) -> Option<LogisticModel> {
        self.classifiers.read().expect("lock").get(model_id).cloned()
    }

    pub fn generator(&self, model_id: &str) -> Option<MarkovModel> {
        self.generators.read().expect("lock").get(model_id).cloned()
    }
}

impl Backend for ReferenceBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn train(&self, train: &[LabeledExample], val: &[LabeledExample], schedule: &TrainingSchedule) -> Result<TrainedModel> {
        let key = hash_json(&(train, val, schedule));
        let mut trainer = LogisticTrainer::new(train, val, schedule);
        let (model, log) = run_with_early_stopping(&mut trainer, schedule)?;
        let model_id = format!("lex-{}", &key[..16]);
        self.classifiers.write().expect("lock").insert(model_id.clone(), model);
        Ok(TrainedModel { model_id, log })
    }

    fn score(&self, model_id: &str, texts: &[String]) -> Result<Vec<f64>> {
        let guard = self.classifiers.read().expect("lock");
        let model = guard.get(model_id).ok_or_else(|| Error::UntrainedClassifier {
            model_id: model_id.to_string(),
        })?;
        Ok(texts.iter().map(|t| model.score(t)).collect())
    }

    fn tune(&self, examples: &[LabeledExample], dataset: &str, class: Label) -> Result<String> {
        let texts: Vec<&str> = examples.iter().map(|e| e.text.as_str()).collect();
        let key = hash_json(&(dataset, class, &texts));
        let model = MarkovModel::fit(texts);
        let model_id = format!("markov-{}", &key[..16]);
        self.generators.write().expect("lock").insert(model_id.clone(), model);
        Ok(model_id)
    }

    fn generate(&self, model_id: &str, count: usize, max_tokens: usize, seed: u64) -> Result<Vec<String>> {
        let guard = self.generators.read().expect("lock");
        let model = guard.get(model_id).ok_or_else(|| Error::UnknownGenerator {
            model_id: model_id.to_string(),
        })?;
        Ok(model.sample(count, max_tokens, seed, model_id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendClient, ClassifierHandle, StopReason};

    fn toy(n: usize) -> Vec<LabeledExample> {
        let mut v = Vec::new();
        for i in 0..n / 2 {
            v.push(LabeledExample::gold(format!("h{i}"), format!("scum vermin out {}", i % 7), Label::Hate, "D"));
            v.push(LabeledExample::gold(format!("n{i}"), format!("lovely morning walk {}", i % 5), Label::Nonhate, "D"));
        }
        v
    }

    #[test]
    fn train_log_shape_on_toy_set() {
        let client = BackendClient::new(ReferenceBackend::default());
        let data = toy(200);
        let schedule = TrainingSchedule {
            learning_rate: 0.1,
            warmup_steps: 10,
            ..Default::default()
        };
        let (handle, log) = client.train_classifier(&data[..180], &data[180..], &schedule).unwrap();
        assert_eq!(handle.trained_on, vec!["D".to_string()]);
        assert!(log.evals.len() <= 12);
        for (k, e) in log.evals.iter().enumerate() {
            assert!((e.epoch - 0.25 * (k + 1) as f64).abs() < 1e-12);
        }
        assert!(matches!(log.stop_reason, StopReason::EarlyStop | StopReason::MaxEpochs));
        let scores = client.predict(&handle, &["scum vermin".into(), "lovely walk".into()]).unwrap();
        assert!(scores[0] > scores[1]);
        // identical inputs -> identical id and scores
        let (h2, _) = client.train_classifier(&data[..180], &data[180..], &schedule).unwrap();
        assert_eq!(h2.model_id, handle.model_id);
    }

    #[test]
    fn predict_requires_training() {
        let client = BackendClient::new(ReferenceBackend::default());
        let h = ClassifierHandle {
            backend: client.descriptor().clone(),
            model_id: "nope".into(),
            trained_on: vec![],
            schedule_used: TrainingSchedule::default(),
        };
        assert_eq!(client.predict(&h, &["x".into()]).unwrap_err().code(), "UNTRAINED_CLASSIFIER");
    }

    #[test]
    fn single_class_training_rejected() {
        let client = BackendClient::new(ReferenceBackend::default());
        let data: Vec<_> = toy(20).into_iter().filter(|e| e.label == Label::Hate).collect();
        let err = client.train_classifier(&data, &[], &TrainingSchedule::default()).unwrap_err();
        assert_eq!(err.code(), "SINGLE_CLASS_TRAIN");
    }

    #[test]
    fn generator_contract() {
        let client = BackendClient::new(ReferenceBackend::default());
        let data = toy(20);
        let hate: Vec<_> = data.iter().filter(|e| e.label == Label::Hate).cloned().collect();
        let g = client.tune_generator(&hate, "D", Label::Hate).unwrap();
        assert_eq!(g.conditioned_on(), ("D", Label::Hate));
        assert_eq!(client.tune_generator(&data, "D", Label::Hate).unwrap_err().code(), "MIXED_CLASS_INPUT");
        let s = client.sample(&g, 100, 30, 4).unwrap();
        assert_eq!(s.len(), 100);
        assert_eq!(s, client.sample(&g, 100, 30, 4).unwrap());
    }

    #[test]
    fn hand_built_classifier() {
        let backend = ReferenceBackend::default();
        let id = backend.insert_classifier(LogisticModel::new([("slur".into(), 2.0)], -1.0));
        let client = BackendClient::new(backend);
        let h = ClassifierHandle {
            backend: client.descriptor().clone(),
            model_id: id,
            trained_on: vec![],
            schedule_used: TrainingSchedule::default(),
        };
        let s = client.predict(&h, &["a slur slur".into(), "zzz".into(), "slur".into()]).unwrap();
        assert!((s[0] - 0.952_574_126_822_433_4).abs() < 1e-12);
        assert!((s[1] - 1.0 / (1.0 + 1f64.exp())).abs() < 1e-15);
        assert!((s[2] - 0.5f64.max(1.0 / (1.0 + (-1f64).exp()))).abs() < 1e-15);
    }
}
