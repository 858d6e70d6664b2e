use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::corpus::{Label, LabeledExample};
use crate::error::{Error, Result};
use crate::util::sha256_hex;

use super::{Backend, BackendDescriptor, Capability, StopReason, TrainedModel, TrainingLog, TrainingSchedule, Transport};

/// Classifier stub whose hate score is a fixed function of the text: a text
/// that parses as a number in [0,1] scores that number, anything else
/// scores a hash-derived value that is uniform over [0,1).
pub struct HashScoreBackend {
    descriptor: BackendDescriptor,
}

impl HashScoreBackend {
    pub fn new() -> Self {
        Self {
            descriptor: BackendDescriptor::new(
                "hash-score-stub",
                [Capability::TrainClassifier, Capability::Predict],
                Transport::InProcess,
            ),
        }
    }

    pub fn score_text(text: &str) -> f64 {
        if let Ok(v) = text.trim().parse::<f64>() {
            if (0.0..=1.0).contains(&v) {
                return v;
            }
        }
        let h = sha256_hex(text.as_bytes());
        let n = u64::from_str_radix(&h[..13], 16).expect("hex prefix");
        n as f64 / (1u64 << 52) as f64
    }
}

impl Default for HashScoreBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl Backend for HashScoreBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn train(&self, _train: &[LabeledExample], _val: &[LabeledExample], _schedule: &TrainingSchedule) -> Result<TrainedModel> {
        Ok(TrainedModel {
            model_id: "hash-score".into(),
            log: TrainingLog {
                evals: Vec::new(),
                stop_reason: StopReason::MaxEpochs,
                best_eval: 0,
                best_val_loss: 0.0,
            },
        })
    }

    fn score(&self, _model_id: &str, texts: &[String]) -> Result<Vec<f64>> {
        Ok(texts.iter().map(|t| Self::score_text(t)).collect())
    }
}

/// Wraps a backend and fails the `fail_on`-th training call (1-based) with a
/// non-retryable backend failure. Everything else is forwarded.
pub struct FaultInjector {
    inner: Arc<dyn Backend>,
    fail_on: usize,
    calls: AtomicUsize,
}

impl FaultInjector {
    pub fn new(inner: Arc<dyn Backend>, fail_on: usize) -> Self {
        Self {
            inner,
            fail_on,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn train_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for FaultInjector {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    fn train(&self, train: &[LabeledExample], val: &[LabeledExample], schedule: &TrainingSchedule) -> Result<TrainedModel> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        if n == self.fail_on {
            return Err(Error::BackendFailure {
                message: format!("injected fault on training call {n}"),
                retryable: false,
            });
        }
        self.inner.train(train, val, schedule)
    }

    fn score(&self, model_id: &str, texts: &[String]) -> Result<Vec<f64>> {
        self.inner.score(model_id, texts)
    }

    fn tune(&self, examples: &[LabeledExample], dataset: &str, class: Label) -> Result<String> {
        self.inner.tune(examples, dataset, class)
    }

    fn generate(&self, model_id: &str, count: usize, max_tokens: usize, seed: u64) -> Result<Vec<String>> {
        self.inner.generate(model_id, count, max_tokens, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_texts_score_themselves() {
        assert_eq!(HashScoreBackend::score_text("0.71"), 0.71);
        let h = HashScoreBackend::score_text("some words");
        assert!((0.0..1.0).contains(&h));
        assert_eq!(h, HashScoreBackend::score_text("some words"));
    }

    #[test]
    fn hash_scores_look_uniform() {
        let n = 20_000;
        let below: usize = (0..n)
            .filter(|i| HashScoreBackend::score_text(&format!("item {i}")) < 0.3)
            .count();
        let frac = below as f64 / n as f64;
        assert!((frac - 0.3).abs() < 0.02, "{frac}");
    }
}
