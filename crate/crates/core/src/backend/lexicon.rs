//! Reference classifier: logistic regression over token counts, trained by
//! mini-batch gradient descent with linear learning-rate warmup.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, LabeledExample};
use crate::error::Result;
use crate::util::rng_for;

use super::training::{TrainingRun, TrainingSchedule};

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: BTreeMap<String, f64>,
    pub bias: f64,
}

impl LogisticModel {
    pub fn new(weights: impl IntoIterator<Item = (String, f64)>, bias: f64) -> Self {
        Self {
            weights: weights.into_iter().collect(),
            bias,
        }
    }

    /// Hate confidence: sigmoid of bias plus the weight of every token
    /// occurrence. Unknown tokens contribute nothing.
    pub fn score(&self, text: &str) -> f64 {
        let z = tokenize(text)
            .iter()
            .map(|t| self.weights.get(t).copied().unwrap_or(0.0))
            .sum::<f64>()
            + self.bias;
        sigmoid(z)
    }
}

struct Encoded {
    /// (feature index, count)
    features: Vec<(usize, f64)>,
    target: f64,
}

fn encode(examples: &[LabeledExample], vocab: &mut HashMap<String, usize>, grow: bool) -> Vec<Encoded> {
    examples
        .iter()
        .map(|ex| {
            let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
            for tok in tokenize(&ex.text) {
                let idx = match vocab.get(&tok) {
                    Some(&i) => Some(i),
                    None if grow => {
                        let i = vocab.len();
                        vocab.insert(tok, i);
                        Some(i)
                    }
                    None => None,
                };
                if let Some(i) = idx {
                    *counts.entry(i).or_default() += 1.0;
                }
            }
            Encoded {
                features: counts.into_iter().collect(),
                target: if ex.label == Label::Hate { 1.0 } else { 0.0 },
            }
        })
        .collect()
}

pub(crate) struct LogisticTrainer {
    vocab: Vec<String>,
    train: Vec<Encoded>,
    val: Vec<Encoded>,
    weights: Vec<f64>,
    bias: f64,
    schedule: TrainingSchedule,
    order: Vec<usize>,
    epoch: usize,
    cursor: usize,
    consumed: usize,
    step: usize,
}

impl LogisticTrainer {
    pub(crate) fn new(train: &[LabeledExample], val: &[LabeledExample], schedule: &TrainingSchedule) -> Self {
        let mut vocab_map = HashMap::new();
        let train_enc = encode(train, &mut vocab_map, true);
        let val_enc = encode(val, &mut vocab_map, false);
        let mut vocab = vec![String::new(); vocab_map.len()];
        for (tok, i) in vocab_map {
            vocab[i] = tok;
        }
        let mut trainer = Self {
            weights: vec![0.0; vocab.len()],
            vocab,
            train: train_enc,
            val: val_enc,
            bias: 0.0,
            schedule: schedule.clone(),
            order: Vec::new(),
            epoch: 0,
            cursor: 0,
            consumed: 0,
            step: 0,
        };
        trainer.reshuffle();
        trainer
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.train.len()).collect();
        let mut rng = rng_for(self.schedule.seed, &format!("lexicon/epoch/{}", self.epoch));
        self.order.shuffle(&mut rng);
        self.cursor = 0;
    }

    fn logit(weights: &[f64], bias: f64, ex: &Encoded) -> f64 {
        ex.features.iter().map(|&(i, c)| weights[i] * c).sum::<f64>() + bias
    }

    fn learning_rate(&self) -> f64 {
        let warm = self.schedule.warmup_steps;
        if warm == 0 {
            self.schedule.learning_rate
        } else {
            self.schedule.learning_rate * ((self.step + 1) as f64 / warm as f64).min(1.0)
        }
    }

    fn gradient_step(&mut self, batch: &[usize]) {
        let lr = self.learning_rate();
        let scale = lr / batch.len() as f64;
        let mut grad: BTreeMap<usize, f64> = BTreeMap::new();
        let mut grad_bias = 0.0;
        for &i in batch {
            let ex = &self.train[i];
            let err = sigmoid(Self::logit(&self.weights, self.bias, ex)) - ex.target;
            grad_bias += err;
            for &(f, c) in &ex.features {
                *grad.entry(f).or_default() += err * c;
            }
        }
        for (f, g) in grad {
            self.weights[f] -= scale * g;
        }
        self.bias -= scale * grad_bias;
        self.step += 1;
    }

    fn loss(&self, set: &[Encoded]) -> f64 {
        if set.is_empty() {
            return f64::NAN;
        }
        let eps = 1e-12;
        set.iter()
            .map(|ex| {
                let p = sigmoid(Self::logit(&self.weights, self.bias, ex)).clamp(eps, 1.0 - eps);
                -(ex.target * p.ln() + (1.0 - ex.target) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / set.len() as f64
    }
}

impl TrainingRun for LogisticTrainer {
    type Checkpoint = LogisticModel;

    fn train_until(&mut self, epochs: f64) -> Result<()> {
        let n = self.train.len();
        let target = (epochs * n as f64).round() as usize;
        while self.consumed < target {
            if self.cursor == n {
                self.epoch += 1;
                self.reshuffle();
            }
            let take = self
                .schedule
                .batch_size
                .min(target - self.consumed)
                .min(n - self.cursor);
            let batch: Vec<usize> = self.order[self.cursor..self.cursor + take].to_vec();
            self.gradient_step(&batch);
            self.cursor += take;
            self.consumed += take;
        }
        Ok(())
    }

    /// Mean cross-entropy on the validation set, or on the training set when
    /// no validation examples were supplied.
    fn validation_loss(&mut self) -> Result<f64> {
        if self.val.is_empty() {
            Ok(self.loss(&self.train))
        } else {
            Ok(self.loss(&self.val))
        }
    }

    fn checkpoint(&self) -> LogisticModel {
        LogisticModel {
            weights: self
                .vocab
                .iter()
                .cloned()
                .zip(self.weights.iter().copied())
                .filter(|(_, w)| *w != 0.0)
                .collect(),
            bias: self.bias,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::training::run_with_early_stopping;

    #[test]
    fn tokenization() {
        assert_eq!(tokenize("A slur, SLUR!"), vec!["a", "slur", "slur"]);
        assert!(tokenize("  ...  ").is_empty());
    }

    #[test]
    fn score_matches_hand_computed_logistic() {
        let m = LogisticModel::new([("slur".to_string(), 2.0)], -1.0);
        // z = -1 + 2 + 2 = 3; 1 / (1 + e^-3)
        let expected = 1.0 / (1.0 + (-3.0f64).exp());
        assert!((m.score("a slur slur") - expected).abs() < 1e-15);
        assert!((m.score("a slur slur") - 0.9526).abs() < 5e-5);
        assert_eq!(m.score("nothing here"), sigmoid(-1.0));
    }

    #[test]
    fn learns_a_separable_toy_problem() {
        let mut ex = Vec::new();
        for i in 0..40 {
            ex.push(LabeledExample::gold(format!("h{i}"), format!("vile slur {i}"), Label::Hate, "D"));
            ex.push(LabeledExample::gold(format!("n{i}"), format!("sunny park {i}"), Label::Nonhate, "D"));
        }
        let schedule = TrainingSchedule {
            learning_rate: 0.5,
            warmup_steps: 0,
            batch_size: 8,
            ..Default::default()
        };
        let mut t = LogisticTrainer::new(&ex, &ex[..20], &schedule);
        let (model, log) = run_with_early_stopping(&mut t, &schedule).unwrap();
        assert!(model.score("vile slur") > 0.8);
        assert!(model.score("sunny park") < 0.2);
        assert!(log.best_val_loss < log.evals[0].val_loss || log.best_eval == 1);
    }
}
