//! Training schedule and the evaluation-interval early-stopping driver.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSchedule {
    pub max_epochs: f64,
    pub eval_interval_epochs: f64,
    pub early_stop_patience_evals: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub seed: u64,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self {
            max_epochs: 3.0,
            eval_interval_epochs: 0.25,
            early_stop_patience_evals: 2,
            batch_size: 32,
            learning_rate: 2e-5,
            warmup_steps: 200,
            seed: 0,
        }
    }
}

impl TrainingSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| {
            Err(Error::ConfigInvalid {
                field: format!("schedule.{field}"),
                message: message.to_string(),
            })
        };
        if !(self.max_epochs > 0.0) {
            return bad("max_epochs", "must be positive");
        }
        if !(self.eval_interval_epochs > 0.0) || self.eval_interval_epochs > self.max_epochs {
            return bad("eval_interval_epochs", "must be in (0, max_epochs]");
        }
        let ratio = self.max_epochs / self.eval_interval_epochs;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return bad("eval_interval_epochs", "must divide max_epochs");
        }
        if self.early_stop_patience_evals < 1 {
            return bad("early_stop_patience_evals", "must be >= 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size", "must be >= 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate", "must be positive");
        }
        Ok(())
    }

    /// Number of evaluation points in a run that reaches `max_epochs`.
    pub fn max_evals(&self) -> usize {
        (self.max_epochs / self.eval_interval_epochs).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// 1-based evaluation index.
    pub eval: usize,
    pub epoch: f64,
    pub val_loss: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub evals: Vec<EvalRecord>,
    pub stop_reason: StopReason,
    pub best_eval: usize,
    pub best_val_loss: f64,
}

impl TrainingLog {
    /// Evaluation index at which training stopped.
    pub fn stop_eval(&self) -> usize {
        self.evals.len()
    }

    /// One JSON object per evaluation followed by a summary line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.evals {
            out.push_str(&serde_json::to_string(e).expect("eval record"));
            out.push('\n');
        }
        let summary = serde_json::json!({
            "stop_reason": self.stop_reason,
            "best_eval": self.best_eval,
            "best_val_loss": self.best_val_loss,
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }
}

/// A resumable training process driven by [`run_with_early_stopping`].
pub trait TrainingRun {
    type Checkpoint;

    /// Continue training until `epochs` epochs (possibly fractional) of
    /// examples have been consumed in total.
    fn train_until(&mut self, epochs: f64) -> Result<()>;

    fn validation_loss(&mut self) -> Result<f64>;

    fn checkpoint(&self) -> Self::Checkpoint;
}

/// Evaluates every `eval_interval_epochs`, keeps the checkpoint with the
/// lowest validation loss, and stops once `patience` consecutive
/// evaluations fail to improve on it or `max_epochs` is reached. A NaN
/// loss never counts as an improvement.
pub fn run_with_early_stopping<R: TrainingRun>(run: &mut R, schedule: &TrainingSchedule) -> Result<(R::Checkpoint, TrainingLog)> {
    schedule.validate()?;
    let n_evals = schedule.max_evals();
    let mut best: Option<(usize, f64, R::Checkpoint)> = None;
    let mut since_best = 0usize;
    let mut evals = Vec::with_capacity(n_evals);
    let mut stop_reason = StopReason::MaxEpochs;

    for k in 1..=n_evals {
        let epoch = k as f64 * schedule.eval_interval_epochs;
        run.train_until(epoch)?;
        let loss = run.validation_loss()?;
        let improved = match &best {
            None => !loss.is_nan(),
            Some((_, b, _)) => loss < *b,
        };
        if improved {
            best = Some((k, loss, run.checkpoint()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        evals.push(EvalRecord {
            eval: k,
            epoch,
            val_loss: loss,
            improved,
        });
        if since_best >= schedule.early_stop_patience_evals {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }

    // all losses NaN: fall back to the final state
    let (best_eval, best_val_loss, checkpoint) = match best {
        Some(b) => b,
        None => (evals.len(), f64::NAN, run.checkpoint()),
    };
    Ok((
        checkpoint,
        TrainingLog {
            evals,
            stop_reason,
            best_eval,
            best_val_loss,
        },
    ))
}
