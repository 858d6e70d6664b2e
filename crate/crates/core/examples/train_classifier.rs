//! Trains the reference classifier on four toy datasets with early stopping
//! and scores it on the fifth.
//!
//!     cargo run --release --example train_classifier -- [held_out=SE]

use synthaug::backend::{BackendClient, ReferenceBackend, TrainingSchedule};
use synthaug::corpus::{split_train_test, stratified_split, Label, Split};
use synthaug::metrics::{compute_prf, RunContext};
use synthaug::toy::toy_registry;

fn main() -> synthaug::Result<()> {
    let held_out = std::env::args().nth(1).unwrap_or_else(|| "SE".into());
    let mut train_parts = Vec::new();
    let mut test = None;
    for d in toy_registry(1000, 0)? {
        let (train, t) = split_train_test(&d, 0.2, 0)?;
        if d.name() == held_out {
            test = Some(t);
        } else {
            train_parts.push(train);
        }
    }
    let test = test.unwrap_or_else(|| panic!("unknown dataset {held_out}"));
    let pooled: Vec<_> = train_parts.into_iter().flat_map(|d| d.into_examples()).collect();
    let (fit, val) = stratified_split(pooled, 0.1, 0, Split::Train, Split::Val)?;

    let schedule = TrainingSchedule {
        learning_rate: 0.5,
        warmup_steps: 5,
        batch_size: 16,
        ..TrainingSchedule::default()
    };
    let client = BackendClient::new(ReferenceBackend::default());
    let (handle, log) = client.train_classifier(&fit, &val, &schedule)?;
    for e in &log.evals {
        println!("epoch {:>4.2}  val loss {:.4}{}", e.epoch, e.val_loss, if e.improved { "  *" } else { "" });
    }
    println!("stopped: {:?}, best eval {}", log.stop_reason, log.best_eval);

    let texts: Vec<String> = test.examples().iter().map(|e| e.text.clone()).collect();
    let predictions: Vec<Label> = client
        .predict(&handle, &texts)?
        .into_iter()
        .map(|p| if p >= 0.5 { Label::Hate } else { Label::Nonhate })
        .collect();
    let gold: Vec<Label> = test.examples().iter().map(|e| e.label).collect();
    let m = compute_prf(&predictions, &gold, RunContext::new(&held_out, "reference", "4-vs-1"))?;
    println!("held out {held_out}: P {:.3}  R {:.3}  F1 {:.3}", m.precision, m.recall, m.f1);
    Ok(())
}
