//! Draws a stratified augmentation set from two synthetic corpora, half from
//! each, and prints the per-stratum selection.
//!
//!     cargo run --release --example augment

use synthaug::augment::{assemble_augmentation, AugmentationSpec, CorpusSource};
use synthaug::backend::{BackendClient, ReferenceBackend, TrainingSchedule};
use synthaug::corpus::split_train_test;
use synthaug::genpipe::{build_synthetic_corpus, CorpusBuildConfig};
use synthaug::toy::{toy_group_corpus, toy_registry};

fn main() -> synthaug::Result<()> {
    let client = BackendClient::new(ReferenceBackend::default());
    let trains = toy_registry(500, 0)?
        .iter()
        .map(|d| split_train_test(d, 0.2, 0).map(|(train, _)| train))
        .collect::<synthaug::Result<Vec<_>>>()?;
    let cfg = CorpusBuildConfig {
        name: "toy-mega".into(),
        per_class_count: 200,
        schedule: TrainingSchedule { learning_rate: 0.5, warmup_steps: 5, batch_size: 16, ..TrainingSchedule::default() },
        ..CorpusBuildConfig::default()
    };
    let mega = build_synthetic_corpus(&client, &trains, &cfg)?;
    let groups = toy_group_corpus("toy-groups", "TG", 100, 0)?;

    // leave WS out, as when it is the evaluation target
    let spec = AugmentationSpec::new(
        1200,
        vec![
            CorpusSource::by_dataset_and_class("toy-mega", 0.5),
            CorpusSource::by_class_and_target("toy-groups", 0.5),
        ],
    )
    .excluding(["WS"])
    .with_seed(3);
    let aug = assemble_augmentation(&spec, &[mega, groups])?;
    println!("source quotas: {:?}", aug.manifest.source_quotas);
    for s in &aug.manifest.strata {
        println!("{:<11} {:<40} {:>4} of {:>4}", s.source, s.stratum, s.selected, s.available);
    }
    println!("selected {}", aug.examples.len());
    Ok(())
}
