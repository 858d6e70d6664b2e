//! Leave-one-dataset-out suite over the five toy datasets, with and without
//! synthetic augmentation, followed by the improvement report.
//!
//!     cargo run --release --example cross_dataset -- [workers=4] [out_dir]

use std::path::PathBuf;

use synthaug::augment::{AugmentationSpec, CorpusSource};
use synthaug::backend::{BackendClient, ReferenceBackend, TrainingSchedule};
use synthaug::genpipe::{build_synthetic_corpus, CorpusBuildConfig};
use synthaug::metrics::{emit_report, pair_with_baseline, summarize, Report, ReportFormat};
use synthaug::toy::toy_registry;
use synthaug::xeval::{run_suite, Condition, SplitDataset, SuiteSpec, BASELINE_CONDITION};

fn main() -> synthaug::Result<()> {
    let mut args = std::env::args().skip(1);
    let workers: usize = args.next().map(|s| s.parse().expect("workers")).unwrap_or(4);
    let out_dir = args.next().map(PathBuf::from);

    let schedule = TrainingSchedule { learning_rate: 0.5, warmup_steps: 5, batch_size: 16, ..TrainingSchedule::default() };
    let registry = toy_registry(1000, 0)?
        .iter()
        .map(|d| SplitDataset::new(d, 0.2, 0))
        .collect::<synthaug::Result<Vec<_>>>()?;
    let client = BackendClient::new(ReferenceBackend::default());
    let trains: Vec<_> = registry.iter().map(|d| d.train.clone()).collect();
    let corpus = build_synthetic_corpus(
        &client,
        &trains,
        &CorpusBuildConfig { name: "toy-mega".into(), per_class_count: 400, schedule: schedule.clone(), ..CorpusBuildConfig::default() },
    )?;

    let gen = AugmentationSpec::new(1600, vec![CorpusSource::by_dataset_and_class("toy-mega", 1.0)]);
    let spec = SuiteSpec {
        held_out: Vec::new(),
        conditions: vec![Condition::baseline(), Condition::augmented(gen)],
        schedule,
        seed: 1,
        workers,
        out_dir,
    };
    let table = run_suite(&registry, &[client], &[corpus], &spec)?;
    print!("{}", table.to_csv()?);

    let records = table.records();
    let summaries = summarize(&pair_with_baseline(&records, BASELINE_CONDITION)?)?;
    let report = Report { title: Some("Toy cross-dataset suite".into()), records, summaries };
    println!("\n{}", emit_report(&report, ReportFormat::Markdown)?);
    Ok(())
}
