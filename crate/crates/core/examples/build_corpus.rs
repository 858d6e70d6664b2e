//! Builds a filtered synthetic corpus from the toy datasets and prints the
//! per-cell manifest.
//!
//!     cargo run --release --example build_corpus -- [per_class] [out_dir]

use synthaug::backend::{BackendClient, ReferenceBackend, TrainingSchedule};
use synthaug::corpus::split_train_test;
use synthaug::genpipe::{build_synthetic_corpus, CorpusBuildConfig};
use synthaug::toy::toy_registry;

fn main() -> synthaug::Result<()> {
    let mut args = std::env::args().skip(1);
    let per_class: usize = args.next().map(|s| s.parse().expect("per_class")).unwrap_or(2000);
    let out = args.next();

    let client = BackendClient::new(ReferenceBackend::default());
    let trains = toy_registry(500, 0)?
        .iter()
        .map(|d| split_train_test(d, 0.2, 0).map(|(train, _)| train))
        .collect::<synthaug::Result<Vec<_>>>()?;
    let cfg = CorpusBuildConfig {
        name: "toy-mega".into(),
        per_class_count: per_class,
        schedule: TrainingSchedule {
            learning_rate: 0.5,
            warmup_steps: 5,
            batch_size: 16,
            ..TrainingSchedule::default()
        },
        ..CorpusBuildConfig::default()
    };
    let corpus = build_synthetic_corpus(&client, &trains, &cfg)?;
    println!("{:<4} {:<8} {:>6} {:>8} {:>6} {:>9} {:>8}", "set", "class", "count", "sampled", "rounds", "retention", "overlap");
    for c in &corpus.manifest.cells {
        let retention = c.retention.as_ref().map(|r| format!("{:.3}", r.retention)).unwrap_or_else(|| "-".into());
        println!(
            "{:<4} {:<8} {:>6} {:>8} {:>6} {:>9} {:>8}{}",
            c.dataset,
            c.class.as_str(),
            c.count,
            c.raw_sampled,
            c.rounds,
            retention,
            c.gold_overlap,
            if c.exhausted { "  (exhausted)" } else { "" }
        );
    }
    println!("total {}", corpus.total());
    if let Some(dir) = out {
        corpus.write_dir(std::path::Path::new(&dir))?;
        println!("written to {dir}");
    }
    Ok(())
}
