//! Tunes one generator per class on a toy dataset, samples from each and
//! passes the hate samples through the confidence filter.
//!
//!     cargo run --release --example generate -- [dataset=WS] [count=500]

use synthaug::backend::{BackendClient, ReferenceBackend, TrainingSchedule};
use synthaug::corpus::{split_train_test, split_train_val, Label};
use synthaug::genpipe::{apply_fidelity_filter, build_class_generators, generate_pool, FilterPolicy, PoolOptions};
use synthaug::toy::toy_registry;

fn main() -> synthaug::Result<()> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "WS".into());
    let count: usize = args.next().map(|s| s.parse().expect("count")).unwrap_or(500);

    let dataset = toy_registry(1000, 0)?.into_iter().find(|d| d.name() == name).expect("toy dataset");
    let (train, _) = split_train_test(&dataset, 0.2, 0)?;
    let client = BackendClient::new(ReferenceBackend::default());
    let (hate_gen, nonhate_gen) = build_class_generators(&client, &train)?;

    let opts = PoolOptions { dedup: true, ..PoolOptions::default() };
    let hate = generate_pool(&client, &hate_gen, count, &opts, 1)?;
    let nonhate = generate_pool(&client, &nonhate_gen, 5, &opts, 1)?;
    println!("non-hate samples:");
    for t in nonhate.texts() {
        println!("  {t}");
    }

    let (fit, val) = split_train_val(&train, 0.1, 0)?;
    let schedule = TrainingSchedule { learning_rate: 0.5, warmup_steps: 5, batch_size: 16, ..TrainingSchedule::default() };
    let (classifier, _) = client.train_classifier(fit.examples(), val.examples(), &schedule)?;
    let policy = FilterPolicy::new(classifier, FilterPolicy::DEFAULT_THRESHOLD, Label::Hate)?;
    let (kept, stats) = apply_fidelity_filter(&client, &hate, &policy)?;
    println!("hate pool: {} sampled, {} kept (retention {:.3})", stats.input, stats.kept, stats.retention);
    println!("confidence histogram: {:?}", stats.histogram);
    for item in kept.items.iter().take(5) {
        println!("  {:.3}  {}", item.filter_confidence.unwrap_or(f64::NAN), item.text);
    }
    Ok(())
}
