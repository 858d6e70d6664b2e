//! Regenerates the raw toy datasets shipped under `data/toy/`.
//!
//! Usage: `cargo run --example toy_data -- [size=1000] [out_dir=data/toy]`

use std::path::PathBuf;

use synthaug::toy::{toy_group_corpus, toy_records, toy_specs};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let size: usize = args.next().map(|s| s.parse().expect("size")).unwrap_or(1000);
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/toy"));
    std::fs::create_dir_all(&out)?;

    for (i, spec) in toy_specs(size).iter().enumerate() {
        let records = toy_records(spec, i, 0);
        let path = out.join(format!("{}.jsonl", spec.name.to_lowercase()));
        let lines: Vec<String> = records.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
        std::fs::write(&path, lines.join("\n") + "\n")?;
        println!("{:<4} {:>6} raw records -> {}", spec.name, records.len(), path.display());
    }

    let groups = toy_group_corpus("toy-groups", "TG", 50, 0)?;
    let path = out.join("toy_groups.jsonl");
    let lines: Vec<String> = groups.examples().iter().map(|e| serde_json::to_string(e).unwrap()).collect();
    std::fs::write(&path, lines.join("\n") + "\n")?;
    println!("TG   {:>6} synthetic examples -> {}", groups.total(), path.display());
    Ok(())
}
