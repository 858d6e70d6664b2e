//! Reads a raw toy dataset, maps its labels, and splits it into stratified
//! train and test sets.
//!
//!     cargo run --example ingest

use std::path::Path;

use synthaug::corpus::{ingest, read_raw_records, split_train_test, Label, LabelMap, LabelTarget};

fn main() -> synthaug::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy/dv.jsonl");
    let records = read_raw_records(&path)?;

    // a strict map refuses labels it does not know
    let partial = LabelMap::strict([("hate", LabelTarget::Hate), ("neither", LabelTarget::Nonhate)]);
    match ingest(&records, &partial, "DV") {
        Err(e) => println!("strict map: {} ({e})", e.code()),
        Ok(_) => unreachable!("the raw file carries a third label"),
    }

    let map = LabelMap::strict([
        ("hate", LabelTarget::Hate),
        ("neither", LabelTarget::Nonhate),
        ("offensive", LabelTarget::Discard),
    ]);
    let dataset = ingest(&records, &map, "DV")?;
    let card = dataset.card();
    println!(
        "{} raw records -> {} kept, hate ratio {:.3}",
        records.len(),
        card.size,
        card.hate_class_ratio
    );

    let (train, test) = split_train_test(&dataset, 0.2, 0)?;
    for (name, part) in [("train", &train), ("test", &test)] {
        println!(
            "{name:<5} {:>4} examples ({} hate / {} non-hate)",
            part.len(),
            part.count(Label::Hate),
            part.count(Label::Nonhate)
        );
    }
    Ok(())
}
