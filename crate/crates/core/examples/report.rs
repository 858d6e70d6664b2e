//! Recomputes relative-improvement summaries from a metrics CSV (by default
//! the published cross-dataset table shipped as a test fixture).
//!
//!     cargo run --example report -- [metrics.csv] [baseline=4-vs-1]

use std::path::PathBuf;

use synthaug::metrics::{emit_report, pair_with_baseline, parse_metrics_csv, summarize, Report, ReportFormat};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/table2.csv"));
    let baseline = args.next().unwrap_or_else(|| "4-vs-1".into());

    let records = parse_metrics_csv(&std::fs::read_to_string(&path)?)?;
    let summaries = summarize(&pair_with_baseline(&records, &baseline)?)?;
    let report = Report { title: Some(format!("Improvements over `{baseline}`")), records: Vec::new(), summaries };
    println!("{}", emit_report(&report, ReportFormat::Markdown)?);
    Ok(())
}
