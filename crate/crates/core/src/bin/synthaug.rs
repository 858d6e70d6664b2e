use std::io::{self, BufReader};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use synthaug::backend::protocol::serve_lines;
use synthaug::backend::{serve_http, ReferenceBackend};
use synthaug::pipeline::{ErrorReport, Pipeline, RunConfig, Stage};
use synthaug::Error;

#[derive(Parser)]
#[command(name = "synthaug", version, about = "Synthetic augmentation and cross-dataset evaluation runs")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read, label-map and split the gold datasets.
    Ingest,
    /// Build the filtered synthetic corpus.
    BuildCorpus,
    /// Select augmentation sets for every augmented condition.
    Assemble,
    /// Run the leave-one-out suite.
    Xeval,
    /// Prompt-based zero-shot baseline.
    Zeroshot,
    /// Render report.md and summary.csv.
    Report,
    /// Every configured stage in order.
    All,
    /// Serve the reference backend over stdio (or HTTP with --http).
    Plugin {
        /// Exit abruptly on the Nth request.
        #[arg(long)]
        crash_on: Option<usize>,
        /// Listen address for HTTP instead of stdio, e.g. 127.0.0.1:8080.
        #[arg(long)]
        http: Option<String>,
    },
}

fn load(cli: &Cli) -> Result<Pipeline, Error> {
    let path = cli.config.as_ref().ok_or_else(|| Error::ConfigInvalid {
        field: "--config".into(),
        message: "a run configuration is required".into(),
    })?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(out) = &cli.out {
        cfg.output_dir = std::env::current_dir().map(|d| d.join(out)).unwrap_or_else(|_| out.clone());
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    Pipeline::new(cfg)
}

fn fail(err: &Error, stage: Option<Stage>, pipeline: Option<&Pipeline>) -> ExitCode {
    let report = ErrorReport::new(err, stage, pipeline.map(|p| p.config_hash().to_string()));
    if let Some(p) = pipeline {
        if let Err(e) = p.write_error(err, stage) {
            log::warn!("could not write error.json: {e}");
        }
    }
    eprintln!("{}", serde_json::to_string(&report).expect("serializable"));
    match err {
        Error::ConfigInvalid { .. } => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn plugin(crash_on: Option<usize>, http: Option<String>) -> Result<(), Error> {
    if let Some(addr) = http {
        let handle = serve_http(Arc::new(ReferenceBackend::default()), &addr)?;
        println!("{}", handle.url());
        loop {
            std::thread::park();
        }
    }
    let backend = ReferenceBackend::default();
    serve_lines(&backend, BufReader::new(io::stdin().lock()), io::stdout().lock(), crash_on)
        .map_err(|e| Error::BackendFailure { message: e.to_string(), retryable: false })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Command::Plugin { crash_on, http } = &cli.command {
        return match plugin(*crash_on, http.clone()) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => fail(&e, None, None),
        };
    }
    let pipeline = match load(&cli) {
        Ok(p) => p,
        Err(e) => return fail(&e, None, None),
    };
    let stages = match cli.command {
        Command::Ingest => vec![Stage::Ingest],
        Command::BuildCorpus => vec![Stage::BuildCorpus],
        Command::Assemble => vec![Stage::Assemble],
        Command::Xeval => vec![Stage::Xeval],
        Command::Zeroshot => vec![Stage::Zeroshot],
        Command::Report => vec![Stage::Report],
        Command::All => pipeline.plan_all(),
        Command::Plugin { .. } => unreachable!(),
    };
    for stage in stages {
        match pipeline.run_stage(stage) {
            Ok(status) => println!("{stage}: {}", serde_json::to_value(status).expect("serializable").as_str().unwrap_or("")),
            Err(e) => return fail(&e, Some(stage), Some(&pipeline)),
        }
    }
    ExitCode::SUCCESS
}
