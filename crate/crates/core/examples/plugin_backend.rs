//! Hosts the reference backend out of process, once as a stdio plugin and
//! once behind HTTP, and checks both agree with the in-process backend.
//!
//! The example re-executes itself with `serve` to act as the plugin; any
//! program speaking the same line protocol can take its place, including
//! `synthaug plugin`.
//!
//!     cargo run --release --example plugin_backend

use std::io::BufReader;
use std::sync::Arc;
use std::time::Duration;

use synthaug::backend::protocol::serve_lines;
use synthaug::backend::{
    serve_http, BackendClient, BackendDescriptor, Capability, HttpBackend, ReferenceBackend, SubprocessBackend, TrainingSchedule,
    Transport,
};
use synthaug::corpus::split_train_val;
use synthaug::toy::toy_registry;

fn main() -> synthaug::Result<()> {
    if std::env::args().nth(1).as_deref() == Some("serve") {
        let backend = ReferenceBackend::default();
        serve_lines(&backend, BufReader::new(std::io::stdin().lock()), std::io::stdout().lock(), None)
            .expect("stdio plugin");
        return Ok(());
    }

    let exe = std::env::current_exe().expect("current exe").to_string_lossy().into_owned();
    let plugin = BackendClient::new(SubprocessBackend::new(
        BackendDescriptor::new("plugin", Capability::ALL, Transport::Subprocess),
        vec![exe, "serve".into()],
        2,
    )?);
    let server = serve_http(Arc::new(ReferenceBackend::default()), "127.0.0.1:0")?;
    let http = BackendClient::new(HttpBackend::new(
        BackendDescriptor::new("http", Capability::ALL, Transport::Http),
        server.url(),
        Duration::from_secs(30),
    ));
    let local = BackendClient::new(ReferenceBackend::default());

    let data = &toy_registry(500, 0)?[2];
    let (fit, val) = split_train_val(data, 0.1, 0)?;
    let schedule = TrainingSchedule { learning_rate: 0.5, warmup_steps: 5, batch_size: 16, ..TrainingSchedule::default() };
    let texts: Vec<String> = val.examples().iter().take(5).map(|e| e.text.clone()).collect();
    for client in [&local, &plugin, &http] {
        let (handle, log) = client.train_classifier(fit.examples(), val.examples(), &schedule)?;
        let scores = client.predict(&handle, &texts)?;
        println!(
            "{:<9} {:?} model {} stopped at eval {} scores {:.4?}",
            client.name(),
            client.descriptor().transport,
            handle.model_id,
            log.stop_eval(),
            scores
        );
    }
    Ok(())
}
