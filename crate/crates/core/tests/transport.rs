use std::sync::Arc;
use std::time::Duration;

use synthaug::backend::{
    serve_http, BackendClient, BackendDescriptor, Capability, HttpBackend, ReferenceBackend, SubprocessBackend, TrainingSchedule,
    Transport,
};
use synthaug::corpus::{split_train_val, Label};
use synthaug::toy::toy_registry;

fn schedule() -> TrainingSchedule {
    TrainingSchedule {
        learning_rate: 0.5,
        warmup_steps: 5,
        batch_size: 16,
        ..TrainingSchedule::default()
    }
}

fn plugin(extra: &[&str], pool: usize) -> BackendClient {
    let mut cmd = vec![env!("CARGO_BIN_EXE_synthaug").to_string(), "plugin".to_string()];
    cmd.extend(extra.iter().map(|s| s.to_string()));
    let desc = BackendDescriptor::new("plugin", Capability::ALL, Transport::Subprocess);
    BackendClient::new(SubprocessBackend::new(desc, cmd, pool).unwrap())
}

/// Trains, predicts, tunes and samples on `client` and on an in-process
/// reference backend; the two must agree exactly.
fn assert_matches_in_process(client: &BackendClient) {
    let data = &toy_registry(200, 0).unwrap()[0];
    let (train, val) = split_train_val(data, 0.1, 0).unwrap();
    let local = BackendClient::new(ReferenceBackend::default());

    let (h_remote, log_remote) = client.train_classifier(train.examples(), val.examples(), &schedule()).unwrap();
    let (h_local, log_local) = local.train_classifier(train.examples(), val.examples(), &schedule()).unwrap();
    assert_eq!(h_remote.model_id, h_local.model_id);
    assert_eq!(log_remote, log_local);

    let texts: Vec<String> = val.examples().iter().map(|e| e.text.clone()).collect();
    assert_eq!(client.predict(&h_remote, &texts).unwrap(), local.predict(&h_local, &texts).unwrap());

    let hate: Vec<_> = train.examples().iter().filter(|e| e.label == Label::Hate).cloned().collect();
    let g_remote = client.tune_generator(&hate, data.name(), Label::Hate).unwrap();
    let g_local = local.tune_generator(&hate, data.name(), Label::Hate).unwrap();
    assert_eq!(client.sample(&g_remote, 25, 20, 3).unwrap(), local.sample(&g_local, 25, 20, 3).unwrap());
}

#[test]
fn subprocess_plugin_matches_in_process() {
    assert_matches_in_process(&plugin(&[], 2));
}

#[test]
fn http_backend_matches_in_process() {
    let server = serve_http(Arc::new(ReferenceBackend::default()), "127.0.0.1:0").unwrap();
    let desc = BackendDescriptor::new("http", Capability::ALL, Transport::Http);
    let client = BackendClient::new(HttpBackend::new(desc, server.url(), Duration::from_secs(30)));
    assert_matches_in_process(&client);
}

#[test]
fn crashed_plugin_is_respawned_without_its_models() {
    let client = plugin(&["--crash-on", "2"], 1);
    let data = &toy_registry(100, 1).unwrap()[1];
    let (train, val) = split_train_val(data, 0.1, 0).unwrap();
    let (handle, _) = client.train_classifier(train.examples(), val.examples(), &schedule()).unwrap();

    let err = client.predict(&handle, &["g1 h2".to_string()]).unwrap_err();
    assert_eq!(err.code(), "BACKEND_FAILURE");
    assert!(err.is_retryable());

    // fresh process: the model died with the old one
    let err = client.predict(&handle, &["g1 h2".to_string()]).unwrap_err();
    assert_eq!(err.code(), "UNTRAINED_CLASSIFIER");
}

#[test]
fn unreachable_http_backend_is_retryable_failure() {
    let addr = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let desc = BackendDescriptor::new("http", Capability::ALL, Transport::Http);
    let client = BackendClient::new(HttpBackend::new(desc, format!("http://{addr}"), Duration::from_secs(2)));
    let data = &toy_registry(50, 0).unwrap()[0];
    let err = client.train_classifier(data.examples(), &[], &schedule()).unwrap_err();
    assert_eq!(err.code(), "BACKEND_FAILURE");
    assert!(err.is_retryable());
}

#[test]
fn missing_plugin_binary_fails_cleanly() {
    let desc = BackendDescriptor::new("none", Capability::ALL, Transport::Subprocess);
    let client = BackendClient::new(SubprocessBackend::new(desc, vec!["/nonexistent/plugin".into()], 1).unwrap());
    let data = &toy_registry(50, 0).unwrap()[0];
    assert_eq!(client.train_classifier(data.examples(), &[], &schedule()).unwrap_err().code(), "BACKEND_FAILURE");
}
