use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crate::corpus::{Label, LabeledExample};
use crate::error::{Error, Result};

use super::protocol::{handle, Request, Response};
use super::{Backend, BackendDescriptor, TrainedModel, TrainingSchedule, Transport};

/// Backend reached over HTTP: each request is POSTed to `<base>/v1/<op>`.
pub struct HttpBackend {
    descriptor: BackendDescriptor,
    base_url: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(mut descriptor: BackendDescriptor, base_url: impl Into<String>, timeout: Duration) -> Self {
        descriptor.transport = Transport::Http;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            descriptor,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent,
        }
    }

    fn call(&self, request: &Request) -> Result<Response> {
        let url = format!("{}/v1/{}", self.base_url, request.op());
        let mut resp = self
            .agent
            .post(&url)
            .send_json(request)
            .map_err(|e| Error::backend(format!("POST {url}: {e}"), true))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::backend(format!("reading {url}: {e}"), true))?;
        let parsed: Response = serde_json::from_str(&body).map_err(|e| {
            Error::backend(format!("HTTP {status} from {url} with unparseable body: {e}"), status >= 500)
        })?;
        parsed.into_result()
    }
}

fn missing(field: &str) -> Error {
    Error::backend(format!("HTTP backend response lacks `{field}`"), false)
}

impl Backend for HttpBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn train(&self, train: &[LabeledExample], val: &[LabeledExample], schedule: &TrainingSchedule) -> Result<TrainedModel> {
        let resp = self.call(&Request::TrainClassifier {
            train: train.to_vec(),
            val: val.to_vec(),
            schedule: schedule.clone(),
        })?;
        Ok(TrainedModel {
            model_id: resp.model_id.ok_or_else(|| missing("model_id"))?,
            log: resp.log.ok_or_else(|| missing("log"))?,
        })
    }

    fn score(&self, model_id: &str, texts: &[String]) -> Result<Vec<f64>> {
        self.call(&Request::Predict {
            model_id: model_id.into(),
            texts: texts.to_vec(),
        })?
        .scores
        .ok_or_else(|| missing("scores"))
    }

    fn tune(&self, examples: &[LabeledExample], dataset: &str, class: Label) -> Result<String> {
        self.call(&Request::TuneGenerator {
            examples: examples.to_vec(),
            dataset: dataset.into(),
            class,
        })?
        .model_id
        .ok_or_else(|| missing("model_id"))
    }

    fn generate(&self, model_id: &str, count: usize, max_tokens: usize, seed: u64) -> Result<Vec<String>> {
        self.call(&Request::Sample {
            model_id: model_id.into(),
            count,
            max_tokens,
            seed,
        })?
        .samples
        .ok_or_else(|| missing("samples"))
    }
}

/// Running HTTP front end for a backend; stops when dropped.
pub struct HttpServerHandle {
    server: Arc<tiny_http::Server>,
    thread: Option<JoinHandle<()>>,
    url: String,
}

impl HttpServerHandle {
    pub fn url(&self) -> &str {
        &self.url
    }
}

impl Drop for HttpServerHandle {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Serves `backend` at `addr` (use port 0 for an ephemeral port).
pub fn serve_http(backend: Arc<dyn Backend>, addr: &str) -> Result<HttpServerHandle> {
    let server = Arc::new(tiny_http::Server::http(addr).map_err(|e| Error::backend(format!("bind {addr}: {e}"), false))?);
    let port = server
        .server_addr()
        .to_ip()
        .map(|a| a.port())
        .ok_or_else(|| Error::backend("server has no IP address", false))?;
    let host = addr.rsplit_once(':').map(|(h, _)| h).unwrap_or("127.0.0.1");
    let url = format!("http://{host}:{port}");
    let srv = Arc::clone(&server);
    let thread = std::thread::spawn(move || {
        for mut req in srv.incoming_requests() {
            let op = req.url().trim_start_matches("/v1/").to_string();
            let mut body = String::new();
            let resp = match req.as_reader().read_to_string(&mut body) {
                Err(e) => Response::error(&Error::Format(e.to_string())),
                Ok(_) => match serde_json::from_str::<Request>(&body) {
                    Ok(r) if r.op() == op => handle(backend.as_ref(), r),
                    Ok(r) => Response::error(&Error::Format(format!("op `{}` posted to /v1/{op}", r.op()))),
                    Err(e) => Response::error(&Error::Format(format!("bad request: {e}"))),
                },
            };
            let status = if resp.ok { 200 } else { 400 };
            let json = serde_json::to_string(&resp).expect("response json");
            let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("header");
            let _ = req.respond(tiny_http::Response::from_string(json).with_status_code(status).with_header(header));
        }
    });
    Ok(HttpServerHandle {
        server,
        thread: Some(thread),
        url,
    })
}
