//! Zero-shot classification through a text-completion endpoint.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};
use std::thread::JoinHandle;
use std::time::Duration;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Label, LabeledExample};
use crate::error::{Error, Result};
use crate::metrics::{compute_prf, MetricsRecord, RunContext};
use crate::util::{rng_for, round_half_up, write_jsonl};

pub const DEFAULT_SAMPLE_FRACTION: f64 = 0.2;
pub const ZERO_SHOT_CONDITION: &str = "zero-shot";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptTemplate {
    pub task_framing: String,
    pub procedure: String,
    pub hate_definition: String,
    pub nonhate_definition: String,
    /// Marker replaced by the input text; must occur exactly once in
    /// `input_block`.
    pub input_slot: String,
    pub input_block: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            task_framing: "You are a hate speech classification system.".into(),
            procedure: "Read the text below and assign it to exactly one of the two categories defined next. \
                        Answer with a single word, either hateful or non-hateful, and nothing else."
                .into(),
            hate_definition: "hateful: the text attacks, demeans or incites violence against people because of \
                              their race, ethnicity, nationality, religion, gender or sexual orientation."
                .into(),
            nonhate_definition: "non-hateful: the text does not attack any group on the basis of those \
                                 characteristics, even if it is rude or offensive in other ways."
                .into(),
            input_slot: "{text}".into(),
            input_block: "Text: \"{text}\"\nCategory:".into(),
        }
    }
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<()> {
        if self.input_slot.is_empty() {
            return Err(Error::ConfigInvalid {
                field: "zeroshot.template.input_slot".into(),
                message: "empty marker".into(),
            });
        }
        let n = self.input_block.matches(&self.input_slot).count();
        if n != 1 {
            return Err(Error::ConfigInvalid {
                field: "zeroshot.template.input_block".into(),
                message: format!("input slot `{}` occurs {n} times, expected 1", self.input_slot),
            });
        }
        Ok(())
    }

    /// The marker with a backslash after its first character.
    fn escaped_slot(&self) -> String {
        let mut chars = self.input_slot.chars();
        let first = chars.next().map(String::from).unwrap_or_default();
        format!("{first}\\{}", chars.as_str())
    }

    /// Input text with every occurrence of the marker escaped.
    pub fn escape_input(&self, text: &str) -> String {
        text.replace(&self.input_slot, &self.escaped_slot())
    }
}

pub fn render_prompt(template: &PromptTemplate, text: &str) -> Result<String> {
    if text.trim().is_empty() {
        return Err(Error::EmptyText { id: "<prompt input>".into() });
    }
    template.validate()?;
    let (before, after) = template
        .input_block
        .split_once(&template.input_slot)
        .expect("validated single slot");
    Ok(format!(
        "{}\n\n{}\n\n- {}\n- {}\n\n{before}{}{after}",
        template.task_framing,
        template.procedure,
        template.hate_definition,
        template.nonhate_definition,
        template.escape_input(text),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ParsedLabel {
    Hate,
    Nonhate,
    Unparsed,
}

impl ParsedLabel {
    /// Prediction used for scoring; unparsed answers count as non-hate.
    pub fn as_prediction(self) -> Label {
        match self {
            ParsedLabel::Hate => Label::Hate,
            ParsedLabel::Nonhate | ParsedLabel::Unparsed => Label::Nonhate,
        }
    }
}

fn negated_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"non[\s\-_]*hateful").expect("static regex"))
}

/// Case-insensitive; the negated form is checked first so that
/// "non-hateful" never reads as "hateful".
pub fn parse_response(raw: &str) -> ParsedLabel {
    let lower = raw.to_lowercase();
    if negated_pattern().is_match(&lower) {
        ParsedLabel::Nonhate
    } else if lower.contains("hateful") {
        ParsedLabel::Hate
    } else {
        ParsedLabel::Unparsed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompletionClientConfig {
    pub endpoint: String,
    pub model_name: String,
    pub max_parallel: usize,
    /// Attempts per item, shared between transport retries and re-asks.
    pub retry_budget: usize,
    pub backoff_initial_ms: u64,
    pub backoff_factor: f64,
    pub timeout_ms: u64,
    pub max_tokens: usize,
    /// Environment variable holding the API key, sent as a bearer token.
    pub api_key_env: String,
    /// JSON pointer to the completion text in the response body.
    pub text_pointer: String,
}

impl Default for CompletionClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8080/v1/completions".into(),
            model_name: "text-davinci-003".into(),
            max_parallel: 4,
            retry_budget: 2,
            backoff_initial_ms: 200,
            backoff_factor: 2.0,
            timeout_ms: 30_000,
            max_tokens: 5,
            api_key_env: "SYNTHAUG_COMPLETION_API_KEY".into(),
            text_pointer: "/choices/0/text".into(),
        }
    }
}

impl CompletionClientConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| {
            Err(Error::ConfigInvalid {
                field: format!("zeroshot.client.{field}"),
                message: message.into(),
            })
        };
        if self.max_parallel == 0 {
            return bad("max_parallel", "must be >= 1");
        }
        if self.retry_budget == 0 {
            return bad("retry_budget", "must be >= 1");
        }
        if !self.text_pointer.is_empty() && !self.text_pointer.starts_with('/') {
            return bad("text_pointer", "must be a JSON pointer starting with `/`");
        }
        Ok(())
    }

    fn backoff(&self, attempt: usize) -> Duration {
        let ms = self.backoff_initial_ms as f64 * self.backoff_factor.powi(attempt.saturating_sub(1) as i32);
        Duration::from_millis(ms as u64)
    }
}

/// Anything that turns a prompt into a completion.
pub trait CompletionClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String>;
}

pub struct HttpCompletionClient {
    config: CompletionClientConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl HttpCompletionClient {
    pub fn new(config: CompletionClientConfig) -> Result<Self> {
        config.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Ok(Self { config, agent, api_key })
    }
}

impl CompletionClient for HttpCompletionClient {
    fn complete(&self, prompt: &str) -> Result<String> {
        let body = serde_json::json!({
            "model": self.config.model_name,
            "prompt": prompt,
            "max_tokens": self.config.max_tokens,
        });
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| Error::backend(format!("POST {}: {e}", self.config.endpoint), true))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::backend(format!("reading completion: {e}"), true))?;
        match status {
            200..=299 => {}
            429 => return Err(Error::QuotaExceeded(text)),
            s => return Err(Error::backend(format!("HTTP {s}: {text}"), s >= 500)),
        }
        let json: serde_json::Value = serde_json::from_str(&text)?;
        json.pointer(&self.config.text_pointer)
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| Error::Format(format!("no string at `{}` in completion", self.config.text_pointer)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotResult {
    pub input_id: String,
    pub gold: Label,
    pub raw_response: String,
    pub parsed_label: ParsedLabel,
    pub attempts: usize,
    /// Transport error that exhausted the budget, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotOutcome {
    pub metrics: MetricsRecord,
    pub results: Vec<ZeroShotResult>,
    /// Items scored as non-hate because no label could be read.
    pub n_unparsed: usize,
    pub n_failed: usize,
}

impl ZeroShotOutcome {
    pub fn write_transcript(&self, path: &std::path::Path) -> Result<()> {
        write_jsonl(path, &self.results)
    }
}

/// Class-stratified sample of `round(fraction * n)` examples. Per-class
/// sizes are floors of `fraction * class_size` with the remainder given to
/// the classes with the largest fractional parts.
pub fn stratified_sample(test: &Dataset, fraction: f64, seed: u64) -> Result<Vec<LabeledExample>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("sample fraction {fraction} outside (0, 1]")));
    }
    let total = round_half_up(fraction * test.len() as f64);
    let by_class: Vec<(Label, Vec<&LabeledExample>)> = Label::ALL
        .iter()
        .map(|&l| (l, test.examples().iter().filter(|e| e.label == l).collect()))
        .collect();
    let exact: Vec<f64> = by_class.iter().map(|(_, v)| fraction * v.len() as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|x| (x + 1e-9).floor() as usize).collect();
    let mut order: Vec<usize> = (0..quota.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - quota[a] as f64;
        let fb = exact[b] - quota[b] as f64;
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut rem = total.saturating_sub(quota.iter().sum());
    for &i in order.iter().cycle().take(order.len() * 2) {
        if rem == 0 {
            break;
        }
        if quota[i] < by_class[i].1.len() {
            quota[i] += 1;
            rem -= 1;
        }
    }
    let mut out = Vec::with_capacity(total);
    for ((label, mut members), k) in by_class.into_iter().zip(quota) {
        members.sort_by(|a, b| a.id.cmp(&b.id));
        members.shuffle(&mut rng_for(seed, &format!("zeroshot-sample/{label}")));
        out.extend(members.into_iter().take(k).cloned());
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

enum ItemOutcome {
    Done(ZeroShotResult),
    Fatal(Error),
}

fn classify_one(client: &dyn CompletionClient, cfg: &CompletionClientConfig, template: &PromptTemplate, ex: &LabeledExample) -> ItemOutcome {
    let prompt = match render_prompt(template, &ex.text) {
        Ok(p) => p,
        Err(e) => return ItemOutcome::Fatal(e),
    };
    let mut attempts = 0;
    let mut last_raw = String::new();
    let mut last_error = None;
    while attempts < cfg.retry_budget {
        attempts += 1;
        match client.complete(&prompt) {
            Ok(raw) => {
                let parsed = parse_response(&raw);
                last_raw = raw;
                last_error = None;
                if parsed != ParsedLabel::Unparsed {
                    return ItemOutcome::Done(ZeroShotResult {
                        input_id: ex.id.clone(),
                        gold: ex.label,
                        raw_response: last_raw,
                        parsed_label: parsed,
                        attempts,
                        error: None,
                    });
                }
            }
            Err(e @ Error::QuotaExceeded(_)) => return ItemOutcome::Fatal(e),
            Err(e) if e.is_retryable() => {
                last_error = Some(e.to_string());
                if attempts < cfg.retry_budget {
                    std::thread::sleep(cfg.backoff(attempts));
                }
            }
            Err(e) => return ItemOutcome::Fatal(e),
        }
    }
    ItemOutcome::Done(ZeroShotResult {
        input_id: ex.id.clone(),
        gold: ex.label,
        raw_response: last_raw,
        parsed_label: ParsedLabel::Unparsed,
        attempts,
        error: last_error,
    })
}

/// Classifies a stratified sample of `test` through `client`. Items whose
/// answer cannot be read after the attempt budget are scored as non-hate
/// and counted in `n_unparsed`; if every item fails at the transport level
/// the endpoint is reported unreachable.
pub fn evaluate_zero_shot(
    test: &Dataset,
    client: Arc<dyn CompletionClient>,
    config: &CompletionClientConfig,
    template: &PromptTemplate,
    sample_fraction: f64,
    seed: u64,
) -> Result<ZeroShotOutcome> {
    config.validate()?;
    template.validate()?;
    if test.is_empty() {
        return Err(Error::Empty { what: format!("test split of `{}`", test.name()) });
    }
    let sample = stratified_sample(test, sample_fraction, seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.max_parallel)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("request pool: {e}")))?;
    let outcomes: Vec<ItemOutcome> = pool.install(|| {
        sample
            .par_iter()
            .map(|ex| classify_one(client.as_ref(), config, template, ex))
            .collect()
    });
    let mut results = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        match o {
            ItemOutcome::Done(r) => results.push(r),
            ItemOutcome::Fatal(e) => return Err(e),
        }
    }
    results.sort_by(|a, b| a.input_id.cmp(&b.input_id));
    let n_failed = results.iter().filter(|r| r.error.is_some()).count();
    if !results.is_empty() && n_failed == results.len() {
        return Err(Error::EndpointUnreachable {
            attempts: config.retry_budget,
            message: results[0].error.clone().unwrap_or_default(),
        });
    }
    let n_unparsed = results.iter().filter(|r| r.parsed_label == ParsedLabel::Unparsed).count();
    let predictions: Vec<Label> = results.iter().map(|r| r.parsed_label.as_prediction()).collect();
    let gold: Vec<Label> = results.iter().map(|r| r.gold).collect();
    let metrics = compute_prf(
        &predictions,
        &gold,
        RunContext::new(test.name(), &config.model_name, ZERO_SHOT_CONDITION),
    )?;
    Ok(ZeroShotOutcome {
        metrics,
        results,
        n_unparsed,
        n_failed,
    })
}

/// What the stub endpoint sends back for one prompt.
#[derive(Debug, Clone, PartialEq)]
pub enum StubReply {
    Text(String),
    Status(u16, String),
}

type Responder = dyn Fn(&str) -> StubReply + Send + Sync;

/// Local completion endpoint speaking the same JSON contract as
/// [`HttpCompletionClient`]; answers `{"choices":[{"text": ...}]}`.
pub struct StubCompletionServer {
    server: Arc<tiny_http::Server>,
    thread: Option<JoinHandle<()>>,
    url: String,
}

impl StubCompletionServer {
    pub fn start(addr: &str, responder: Arc<Responder>) -> Result<Self> {
        let server = Arc::new(tiny_http::Server::http(addr).map_err(|e| Error::backend(format!("bind {addr}: {e}"), false))?);
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| Error::backend("stub has no IP address", false))?;
        let host = addr.rsplit_once(':').map(|(h, _)| h).unwrap_or("127.0.0.1");
        let url = format!("http://{host}:{port}/v1/completions");
        let srv = Arc::clone(&server);
        let thread = std::thread::spawn(move || {
            for mut req in srv.incoming_requests() {
                let mut body = String::new();
                let _ = req.as_reader().read_to_string(&mut body);
                let prompt = serde_json::from_str::<serde_json::Value>(&body)
                    .ok()
                    .and_then(|v| v.get("prompt").and_then(|p| p.as_str()).map(str::to_string));
                let (status, payload) = match prompt {
                    None => (400, serde_json::json!({"error": "missing prompt"}).to_string()),
                    Some(p) => match responder(&p) {
                        StubReply::Text(t) => (200, serde_json::json!({"choices": [{"text": t}]}).to_string()),
                        StubReply::Status(s, msg) => (s, msg),
                    },
                };
                let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("header");
                let _ = req.respond(tiny_http::Response::from_string(payload).with_status_code(status).with_header(header));
            }
        });
        Ok(Self {
            server,
            thread: Some(thread),
            url,
        })
    }

    /// Answers every prompt with the same text.
    pub fn constant(addr: &str, text: &str) -> Result<Self> {
        let text = text.to_string();
        Self::start(addr, Arc::new(move |_| StubReply::Text(text.clone())))
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl Drop for StubCompletionServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// In-process client backed by a closure, for tests and dry runs.
pub struct FnCompletionClient<F>(pub F);

impl<F> CompletionClient for FnCompletionClient<F>
where
    F: Fn(&str) -> Result<String> + Send + Sync,
{
    fn complete(&self, prompt: &str) -> Result<String> {
        (self.0)(prompt)
    }
}

/// Per-class counts of a sample, for manifests.
pub fn class_counts(examples: &[LabeledExample]) -> BTreeMap<Label, usize> {
    let mut out = BTreeMap::new();
    for e in examples {
        *out.entry(e.label).or_insert(0) += 1;
    }
    out
}
