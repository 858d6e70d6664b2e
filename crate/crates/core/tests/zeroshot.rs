use std::sync::Arc;

use proptest::prelude::*;
use synthaug::corpus::{Dataset, Label, LabeledExample};
use synthaug::zeroshot::{
    evaluate_zero_shot, parse_response, render_prompt, stratified_sample, CompletionClient, CompletionClientConfig,
    HttpCompletionClient, ParsedLabel, PromptTemplate, StubCompletionServer, StubReply,
};

/// Independent matcher: scan for "non", skip separator characters, then
/// look for "hateful".
fn reference_label(raw: &str) -> ParsedLabel {
    let s: Vec<char> = raw.to_lowercase().chars().collect();
    let find = |pat: &str, from: usize| -> bool {
        let p: Vec<char> = pat.chars().collect();
        from + p.len() <= s.len() && s[from..from + p.len()] == p[..]
    };
    for i in 0..s.len() {
        if find("non", i) {
            let mut j = i + 3;
            while j < s.len() && (s[j].is_whitespace() || s[j] == '-' || s[j] == '_') {
                j += 1;
            }
            if find("hateful", j) {
                return ParsedLabel::Nonhate;
            }
        }
    }
    if (0..s.len()).any(|i| find("hateful", i)) {
        ParsedLabel::Hate
    } else {
        ParsedLabel::Unparsed
    }
}

#[derive(serde::Deserialize)]
struct FixtureRow {
    raw: String,
    expected: ParsedLabel,
}

fn fixture() -> Vec<FixtureRow> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/parser_adversarial.jsonl");
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn adversarial_fixture_parses_as_expected() {
    let rows = fixture();
    assert_eq!(rows.len(), 50);
    for r in &rows {
        let got = parse_response(&r.raw);
        assert_eq!(got, r.expected, "{:?}", r.raw);
        assert_eq!(got, reference_label(&r.raw), "{:?}", r.raw);
        if r.raw.to_lowercase().contains("non-hateful") {
            assert_eq!(got, ParsedLabel::Nonhate, "{:?}", r.raw);
        }
    }
}

proptest! {
    #[test]
    fn parser_matches_reference(s in "[a-zA-Z _\\-\\.]{0,30}") {
        prop_assert_eq!(parse_response(&s), reference_label(&s));
    }

    #[test]
    fn negated_form_never_reads_as_hate(prefix in ".{0,20}", suffix in ".{0,20}", sep in "[ _\\-]{0,3}", upper in any::<bool>()) {
        let core = format!("non{sep}hateful");
        let core = if upper { core.to_uppercase() } else { core };
        prop_assert_eq!(parse_response(&format!("{prefix}{core}{suffix}")), ParsedLabel::Nonhate);
    }

    #[test]
    fn rendered_prompt_holds_input_once(text in "[a-z]{12,20}( \\{text\\})?") {
        let t = PromptTemplate::default();
        let p = render_prompt(&t, &text).unwrap();
        let escaped = t.escape_input(&text);
        prop_assert_eq!(p.matches(escaped.as_str()).count(), 1);
        prop_assert_eq!(p.matches(t.input_slot.as_str()).count(), 0);
    }
}

fn test_set(n: usize, n_hate: usize) -> Dataset {
    let examples = (0..n)
        .map(|i| {
            let label = if i < n_hate { Label::Hate } else { Label::Nonhate };
            LabeledExample::gold(format!("t{i:04}"), format!("test text number {i}"), label, "SE")
        })
        .collect();
    Dataset::new("SE", examples, "toy").unwrap()
}

fn config(endpoint: &str) -> CompletionClientConfig {
    CompletionClientConfig {
        endpoint: endpoint.into(),
        backoff_initial_ms: 1,
        ..CompletionClientConfig::default()
    }
}

#[test]
fn sample_size_and_strata() {
    let test = test_set(1000, 237);
    let s = stratified_sample(&test, 0.2, 4).unwrap();
    assert_eq!(s.len(), 200);
    let hate = s.iter().filter(|e| e.label == Label::Hate).count() as f64;
    assert!((hate - 0.2 * 237.0).abs() <= 1.0);
    assert_eq!(s, stratified_sample(&test, 0.2, 4).unwrap());
}

#[test]
fn all_hateful_stub_gives_full_recall_and_prevalence_precision() {
    let server = StubCompletionServer::constant("127.0.0.1:0", " Hateful").unwrap();
    let cfg = config(server.url());
    let client: Arc<dyn CompletionClient> = Arc::new(HttpCompletionClient::new(cfg.clone()).unwrap());
    let test = test_set(1000, 237);
    let out = evaluate_zero_shot(&test, client, &cfg, &PromptTemplate::default(), 0.2, 7).unwrap();
    assert_eq!(out.results.len(), 200);
    let prevalence = out.results.iter().filter(|r| r.gold == Label::Hate).count() as f64 / 200.0;
    assert_eq!(out.metrics.recall, 1.0);
    assert_eq!(out.metrics.precision, prevalence);
    assert_eq!(out.n_unparsed, 0);
    assert!(out.results.windows(2).all(|w| w[0].input_id < w[1].input_id));
}

#[test]
fn unparsed_answers_fall_back_to_nonhate() {
    let server = StubCompletionServer::constant("127.0.0.1:0", "I would rather not say").unwrap();
    let cfg = config(server.url());
    let client: Arc<dyn CompletionClient> = Arc::new(HttpCompletionClient::new(cfg.clone()).unwrap());
    let out = evaluate_zero_shot(&test_set(50, 10), client, &cfg, &PromptTemplate::default(), 0.2, 0).unwrap();
    assert_eq!(out.n_unparsed, 10);
    assert!(out.results.iter().all(|r| r.attempts == cfg.retry_budget));
    assert_eq!(out.metrics.recall, 0.0);
    assert!(out.metrics.degenerate);
}

#[test]
fn quota_errors_surface_verbatim() {
    let server = StubCompletionServer::start(
        "127.0.0.1:0",
        Arc::new(|_: &str| StubReply::Status(429, "{\"error\":\"rate limit\"}".into())),
    )
    .unwrap();
    let cfg = config(server.url());
    let client: Arc<dyn CompletionClient> = Arc::new(HttpCompletionClient::new(cfg.clone()).unwrap());
    let err = evaluate_zero_shot(&test_set(20, 5), client, &cfg, &PromptTemplate::default(), 0.2, 0).unwrap_err();
    assert_eq!(err.code(), "QUOTA_EXCEEDED");
    assert!(err.to_string().contains("rate limit"));
}

#[test]
fn transient_failures_are_retried() {
    let counter = Arc::new(std::sync::atomic::AtomicUsize::new(0));
    let c = Arc::clone(&counter);
    let server = StubCompletionServer::start(
        "127.0.0.1:0",
        Arc::new(move |_: &str| {
            if c.fetch_add(1, std::sync::atomic::Ordering::SeqCst) % 2 == 0 {
                StubReply::Status(503, "busy".into())
            } else {
                StubReply::Text("non-hateful".into())
            }
        }),
    )
    .unwrap();
    let cfg = CompletionClientConfig {
        max_parallel: 1,
        ..config(server.url())
    };
    let client: Arc<dyn CompletionClient> = Arc::new(HttpCompletionClient::new(cfg.clone()).unwrap());
    let out = evaluate_zero_shot(&test_set(20, 5), client, &cfg, &PromptTemplate::default(), 0.2, 0).unwrap();
    assert!(out.results.iter().all(|r| r.attempts == 2 && r.parsed_label == ParsedLabel::Nonhate));
}

#[test]
fn dead_endpoint_is_unreachable() {
    let addr = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap()
    };
    let cfg = config(&format!("http://{addr}/v1/completions"));
    let client: Arc<dyn CompletionClient> = Arc::new(HttpCompletionClient::new(cfg.clone()).unwrap());
    let err = evaluate_zero_shot(&test_set(10, 5), client, &cfg, &PromptTemplate::default(), 0.2, 0).unwrap_err();
    assert_eq!(err.code(), "ENDPOINT_UNREACHABLE");
}
