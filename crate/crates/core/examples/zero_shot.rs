//! Zero-shot prompting against a local stub completion server that answers
//! by counting hate cue tokens, on a 20% stratified sample of each toy test
//! set.
//!
//!     cargo run --release --example zero_shot

use std::sync::Arc;

use synthaug::toy::{keyword_reply, toy_registry};
use synthaug::xeval::SplitDataset;
use synthaug::zeroshot::{
    evaluate_zero_shot, render_prompt, CompletionClient, CompletionClientConfig, HttpCompletionClient, PromptTemplate,
    StubCompletionServer, StubReply, DEFAULT_SAMPLE_FRACTION,
};

fn main() -> synthaug::Result<()> {
    let server = StubCompletionServer::start("127.0.0.1:0", Arc::new(|p: &str| StubReply::Text(keyword_reply(p).into())))?;
    let config = CompletionClientConfig {
        endpoint: server.url().to_string(),
        model_name: "toy-keyword-stub".into(),
        ..CompletionClientConfig::default()
    };
    let client: Arc<dyn CompletionClient> = Arc::new(HttpCompletionClient::new(config.clone())?);
    let template = PromptTemplate::default();
    println!("{}\n", render_prompt(&template, "g2 h4 dv17 h9")?);

    for d in toy_registry(1000, 0)? {
        let split = SplitDataset::new(&d, 0.2, 0)?;
        let out = evaluate_zero_shot(&split.test, Arc::clone(&client), &config, &template, DEFAULT_SAMPLE_FRACTION, 0)?;
        println!(
            "{}: {} prompts, P {:.3} R {:.3} F1 {:.3}, unparsed {}",
            d.name(),
            out.results.len(),
            out.metrics.precision,
            out.metrics.recall,
            out.metrics.f1,
            out.n_unparsed
        );
    }
    Ok(())
}
