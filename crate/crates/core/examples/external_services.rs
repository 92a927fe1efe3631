//! Talks to a running model server and external retriever. Endpoints come
//! from the environment; anything unset is skipped.
//!
//!   RAGFAIR_GENERATOR_URL   serves POST /generate
//!   RAGFAIR_NLI_URL         serves POST /nli
//!   RAGFAIR_RETRIEVER_URL   serves POST /retrieve over the example corpus
//!
//! Run with `RAGFAIR_GENERATOR_URL=http://localhost:8000 cargo run --example external_services`.

use std::collections::BTreeMap;

use ragfair::attribution::{attribute, NliOracle, DEFAULT_PREMISE_WORD_LIMIT};
use ragfair::corpus::{Corpus, Document, QueryInstance, Task};
use ragfair::generation::{build_prompt, generate, Decoding, HttpGenerator};
use ragfair::http::RetryPolicy;
use ragfair::pipeline::{GENERATOR_URL_ENV, NLI_URL_ENV};
use ragfair::retrieval::{ExternalRetriever, Retriever};

fn main() -> ragfair::Result<()> {
    let doc = Document::new("leith", "Leith", "Leith is a port district of Edinburgh.", "Cities", BTreeMap::new());
    let target = Document::new("dundee", "Dundee", "Dundee is a city on the Firth of Tay.", "Cities", BTreeMap::new());
    let query = QueryInstance::from_document(&target, Task::TitleGeneration);
    let retry = RetryPolicy::default();
    let mut response = "Dundee".to_string();
    let mut ran = false;

    if let Ok(url) = std::env::var(GENERATOR_URL_ENV) {
        let generator = HttpGenerator::new(&url, retry)?;
        let prompt = build_prompt(&query, &[&doc]);
        response = generate(&generator, &prompt, Decoding::for_task(Task::TitleGeneration))?;
        println!("generated: {response:?}");
        ran = true;
    }
    if let Ok(url) = std::env::var(NLI_URL_ENV) {
        let oracle = NliOracle::new(&url, retry, DEFAULT_PREMISE_WORD_LIMIT)?;
        let verdict = attribute(&oracle, &query.query_id, &doc, &response)?;
        println!("attribution of {:?} to {}: {}", response, doc.doc_id, verdict.score);
        ran = true;
    }
    if let Ok(url) = std::env::var("RAGFAIR_RETRIEVER_URL") {
        let corpus = Corpus::new(vec![doc.clone(), target.clone()], vec![])?;
        let retriever = ExternalRetriever::new(format!("ext:{url}"), &url, &corpus, retry)?;
        let list = retriever.retrieve(&query, 2)?;
        println!("retrieved: {:?}", list.doc_ids().collect::<Vec<_>>());
        ran = true;
    }
    if !ran {
        println!("no endpoints set; export {GENERATOR_URL_ENV}, {NLI_URL_ENV} or RAGFAIR_RETRIEVER_URL");
    }
    Ok(())
}
