//! The retriever, generator and NLI clients against a local stub server.

mod common;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use common::{StubResponse, StubServer};
use ragfair::attribution::{attribute, AttributionOracle, NliOracle};
use ragfair::corpus::{Corpus, Document, QueryInstance, Task};
use ragfair::generation::{build_prompt, generate, Decoding, Generator, HttpGenerator};
use ragfair::http::{JsonClient, RetryPolicy};
use ragfair::pipeline::{check_endpoints, resolve, run_audit, Component, RawConfig};
use ragfair::retrieval::{retrieve_for_query, ExternalRetriever, Retriever};
use ragfair::Error;
use serde_json::json;

fn fast() -> RetryPolicy {
    RetryPolicy {
        max_attempts: 3,
        initial_backoff_ms: 1,
        max_backoff_ms: 5,
        timeout_ms: 5_000,
    }
}

fn corpus() -> Corpus {
    let docs = ["a", "b", "c"]
        .iter()
        .map(|id| Document::new(*id, format!("Title {id}"), format!("body of {id}"), "T", BTreeMap::new()))
        .collect();
    Corpus::new(docs, vec![]).unwrap()
}

fn query(source: &str) -> QueryInstance {
    QueryInstance {
        query_id: format!("{source}:title"),
        task: Task::TitleGeneration,
        query_text: "some article".into(),
        ground_truth: "Title".into(),
        source_doc_id: source.into(),
        labels: BTreeMap::new(),
    }
}

#[test]
fn retrieve_protocol_round_trip() {
    let server = StubServer::start(|method, path, body| {
        assert_eq!((method, path), ("POST", "/retrieve"));
        assert_eq!(body["query"], "some article");
        let k = body["k"].as_u64().unwrap() as usize;
        let all = [("b", 3.0), ("a", 2.0), ("c", 1.0)];
        let results: Vec<_> = all[..k.min(3)]
            .iter()
            .map(|(id, s)| json!({"doc_id": id, "score": s}))
            .collect();
        StubResponse::json(json!({ "results": results }))
    });
    let r = ExternalRetriever::new("dense", &server.url, &corpus(), fast()).unwrap();
    assert_eq!(r.id(), "dense");
    let list = r.retrieve(&query("z"), 2).unwrap();
    assert_eq!(list.doc_ids().collect::<Vec<_>>(), vec!["b", "a"]);
    assert_eq!(list.retriever_id, "dense");

    // Asking for one extra result keeps k after dropping the source document.
    let list = retrieve_for_query(&r, &query("b"), 2, true).unwrap();
    assert_eq!(list.doc_ids().collect::<Vec<_>>(), vec!["a", "c"]);
}

#[test]
fn retrieve_rejects_unknown_documents() {
    let server = StubServer::start(|_, _, _| StubResponse::json(json!({"results": [{"doc_id": "zzz", "score": 1.0}]})));
    let r = ExternalRetriever::new("dense", &server.url, &corpus(), fast()).unwrap();
    assert!(matches!(r.retrieve(&query("a"), 3), Err(Error::UnknownDocument(id)) if id == "zzz"));
}

#[test]
fn generate_protocol_and_normalisation() {
    let server = StubServer::start(|_, path, body| {
        assert_eq!(path, "/generate");
        assert_eq!(body["beam_size"], 4);
        assert_eq!(body["max_new_tokens"], 16);
        let prompt = body["prompt"].as_str().unwrap();
        // Echo the prompt and run on into a new block, as raw models do.
        StubResponse::json(json!({"text": format!("{prompt} Leith Docks\nArticle: more")}))
    });
    let g = HttpGenerator::new(&server.url, fast()).unwrap();
    assert_eq!(g.id(), format!("ext:{}", server.url));
    let docs = corpus();
    let prompt = build_prompt(&query("z"), &[docs.get("a").unwrap()]);
    let out = generate(&g, &prompt, Decoding::for_task(Task::TitleGeneration)).unwrap();
    assert_eq!(out, "Leith Docks");
}

#[test]
fn server_errors_are_retried_then_succeed() {
    let calls = Arc::new(AtomicUsize::new(0));
    let seen = calls.clone();
    let server = StubServer::start(move |_, _, _| {
        if seen.fetch_add(1, Ordering::SeqCst) < 2 {
            StubResponse::status(503)
        } else {
            StubResponse::json(json!({"text": "ok"}))
        }
    });
    let client = JsonClient::new(&server.url, fast()).unwrap();
    let reply: serde_json::Value = client.post("/generate", &json!({})).unwrap();
    assert_eq!(reply["text"], "ok");
    assert_eq!(server.hits(), 3);
}

#[test]
fn retries_are_bounded() {
    let server = StubServer::start(|_, _, _| StubResponse::status(500));
    let client = JsonClient::new(&server.url, fast()).unwrap();
    let err = client.post::<_, serde_json::Value>("/nli", &json!({})).unwrap_err();
    assert!(matches!(err, Error::Service { .. }), "{err}");
    assert_eq!(server.hits(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let server = StubServer::start(|_, _, _| StubResponse::status(422));
    let client = JsonClient::new(&server.url, fast()).unwrap();
    assert!(client.post::<_, serde_json::Value>("/generate", &json!({})).is_err());
    assert_eq!(server.hits(), 1);
}

#[test]
fn undecodable_responses_fail() {
    let server = StubServer::start(|_, _, _| StubResponse::json(json!({"unexpected": true})));
    let g = HttpGenerator::new(&server.url, fast()).unwrap();
    let docs = corpus();
    let prompt = build_prompt(&query("z"), &[docs.get("a").unwrap()]);
    assert!(g.complete(&prompt, Decoding::for_task(Task::TitleGeneration)).is_err());
    assert_eq!(server.hits(), 1);
}

#[test]
fn unreachable_service_is_a_service_error() {
    // Bind then drop to get a port nothing listens on.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let client = JsonClient::new(&format!("http://127.0.0.1:{port}"), fast()).unwrap();
    assert!(matches!(
        client.post::<_, serde_json::Value>("/generate", &json!({})),
        Err(Error::Service { .. })
    ));
}

#[test]
fn nli_protocol_maps_labels_to_verdicts() {
    let server = StubServer::start(|_, path, body| {
        assert_eq!(path, "/nli");
        let premise = body["premise"].as_str().unwrap();
        let hypothesis = body["hypothesis"].as_str().unwrap();
        let label = if premise.contains(hypothesis) { "entailment" } else { "neutral" };
        StubResponse::json(json!({"label": label, "scores": {"entailment": 0.5, "neutral": 0.3, "contradiction": 0.2}}))
    });
    let oracle = NliOracle::new(&server.url, fast(), 400).unwrap();
    let docs = corpus();
    let a = docs.get("a").unwrap();
    assert_eq!(attribute(&oracle, "q", a, "body of a").unwrap().score, 1);
    assert_eq!(attribute(&oracle, "q", a, "something else").unwrap().score, 0);
    // Empty responses never reach the service.
    let before = server.hits();
    assert_eq!(attribute(&oracle, "q", a, "").unwrap().score, 0);
    assert_eq!(server.hits(), before);
}

#[test]
fn nli_premise_is_truncated_and_flagged() {
    let server = StubServer::start(|_, _, body| {
        let words = body["premise"].as_str().unwrap().split_whitespace().count();
        assert!(words <= 3, "{words}");
        StubResponse::json(json!({"label": "contradiction"}))
    });
    let oracle = NliOracle::new(&server.url, fast(), 3).unwrap();
    let docs = corpus();
    let judgement = oracle.judge(docs.get("a").unwrap(), "x").unwrap();
    assert!(!judgement.entailed);
    assert!(judgement.truncated);
}

#[test]
fn full_audit_over_external_services() {
    let (_tmp, dir) = common::scratch();
    let spec = ragfair::synth::SynthSpec::balanced(40, "Cities", common::two_by_two(), 5);
    let docs = ragfair::synth::generate_synthetic_corpus(&spec).unwrap();
    let ids: Vec<String> = docs.iter().map(|d| d.doc_id.clone()).collect();
    let retriever = StubServer::start(move |_, _, body| {
        let k = body["k"].as_u64().unwrap() as usize;
        let results: Vec<_> = ids.iter().take(k).map(|id| json!({"doc_id": id, "score": 1.0})).collect();
        StubResponse::json(json!({ "results": results }))
    });
    let generator = StubServer::start(|_, _, body| {
        let words: Vec<&str> = body["prompt"].as_str().unwrap().split_whitespace().take(3).collect();
        StubResponse::json(json!({"text": words.join(" ")}))
    });
    let nli = StubServer::start(|_, _, _| StubResponse::json(json!({"label": "entailment"})));

    let corpus_path = dir.join("corpus.jsonl");
    ragfair::corpus::write_corpus(&corpus_path, &docs).unwrap();
    let cats = dir.join("categories.json");
    ragfair::fsutil::write_json(&cats, &spec.categories).unwrap();
    let raw = RawConfig {
        corpus: Some(corpus_path),
        categories: Some(cats),
        topic: Some("Cities".into()),
        task: Some(Task::TitleGeneration),
        retrievers: Some(vec![
            Component::Builtin("bm25".into()),
            Component::External(retriever.url.clone()),
        ]),
        generator: Some(Component::External(generator.url.clone())),
        attributor: Some(Component::External(nli.url.clone())),
        k: Some(3),
        runs_dir: Some(dir.join("runs")),
        retry: Some(fast()),
        ..RawConfig::default()
    };
    let config = resolve(raw, &dir, false).unwrap();
    check_endpoints(&config).unwrap();

    let outcome = run_audit(config).unwrap();
    let report = &outcome.report;
    assert_eq!(report.retrievers.len(), 2);
    assert_eq!(report.meta.attributor_id, format!("ext:{}", nli.url));
    for section in &report.retrievers {
        assert_eq!(section.evaluated_queries, report.num_queries);
        for c in &section.categories {
            // Every verdict is entailment, so attribution equals exposure.
            assert_eq!(c.a_hat.values(), c.e_hat.values());
        }
    }
    // 4 queries: one shared LLM-only call, then RAG + 3 single-doc per retriever.
    assert_eq!(outcome.generator_calls + outcome.cache_hits, 4 + 2 * 4 * 4);
}

#[test]
fn unreachable_endpoint_fails_validation() {
    let (_tmp, dir) = common::scratch();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    std::fs::write(dir.join("c.jsonl"), "").unwrap();
    let raw = RawConfig {
        corpus: Some(dir.join("c.jsonl")),
        topic: Some("T".into()),
        task: Some(Task::TitleGeneration),
        generator: Some(Component::External(format!("http://127.0.0.1:{port}"))),
        ..RawConfig::default()
    };
    let config = resolve(raw, &dir, false).unwrap();
    assert!(matches!(check_endpoints(&config), Err(Error::Config(_))));
}
