//! Shared test support: independent reference oracles, synthetic run setup,
//! instrumented generators and a tiny HTTP stub server.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use ragfair::corpus::{write_corpus, FairnessCategory, Task};
use ragfair::generation::{mock_generate, Decoding, Generator, PromptSpec};
use ragfair::pipeline::{resolve, RawConfig, RunConfig};
use ragfair::synth::{generate_synthetic_corpus, SynthSpec};

// ---- reference oracles -------------------------------------------------

/// LCS by memoised recursion over suffixes; shares no code with the library.
pub fn oracle_lcs(a: &[String], b: &[String]) -> usize {
    fn go(a: &[String], b: &[String], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

/// Lowercased alphanumeric runs, written independently of the library.
pub fn oracle_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Textbook ROUGE-L F1 times 100.
pub fn oracle_rouge_f1(candidate: &[String], reference: &[String]) -> f64 {
    let lcs = oracle_lcs(candidate, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    100.0 * (2.0 * p * r / (p + r))
}

/// BM25 scored straight from the formula by scanning every document for
/// every distinct query term. Returns positive-score documents sorted by
/// descending score, then ascending id.
pub fn oracle_bm25(docs: &[(String, String)], query: &str, k: usize) -> Vec<(String, f64)> {
    let (k1, b) = (1.2f64, 0.75f64);
    let toks: Vec<(String, Vec<String>)> = docs.iter().map(|(id, t)| (id.clone(), oracle_tokens(t))).collect();
    let n = toks.len() as f64;
    let avgdl = toks.iter().map(|(_, t)| t.len() as f64).sum::<f64>() / n;
    let mut terms = oracle_tokens(query);
    terms.sort();
    terms.dedup();
    let mut scored = Vec::new();
    for (id, t) in &toks {
        let mut score = 0.0;
        let mut matched = false;
        for term in &terms {
            let tf = t.iter().filter(|x| *x == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            matched = true;
            let df = toks.iter().filter(|(_, d)| d.contains(term)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * t.len() as f64 / avgdl));
        }
        if matched && score > 0.0 {
            scored.push((id.clone(), score));
        }
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Average ranks by counting: rank = 1 + #less + (#equal - 1) / 2.
pub fn oracle_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

/// Spearman rho as the Pearson correlation of counted average ranks.
pub fn oracle_spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return None;
    }
    let (rx, ry) = (oracle_ranks(x), oracle_ranks(y));
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

// ---- synthetic runs ----------------------------------------------------

pub fn two_by_two() -> Vec<FairnessCategory> {
    vec![
        FairnessCategory::new("Region", ["north", "south"]).unwrap(),
        FairnessCategory::new("Era", ["old", "new"]).unwrap(),
    ]
}

/// Four-group category whose first group's bodies carry the whole answer
/// sequence and whose second group's carry none of it.
pub fn biased_categories() -> Vec<FairnessCategory> {
    vec![
        FairnessCategory::new("Coverage", ["g1", "g2", "g3", "g4"]).unwrap(),
        FairnessCategory::new("Region", ["north", "south"]).unwrap(),
    ]
}

pub fn biased_spec(seed: u64) -> SynthSpec {
    SynthSpec::balanced(200, "Cities", biased_categories(), seed).with_bias("Coverage", vec![1.0, 0.0, 0.66, 0.33])
}

/// Writes the corpus and categories of `spec` under `dir` and returns a
/// resolved mock configuration with runs under `dir/runs`.
pub fn synthetic_config(dir: &Path, spec: &SynthSpec, task: Task, edit: impl FnOnce(&mut RawConfig)) -> RunConfig {
    std::fs::create_dir_all(dir).unwrap();
    let corpus = dir.join("corpus.jsonl");
    write_corpus(&corpus, &generate_synthetic_corpus(spec).unwrap()).unwrap();
    let cats = dir.join("categories.json");
    ragfair::fsutil::write_json(&cats, &spec.categories).unwrap();
    let mut raw = RawConfig {
        corpus: Some(corpus),
        categories: Some(cats),
        topic: Some(spec.topic.clone()),
        task: Some(task),
        runs_dir: Some(dir.join("runs")),
        ..RawConfig::default()
    };
    edit(&mut raw);
    resolve(raw, dir, false).unwrap()
}

/// Every file under `root` mapped to its bytes, keyed by relative path.
pub fn tree_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

// ---- instrumented generators -------------------------------------------

/// Mock generator that counts every call it receives.
#[derive(Default)]
pub struct CountingGenerator {
    pub calls: AtomicUsize,
}

impl Generator for CountingGenerator {
    fn id(&self) -> &str {
        "mock"
    }

    fn complete(&self, prompt: &PromptSpec, _decoding: Decoding) -> ragfair::Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(mock_generate(prompt))
    }
}

/// Mock generator that starts failing after `budget` calls while `down` is
/// set, like a service going away mid-run.
pub struct FlakyGenerator {
    pub budget: usize,
    pub calls: AtomicUsize,
    pub down: Arc<AtomicBool>,
}

impl Generator for FlakyGenerator {
    fn id(&self) -> &str {
        "mock"
    }

    fn complete(&self, prompt: &PromptSpec, _decoding: Decoding) -> ragfair::Result<String> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if self.down.load(Ordering::SeqCst) && n >= self.budget {
            return Err(ragfair::Error::Service {
                endpoint: "flaky".into(),
                message: "connection refused".into(),
            });
        }
        Ok(mock_generate(prompt))
    }
}

// ---- HTTP stub ---------------------------------------------------------

pub struct StubResponse {
    pub status: u16,
    pub body: String,
}

impl StubResponse {
    pub fn json(body: serde_json::Value) -> Self {
        StubResponse {
            status: 200,
            body: body.to_string(),
        }
    }

    pub fn status(status: u16) -> Self {
        StubResponse {
            status,
            body: "{}".into(),
        }
    }
}

type Handler = dyn Fn(&str, &str, &serde_json::Value) -> StubResponse + Send + Sync;

/// A one-request-per-connection HTTP/1.1 server on an ephemeral port.
/// `GET /health` is always answered; everything else goes to the handler.
pub struct StubServer {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
}

impl StubServer {
    pub fn start(handler: impl Fn(&str, &str, &serde_json::Value) -> StubResponse + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let handler: Arc<Handler> = Arc::new(handler);
        let counter = hits.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let handler = handler.clone();
                let counter = counter.clone();
                thread::spawn(move || {
                    let _ = serve(stream, handler.as_ref(), &counter);
                });
            }
        });
        StubServer { url, hits }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

fn serve(mut stream: TcpStream, handler: &Handler, hits: &AtomicUsize) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or("").to_string();
    let path = parts.next().unwrap_or("").to_string();
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    hits.fetch_add(1, Ordering::SeqCst);
    let json: serde_json::Value = serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null);
    let response = if method == "GET" && path == "/health" {
        StubResponse::json(serde_json::json!({"status": "ok"}))
    } else {
        handler(&method, &path, &json)
    };
    let reply = format!(
        "HTTP/1.1 {} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        response.status,
        response.body.len(),
        response.body
    );
    stream.write_all(reply.as_bytes())?;
    stream.flush()
}

/// Temp directory helper with a stable subpath.
pub fn scratch() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().to_path_buf();
    (dir, path)
}

// ---- random ledgers ----------------------------------------------------

use ragfair::analysis::{build_report, AuditReport, ReportMeta, RetrieverLedgers, RunLedgers};
use ragfair::attribution::AttributionVerdict;
use ragfair::corpus::{Corpus, Document, QueryInstance};
use ragfair::generation::{GenerationRecord, Setting};
use ragfair::metrics::RougeVariant;
use ragfair::retrieval::{RankedEntry, RankedList};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct RandomRun {
    pub corpus: Corpus,
    pub categories: Vec<FairnessCategory>,
    pub queries: Vec<QueryInstance>,
    pub llm_records: Vec<GenerationRecord>,
    pub retriever: RetrieverLedgers,
    pub k: usize,
}

fn words(rng: &mut ChaCha8Rng, max: usize) -> String {
    let n = rng.random_range(1..=max);
    (0..n)
        .map(|_| format!("w{}", rng.random_range(0..6)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn record(query_id: &str, setting: Setting, text: String) -> GenerationRecord {
    GenerationRecord {
        query_id: query_id.to_string(),
        setting,
        generator_id: "mock".into(),
        decoding: Decoding {
            beam_size: 2,
            max_new_tokens: 16,
        },
        output_text: text,
        accuracy: None,
    }
}

/// Random but complete ledgers for one retriever: every query has full
/// `k`-document lists, all outputs and a verdict per pair. With
/// `constant_verdict` every verdict takes that value.
pub fn random_run(seed: u64, constant_verdict: Option<u8>) -> RandomRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let categories = vec![
        FairnessCategory::new("A".to_string(), (0..rng.random_range(2..=4)).map(|i| format!("a{i}")).collect::<Vec<_>>()).unwrap(),
        FairnessCategory::new("B".to_string(), (0..rng.random_range(2..=3)).map(|i| format!("b{i}")).collect::<Vec<_>>()).unwrap(),
    ];
    let n_docs = rng.random_range(8..30);
    let docs: Vec<Document> = (0..n_docs)
        .map(|i| {
            let labels = categories
                .iter()
                .map(|c| (c.name.clone(), c.groups[rng.random_range(0..c.groups.len())].clone()))
                .collect();
            Document::new(format!("d{i:02}"), words(&mut rng, 4), words(&mut rng, 12), "T", labels)
        })
        .collect();
    let corpus = Corpus::new(docs.clone(), categories.clone()).unwrap();
    let k = rng.random_range(1..=n_docs.min(6));
    let n_queries = rng.random_range(2..10);

    let mut queries = Vec::new();
    let mut llm_records = Vec::new();
    let mut retriever = RetrieverLedgers {
        retriever_id: "r".into(),
        ..RetrieverLedgers::default()
    };
    for qi in 0..n_queries {
        let source = &docs[rng.random_range(0..docs.len())];
        let query_id = format!("q{qi}");
        queries.push(QueryInstance {
            query_id: query_id.clone(),
            task: Task::TitleGeneration,
            query_text: source.body.clone(),
            ground_truth: words(&mut rng, 8),
            source_doc_id: source.doc_id.clone(),
            labels: source.labels.clone(),
        });
        llm_records.push(record(&query_id, Setting::LlmOnly, words(&mut rng, 8)));
        retriever.rag_records.push(record(
            &query_id,
            Setting::Rag {
                retriever_id: "r".into(),
            },
            words(&mut rng, 8),
        ));
        let mut ids: Vec<&Document> = docs.iter().collect();
        ids.shuffle(&mut rng);
        let entries: Vec<RankedEntry> = ids[..k]
            .iter()
            .enumerate()
            .map(|(rank, d)| RankedEntry {
                doc_id: d.doc_id.clone(),
                score: (k - rank) as f64,
            })
            .collect();
        for e in &entries {
            retriever.single_doc_records.push(record(
                &query_id,
                Setting::SingleDoc {
                    doc_id: e.doc_id.clone(),
                },
                words(&mut rng, 8),
            ));
            retriever.verdicts.push(AttributionVerdict {
                query_id: query_id.clone(),
                doc_id: e.doc_id.clone(),
                score: constant_verdict.unwrap_or_else(|| rng.random_range(0..=1)),
                oracle_id: "o".into(),
                truncated: false,
            });
        }
        retriever.ranked_lists.push(RankedList {
            query_id,
            retriever_id: "r".into(),
            k,
            entries,
        });
    }
    RandomRun {
        corpus,
        categories,
        queries,
        llm_records,
        retriever,
        k,
    }
}

impl RandomRun {
    pub fn report(&self) -> AuditReport {
        let ledgers = RunLedgers {
            corpus: &self.corpus,
            categories: self.categories.clone(),
            queries: self.queries.clone(),
            llm_records: self.llm_records.clone(),
            retrievers: vec![self.retriever.clone()],
            failures: vec![],
        };
        let meta = ReportMeta {
            run_id: "test".into(),
            topic: "T".into(),
            task: Task::TitleGeneration,
            generator_id: "mock".into(),
            attributor_id: "o".into(),
            retriever_ids: vec!["r".into()],
            k: self.k,
            seed: 0,
            config_hash: String::new(),
            rouge_variant: RougeVariant::F1,
            exclude_source_doc: false,
        };
        build_report(&ledgers, &meta).unwrap()
    }
}
