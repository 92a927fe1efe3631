//! Prompt construction, generator back-ends, and the replay cache.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, QueryInstance, Task};
use crate::error::{Error, Result};
use crate::fsutil::sha256_hex;
use crate::http::{JsonClient, RetryPolicy};
use crate::retrieval::RankedList;

const ARTICLE_INSTRUCTION: &str = "Following the given pattern, generate an article for the following title:";
const TITLE_INSTRUCTION: &str = "Following the given pattern, generate a title for the following article:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextPair {
    pub title: String,
    pub article: String,
}

impl ContextPair {
    /// The field the generator is asked to produce for `task`.
    pub fn answer(&self, task: Task) -> &str {
        match task {
            Task::ArticleGeneration => &self.article,
            Task::TitleGeneration => &self.title,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub task: Task,
    pub context_pairs: Vec<ContextPair>,
    pub target: String,
    pub rendered: String,
}

impl PromptSpec {
    pub fn new(task: Task, context_pairs: Vec<ContextPair>, target: impl Into<String>) -> Self {
        let target = target.into();
        let rendered = render(task, &context_pairs, &target);
        PromptSpec {
            task,
            context_pairs,
            target,
            rendered,
        }
    }
}

fn render(task: Task, pairs: &[ContextPair], target: &str) -> String {
    let mut out = String::new();
    for p in pairs {
        match task {
            Task::ArticleGeneration => {
                out.push_str(&format!("Title: {}\nArticle: {}\n", p.title, p.article))
            }
            Task::TitleGeneration => {
                out.push_str(&format!("Article: {}\nTitle: {}\n", p.article, p.title))
            }
        }
    }
    match task {
        Task::ArticleGeneration => {
            out.push_str(&format!("{ARTICLE_INSTRUCTION}\nTitle: {target}\nArticle:"))
        }
        Task::TitleGeneration => {
            out.push_str(&format!("{TITLE_INSTRUCTION}\nArticle: {target}\nTitle:"))
        }
    }
    out
}

/// Few-shot prompt for `query` with `context_docs` in rank order (rank 1
/// first). No documents gives the LLM-only prompt.
pub fn build_prompt(query: &QueryInstance, context_docs: &[&Document]) -> PromptSpec {
    let pairs = context_docs
        .iter()
        .map(|d| ContextPair {
            title: d.title.clone(),
            article: d.body.clone(),
        })
        .collect();
    PromptSpec::new(query.task, pairs, query.query_text.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Decoding {
    pub beam_size: u32,
    pub max_new_tokens: u32,
}

impl Decoding {
    pub fn for_task(task: Task) -> Self {
        Decoding {
            beam_size: task.default_beam_size(),
            max_new_tokens: task.default_max_new_tokens(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Setting {
    LlmOnly,
    Rag { retriever_id: String },
    SingleDoc { doc_id: String },
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Setting::LlmOnly => f.write_str("llm"),
            Setting::Rag { retriever_id } => write!(f, "rag:{retriever_id}"),
            Setting::SingleDoc { doc_id } => write!(f, "doc:{doc_id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub query_id: String,
    pub setting: Setting,
    pub generator_id: String,
    pub decoding: Decoding,
    pub output_text: String,
    /// ROUGE-L against the ground truth, 0..=100. Filled in by scoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

impl GenerationRecord {
    pub fn key(&self) -> (String, Setting, String, Decoding) {
        (
            self.query_id.clone(),
            self.setting.clone(),
            self.generator_id.clone(),
            self.decoding,
        )
    }
}

/// Rejects record sets in which two records share a key.
pub fn check_unique_records(records: &[GenerationRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.key()) {
            return Err(Error::DuplicateKey(format!(
                "{}/{}/{}",
                r.query_id, r.setting, r.generator_id
            )));
        }
    }
    Ok(())
}

pub trait Generator: Send + Sync {
    fn id(&self) -> &str;
    /// Raw completion for `prompt`; may echo the prompt or over-generate.
    fn complete(&self, prompt: &PromptSpec, decoding: Decoding) -> Result<String>;
}

/// Deterministic stand-in: copies the rank-1 context answer, or falls back to
/// the first five words of the target.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockGenerator;

pub const MOCK_GENERATOR_ID: &str = "mock";

pub fn mock_generate(prompt: &PromptSpec) -> String {
    match prompt.context_pairs.first() {
        Some(pair) => pair.answer(prompt.task).to_string(),
        None => prompt
            .target
            .split_whitespace()
            .take(5)
            .collect::<Vec<_>>()
            .join(" "),
    }
}

impl Generator for MockGenerator {
    fn id(&self) -> &str {
        MOCK_GENERATOR_ID
    }

    fn complete(&self, prompt: &PromptSpec, _decoding: Decoding) -> Result<String> {
        Ok(mock_generate(prompt))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub beam_size: u32,
    pub max_new_tokens: u32,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
}

/// Client for the model server's `POST /generate`.
pub struct HttpGenerator {
    id: String,
    client: JsonClient,
}

impl HttpGenerator {
    pub fn new(endpoint: &str, retry: RetryPolicy) -> Result<Self> {
        Ok(HttpGenerator {
            id: format!("ext:{endpoint}"),
            client: JsonClient::new(endpoint, retry)?,
        })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }
}

impl Generator for HttpGenerator {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &PromptSpec, decoding: Decoding) -> Result<String> {
        let response: GenerateResponse = self.client.post(
            "/generate",
            &GenerateRequest {
                prompt: prompt.rendered.clone(),
                beam_size: decoding.beam_size,
                max_new_tokens: decoding.max_new_tokens,
            },
        )?;
        Ok(response.text)
    }
}

/// Strips an echoed prompt, surrounding whitespace, and anything from the
/// first line that opens a new `Title:`/`Article:` block.
pub fn normalize_output(raw: &str, rendered_prompt: &str) -> String {
    let text = raw.strip_prefix(rendered_prompt).unwrap_or(raw).trim();
    let cut = ["\nTitle:", "\nArticle:"]
        .iter()
        .filter_map(|m| text.find(m))
        .min()
        .unwrap_or(text.len());
    text[..cut].trim().to_string()
}

/// Calls the generator and normalises its completion.
pub fn generate(generator: &dyn Generator, prompt: &PromptSpec, decoding: Decoding) -> Result<String> {
    let raw = generator.complete(prompt, decoding)?;
    Ok(normalize_output(&raw, &prompt.rendered))
}

pub fn cache_key(generator_id: &str, rendered: &str, decoding: Decoding) -> String {
    let material = serde_json::json!([
        generator_id,
        rendered,
        decoding.beam_size,
        decoding.max_new_tokens
    ]);
    sha256_hex(material.to_string().as_bytes())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub output_text: String,
    pub timestamp: u64,
}

/// Append-only replay cache of normalised generator outputs.
#[derive(Debug)]
pub struct GenerationCache {
    path: Option<PathBuf>,
    entries: Mutex<HashMap<String, String>>,
}

impl GenerationCache {
    pub fn in_memory() -> Self {
        GenerationCache {
            path: None,
            entries: Mutex::new(HashMap::new()),
        }
    }

    /// Opens (or starts) a cache file. A file holding the same key twice is
    /// rejected.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry = match serde_json::from_str(&line) {
                    Ok(e) => e,
                    Err(e) => {
                        // A torn final line from an interrupted append.
                        log::warn!("{}:{}: ignoring unreadable cache line: {e}", path.display(), i + 1);
                        continue;
                    }
                };
                if entries.insert(entry.key.clone(), entry.output_text).is_some() {
                    return Err(Error::DuplicateKey(entry.key));
                }
            }
        } else if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(GenerationCache {
            path: Some(path.to_path_buf()),
            entries: Mutex::new(entries),
        })
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.lock().unwrap().get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Adds a new entry; an existing key is an error.
    pub fn insert(&self, key: &str, output_text: &str) -> Result<()> {
        let mut entries = self.entries.lock().unwrap();
        if entries.contains_key(key) {
            return Err(Error::DuplicateKey(key.to_string()));
        }
        if let Some(path) = &self.path {
            let entry = CacheEntry {
                key: key.to_string(),
                output_text: output_text.to_string(),
                timestamp: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            };
            let mut line = serde_json::to_string(&entry)?;
            line.push('\n');
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
        }
        entries.insert(key.to_string(), output_text.to_string());
        Ok(())
    }
}

/// Routes every generation through the cache and counts real generator calls.
pub struct CachedGenerator<'a> {
    inner: &'a dyn Generator,
    cache: &'a GenerationCache,
    calls: AtomicUsize,
    hits: AtomicUsize,
}

impl<'a> CachedGenerator<'a> {
    pub fn new(inner: &'a dyn Generator, cache: &'a GenerationCache) -> Self {
        CachedGenerator {
            inner,
            cache,
            calls: AtomicUsize::new(0),
            hits: AtomicUsize::new(0),
        }
    }

    pub fn id(&self) -> &str {
        self.inner.id()
    }

    pub fn generator_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn generate(&self, prompt: &PromptSpec, decoding: Decoding) -> Result<String> {
        let key = cache_key(self.inner.id(), &prompt.rendered, decoding);
        if let Some(hit) = self.cache.get(&key) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(hit);
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let text = generate(self.inner, prompt, decoding)?;
        match self.cache.insert(&key, &text) {
            // Same prompt raced in from another worker; keep the first write.
            Err(Error::DuplicateKey(_)) => Ok(self.cache.get(&key).unwrap_or(text)),
            Err(e) => Err(e),
            Ok(()) => Ok(text),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettingKind {
    LlmOnly,
    Rag,
    SingleDoc,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub query_id: String,
    pub stage: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct SettingRun {
    pub records: Vec<GenerationRecord>,
    pub failures: Vec<Failure>,
}

/// Generates one record per query (per retrieved doc for `SingleDoc`).
/// Failed generations become [`Failure`]s; the run continues.
///
/// `ranked` must hold a list for every query when `kind` is `Rag` or
/// `SingleDoc`; queries without one are recorded as failures.
pub fn run_setting(
    queries: &[QueryInstance],
    ranked: &HashMap<String, RankedList>,
    corpus: &Corpus,
    generator: &CachedGenerator<'_>,
    kind: SettingKind,
    decoding: Decoding,
    parallelism: usize,
) -> Result<SettingRun> {
    struct Job<'q> {
        query: &'q QueryInstance,
        setting: Setting,
        context: Vec<&'q Document>,
    }

    let mut jobs = Vec::new();
    let mut run = SettingRun::default();
    for q in queries {
        if kind == SettingKind::LlmOnly {
            jobs.push(Job {
                query: q,
                setting: Setting::LlmOnly,
                context: vec![],
            });
            continue;
        }
        let Some(list) = ranked.get(&q.query_id) else {
            run.failures.push(Failure {
                query_id: q.query_id.clone(),
                stage: "generate".into(),
                detail: Some(format!("{kind:?}")),
                message: "no ranked list".into(),
            });
            continue;
        };
        let docs = list
            .doc_ids()
            .map(|id| corpus.get(id).ok_or_else(|| Error::UnknownDocument(id.to_string())))
            .collect::<Result<Vec<_>>>()?;
        match kind {
            SettingKind::Rag => jobs.push(Job {
                query: q,
                setting: Setting::Rag {
                    retriever_id: list.retriever_id.clone(),
                },
                context: docs,
            }),
            SettingKind::SingleDoc => {
                for d in docs {
                    jobs.push(Job {
                        query: q,
                        setting: Setting::SingleDoc {
                            doc_id: d.doc_id.clone(),
                        },
                        context: vec![d],
                    })
                }
            }
            SettingKind::LlmOnly => unreachable!(),
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Stage {
            stage: "generate".into(),
            message: e.to_string(),
        })?;
    let outcomes: Vec<(usize, Result<String>)> = pool.install(|| {
        jobs.par_iter()
            .enumerate()
            .map(|(i, job)| {
                let prompt = build_prompt(job.query, &job.context);
                (i, generator.generate(&prompt, decoding))
            })
            .collect()
    });

    for (i, outcome) in outcomes {
        let job = &jobs[i];
        match outcome {
            Ok(output_text) => run.records.push(GenerationRecord {
                query_id: job.query.query_id.clone(),
                setting: job.setting.clone(),
                generator_id: generator.id().to_string(),
                decoding,
                output_text,
                accuracy: None,
            }),
            Err(e) => {
                log::warn!("generation failed for {} ({}): {e}", job.query.query_id, job.setting);
                run.failures.push(Failure {
                    query_id: job.query.query_id.clone(),
                    stage: "generate".into(),
                    detail: Some(job.setting.to_string()),
                    message: e.to_string(),
                });
            }
        }
    }
    check_unique_records(&run.records)?;
    Ok(run)
}
