//! Audit run configuration: the JSON file format, defaults and validation.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::{default_categories, load_categories, FairnessCategory, Task, DEFAULT_MAX_WORDS};
use crate::error::{Error, Result};
use crate::fsutil::sha256_hex;
use crate::http::{validate_url, RetryPolicy};
use crate::metrics::RougeVariant;
use crate::retrieval::{BM25_ID, DEFAULT_K};

pub const GENERATOR_URL_ENV: &str = "RAGFAIR_GENERATOR_URL";
pub const NLI_URL_ENV: &str = "RAGFAIR_NLI_URL";

/// A retriever, generator or attributor reference: built in, or an HTTP
/// service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Component {
    Builtin(String),
    External(String),
}

impl Component {
    pub fn id(&self) -> String {
        String::from(self.clone())
    }

    /// File-name-safe form of the id.
    pub fn slug(&self) -> String {
        match self {
            Component::Builtin(name) => name.clone(),
            Component::External(url) => {
                let mut s: String = url
                    .chars()
                    .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
                    .collect();
                s.truncate(48);
                format!("ext_{s}_{}", &sha256_hex(url.as_bytes())[..8])
            }
        }
    }
}

impl TryFrom<String> for Component {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        match s.strip_prefix("ext:") {
            Some(url) => {
                validate_url(url)?;
                Ok(Component::External(url.to_string()))
            }
            None if s.is_empty() => Err(Error::Config("empty component name".into())),
            None => Ok(Component::Builtin(s)),
        }
    }
}

impl From<Component> for String {
    fn from(c: Component) -> String {
        match c {
            Component::Builtin(s) => s,
            Component::External(url) => format!("ext:{url}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodingOverrides {
    pub beam_size: Option<u32>,
    pub max_new_tokens: Option<u32>,
}

/// The on-disk configuration. Only `corpus`, `topic` and `task` are required.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub corpus: Option<PathBuf>,
    pub categories: Option<PathBuf>,
    pub topic: Option<String>,
    pub task: Option<Task>,
    pub retrievers: Option<Vec<Component>>,
    pub generator: Option<Component>,
    pub attributor: Option<Component>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub decoding: Option<DecodingOverrides>,
    pub exclude_source_doc: Option<bool>,
    pub strict_parsing: Option<bool>,
    pub max_words: Option<usize>,
    pub runs_dir: Option<PathBuf>,
    pub run_id: Option<String>,
    pub cache: Option<PathBuf>,
    pub parallelism: Option<usize>,
    pub retry: Option<RetryPolicy>,
    pub mock_threshold: Option<f64>,
    pub premise_word_limit: Option<usize>,
    pub rouge_variant: Option<RougeVariant>,
    pub failure_tolerance: Option<f64>,
}

/// A fully resolved configuration with defaults applied and paths made
/// absolute relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub categories_path: Option<PathBuf>,
    pub categories: Vec<FairnessCategory>,
    pub topic: String,
    pub task: Task,
    pub retrievers: Vec<Component>,
    pub generator: Component,
    pub attributor: Component,
    pub k: usize,
    pub seed: u64,
    pub beam_size: u32,
    pub max_new_tokens: u32,
    pub exclude_source_doc: bool,
    pub strict_parsing: bool,
    pub max_words: usize,
    /// Not persisted: a saved run takes its location from where it lies.
    #[serde(skip)]
    pub runs_dir: PathBuf,
    pub run_id: Option<String>,
    pub cache: Option<PathBuf>,
    pub parallelism: usize,
    pub retry: RetryPolicy,
    pub mock_threshold: f64,
    pub premise_word_limit: usize,
    pub rouge_variant: RougeVariant,
    /// Largest tolerated fraction of failed calls in a stage before the stage
    /// aborts as resumable.
    pub failure_tolerance: f64,
}

/// The subset of the configuration that determines results.
#[derive(Serialize)]
struct HashedConfig<'a> {
    corpus_sha256: String,
    categories: &'a [FairnessCategory],
    topic: &'a str,
    task: Task,
    retrievers: &'a [Component],
    generator: &'a Component,
    attributor: &'a Component,
    k: usize,
    seed: u64,
    beam_size: u32,
    max_new_tokens: u32,
    exclude_source_doc: bool,
    strict_parsing: bool,
    max_words: usize,
    mock_threshold: f64,
    premise_word_limit: usize,
    rouge_variant: RougeVariant,
}

impl RunConfig {
    /// Hash over the corpus bytes and every result-affecting setting.
    pub fn config_hash(&self) -> Result<String> {
        let corpus = std::fs::read(&self.corpus).map_err(|e| Error::io(&self.corpus, e))?;
        let hashed = HashedConfig {
            corpus_sha256: sha256_hex(&corpus),
            categories: &self.categories,
            topic: &self.topic,
            task: self.task,
            retrievers: &self.retrievers,
            generator: &self.generator,
            attributor: &self.attributor,
            k: self.k,
            seed: self.seed,
            beam_size: self.beam_size,
            max_new_tokens: self.max_new_tokens,
            exclude_source_doc: self.exclude_source_doc,
            strict_parsing: self.strict_parsing,
            max_words: self.max_words,
            mock_threshold: self.mock_threshold,
            premise_word_limit: self.premise_word_limit,
            rouge_variant: self.rouge_variant,
        };
        Ok(sha256_hex(serde_json::to_string(&hashed)?.as_bytes()))
    }

    pub fn resolved_run_id(&self) -> Result<String> {
        match &self.run_id {
            Some(id) => Ok(id.clone()),
            None => Ok(self.config_hash()?[..12].to_string()),
        }
    }

    pub fn run_dir(&self) -> Result<PathBuf> {
        Ok(self.runs_dir.join(self.resolved_run_id()?))
    }

    pub fn decoding(&self) -> crate::generation::Decoding {
        crate::generation::Decoding {
            beam_size: self.beam_size,
            max_new_tokens: self.max_new_tokens,
        }
    }

    /// Minimal configuration with every default applied.
    pub fn minimal(corpus: impl Into<PathBuf>, topic: &str, task: Task) -> Self {
        let raw = RawConfig {
            corpus: Some(corpus.into()),
            topic: Some(topic.to_string()),
            task: Some(task),
            ..RawConfig::default()
        };
        resolve(raw, Path::new(""), false).expect("minimal config is valid")
    }
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

/// Reads, defaults and validates a configuration file.
pub fn validate_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let raw: RawConfig = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let config = resolve(raw, base, true)?;
    if !config.corpus.exists() {
        return Err(Error::Config(format!("corpus {} does not exist", config.corpus.display())));
    }
    Ok(config)
}

fn env_override(current: Component, var: &str) -> Result<Component> {
    match (&current, std::env::var(var)) {
        (Component::External(_), Ok(url)) if !url.is_empty() => {
            validate_url(&url)?;
            Ok(Component::External(url))
        }
        _ => Ok(current),
    }
}

/// Applies defaults to `raw`; relative paths are taken from `base`.
pub fn resolve(raw: RawConfig, base: &Path, apply_env: bool) -> Result<RunConfig> {
    let abs = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
    let corpus = abs(raw.corpus.ok_or_else(|| Error::Config("missing required key \"corpus\"".into()))?);
    let topic = raw.topic.ok_or_else(|| Error::Config("missing required key \"topic\"".into()))?;
    let task = raw.task.ok_or_else(|| Error::Config("missing required key \"task\"".into()))?;

    let categories_path = raw.categories.map(abs);
    let categories = match &categories_path {
        Some(p) => load_categories(p).map_err(config_err)?,
        None => default_categories(),
    };

    let retrievers = raw
        .retrievers
        .unwrap_or_else(|| vec![Component::Builtin(BM25_ID.into())]);
    if retrievers.is_empty() {
        return Err(Error::Config("retriever list is empty".into()));
    }
    for (i, r) in retrievers.iter().enumerate() {
        if let Component::Builtin(name) = r {
            if name != BM25_ID {
                return Err(Error::Config(format!("unknown retriever {name:?}")));
            }
        }
        if retrievers[..i].contains(r) {
            return Err(Error::Config(format!("retriever {} listed twice", r.id())));
        }
    }
    let mut generator = raw.generator.unwrap_or_else(|| Component::Builtin("mock".into()));
    let mut attributor = raw.attributor.unwrap_or_else(|| Component::Builtin("mock".into()));
    for (what, c) in [("generator", &generator), ("attributor", &attributor)] {
        if let Component::Builtin(name) = c {
            if name != "mock" {
                return Err(Error::Config(format!("unknown {what} {name:?}")));
            }
        }
    }
    if apply_env {
        generator = env_override(generator, GENERATOR_URL_ENV)?;
        attributor = env_override(attributor, NLI_URL_ENV)?;
    }

    let k = raw.k.unwrap_or(DEFAULT_K);
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let decoding = raw.decoding.unwrap_or_default();
    let beam_size = decoding.beam_size.unwrap_or(task.default_beam_size());
    let max_new_tokens = decoding.max_new_tokens.unwrap_or(task.default_max_new_tokens());
    if beam_size == 0 || max_new_tokens == 0 {
        return Err(Error::Config("beam_size and max_new_tokens must be positive".into()));
    }
    let parallelism = raw.parallelism.unwrap_or(4);
    if parallelism == 0 {
        return Err(Error::Config("parallelism must be at least 1".into()));
    }
    let mock_threshold = raw.mock_threshold.unwrap_or(crate::attribution::DEFAULT_MOCK_THRESHOLD);
    if !(0.0..=1.0).contains(&mock_threshold) {
        return Err(Error::Config("mock_threshold must lie in [0, 1]".into()));
    }
    let failure_tolerance = raw.failure_tolerance.unwrap_or(0.5);
    if !(0.0..=1.0).contains(&failure_tolerance) {
        return Err(Error::Config("failure_tolerance must lie in [0, 1]".into()));
    }
    let premise_word_limit = raw
        .premise_word_limit
        .unwrap_or(crate::attribution::DEFAULT_PREMISE_WORD_LIMIT);
    if premise_word_limit == 0 {
        return Err(Error::Config("premise_word_limit must be positive".into()));
    }
    if let Some(id) = &raw.run_id {
        if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
            return Err(Error::Config(format!("run_id {id:?} is not a plain directory name")));
        }
    }
    if topic.trim().is_empty() {
        return Err(Error::Config("topic is empty".into()));
    }

    Ok(RunConfig {
        corpus,
        categories_path,
        categories,
        topic,
        task,
        retrievers,
        generator,
        attributor,
        k,
        seed: raw.seed.unwrap_or(0),
        beam_size,
        max_new_tokens,
        exclude_source_doc: raw.exclude_source_doc.unwrap_or(false),
        strict_parsing: raw.strict_parsing.unwrap_or(true),
        max_words: raw.max_words.unwrap_or(DEFAULT_MAX_WORDS),
        runs_dir: abs(raw.runs_dir.unwrap_or_else(|| PathBuf::from("runs"))),
        run_id: raw.run_id,
        cache: raw.cache.map(abs),
        parallelism,
        retry: raw.retry.unwrap_or_default(),
        mock_threshold,
        premise_word_limit,
        rouge_variant: raw.rouge_variant.unwrap_or_default(),
        failure_tolerance,
    })
}

/// Probes every external endpoint with `GET /health`. Any HTTP answer counts
/// as reachable.
pub fn check_endpoints(config: &RunConfig) -> Result<()> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(5)))
        .build()
        .into();
    let externals = config
        .retrievers
        .iter()
        .chain([&config.generator, &config.attributor])
        .filter_map(|c| match c {
            Component::External(url) => Some(url),
            Component::Builtin(_) => None,
        });
    for url in externals {
        let probe = format!("{}/health", url.trim_end_matches('/'));
        agent
            .get(&probe)
            .call()
            .map_err(|e| Error::Config(format!("endpoint {url} unreachable: {e}")))?;
    }
    Ok(())
}
