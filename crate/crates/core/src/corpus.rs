//! Group-labeled corpora, the dataset filters, topic selection and
//! cartesian-product representative sampling.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenize::word_count;

/// Default length cap applied by [`filter_documents`].
pub const DEFAULT_MAX_WORDS: usize = 512;

/// A fairness dimension and its ordered groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FairnessCategory {
    pub name: String,
    pub groups: Vec<String>,
}

impl FairnessCategory {
    pub fn new<S: Into<String>>(name: S, groups: impl IntoIterator<Item = S>) -> Result<Self> {
        let category = FairnessCategory {
            name: name.into(),
            groups: groups.into_iter().map(Into::into).collect(),
        };
        category.validate()?;
        Ok(category)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Category("category name is empty".into()));
        }
        if self.groups.len() < 2 {
            return Err(Error::Category(format!(
                "{} needs at least two groups",
                self.name
            )));
        }
        for (i, g) in self.groups.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::Category(format!("{} has an empty group", self.name)));
            }
            if self.groups[..i].contains(g) {
                return Err(Error::Category(format!(
                    "{} repeats group {g:?}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    pub fn group_index(&self, group: &str) -> Option<usize> {
        self.groups.iter().position(|g| g == group)
    }

    pub fn contains(&self, group: &str) -> bool {
        self.group_index(group).is_some()
    }
}

/// The four categories of the TREC 2022 Fair Ranking setup used by default.
pub fn default_categories() -> Vec<FairnessCategory> {
    let table: [(&str, [&str; 4]); 4] = [
        ("AoT", ["Unk", "Pre-1900s", "20th century", "21st century"]),
        ("Pop", ["Low", "Medium-Low", "Medium-High", "High"]),
        ("AoA", ["2001–2006", "2007–2011", "2012–2016", "2017–2022"]),
        ("Alp", ["a–d", "e–k", "l–r", "s–z"]),
    ];
    table
        .iter()
        .map(|(name, groups)| FairnessCategory {
            name: name.to_string(),
            groups: groups.iter().map(|g| g.to_string()).collect(),
        })
        .collect()
}

/// Reads a category configuration file: a JSON list of `{name, groups}`.
pub fn load_categories(path: &Path) -> Result<Vec<FairnessCategory>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let categories: Vec<FairnessCategory> = serde_json::from_str(&text)?;
    validate_categories(&categories)?;
    Ok(categories)
}

pub fn validate_categories(categories: &[FairnessCategory]) -> Result<()> {
    for (i, c) in categories.iter().enumerate() {
        c.validate()?;
        if categories[..i].iter().any(|o| o.name == c.name) {
            return Err(Error::Category(format!("duplicate category {:?}", c.name)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub body: String,
    pub topic: String,
    pub labels: BTreeMap<String, String>,
    pub word_count: usize,
}

impl Document {
    pub fn new(
        doc_id: impl Into<String>,
        title: impl Into<String>,
        body: impl Into<String>,
        topic: impl Into<String>,
        labels: BTreeMap<String, String>,
    ) -> Self {
        let body = body.into();
        Document {
            doc_id: doc_id.into(),
            title: title.into(),
            word_count: word_count(&body),
            body,
            topic: topic.into(),
            labels,
        }
    }

    pub fn label(&self, category: &str) -> Option<&str> {
        self.labels.get(category).map(String::as_str)
    }

    /// Index of this document's group within `category`, if it has a valid one.
    pub fn group_index(&self, category: &FairnessCategory) -> Option<usize> {
        self.label(&category.name)
            .and_then(|g| category.group_index(g))
    }

    /// Text indexed by the built-in retriever: title and body on separate lines.
    pub fn indexed_text(&self) -> String {
        format!("{}\n{}", self.title, self.body)
    }
}

/// One corpus line on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub id: String,
    pub title: String,
    pub body: String,
    pub topic: String,
    pub labels: BTreeMap<String, String>,
}

impl From<CorpusRecord> for Document {
    fn from(r: CorpusRecord) -> Self {
        Document::new(r.id, r.title, r.body, r.topic, r.labels)
    }
}

impl From<&Document> for CorpusRecord {
    fn from(d: &Document) -> Self {
        CorpusRecord {
            id: d.doc_id.clone(),
            title: d.title.clone(),
            body: d.body.clone(),
            topic: d.topic.clone(),
            labels: d.labels.clone(),
        }
    }
}

/// An immutable document collection with a by-id lookup.
#[derive(Debug, Clone)]
pub struct Corpus {
    documents: Vec<Document>,
    categories: Vec<FairnessCategory>,
    topic_counts: BTreeMap<String, usize>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>, categories: Vec<FairnessCategory>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(documents.len());
        let mut topic_counts = BTreeMap::new();
        for (i, d) in documents.iter().enumerate() {
            if by_id.insert(d.doc_id.clone(), i).is_some() {
                return Err(Error::DuplicateDocument(d.doc_id.clone()));
            }
            *topic_counts.entry(d.topic.clone()).or_insert(0) += 1;
        }
        Ok(Corpus {
            documents,
            categories,
            topic_counts,
            by_id,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn categories(&self) -> &[FairnessCategory] {
        &self.categories
    }

    pub fn topic_counts(&self) -> &BTreeMap<String, usize> {
        &self.topic_counts
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.by_id.get(doc_id).map(|&i| &self.documents[i])
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.by_id.contains_key(doc_id)
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    #[default]
    Strict,
    Lenient,
}

/// Outcome of [`load_corpus_with_stats`]: the corpus and the 1-based line
/// numbers that were skipped in lenient mode.
#[derive(Debug)]
pub struct LoadedCorpus {
    pub corpus: Corpus,
    pub skipped_lines: Vec<usize>,
}

pub fn load_corpus(
    path: &Path,
    categories: &[FairnessCategory],
    mode: ParseMode,
) -> Result<Corpus> {
    let loaded = load_corpus_with_stats(path, categories, mode)?;
    if !loaded.skipped_lines.is_empty() {
        warn!(
            "skipped {} malformed corpus lines in {}",
            loaded.skipped_lines.len(),
            path.display()
        );
    }
    Ok(loaded.corpus)
}

pub fn load_corpus_with_stats(
    path: &Path,
    categories: &[FairnessCategory],
    mode: ParseMode,
) -> Result<LoadedCorpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut documents = Vec::new();
    let mut seen = HashMap::new();
    let mut skipped_lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<CorpusRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(|r| {
                if seen.insert(r.id.clone(), line_no).is_some() {
                    Err(format!("duplicate document id {:?}", r.id))
                } else {
                    Ok(r)
                }
            });
        match parsed {
            Ok(record) => documents.push(Document::from(record)),
            Err(message) => match mode {
                ParseMode::Strict => {
                    return Err(Error::Parse {
                        line: line_no,
                        message,
                    })
                }
                ParseMode::Lenient => skipped_lines.push(line_no),
            },
        }
    }
    Ok(LoadedCorpus {
        corpus: Corpus::new(documents, categories.to_vec())?,
        skipped_lines,
    })
}

/// Writes documents as corpus JSON lines.
pub fn write_corpus(path: &Path, documents: &[Document]) -> Result<()> {
    let mut out = String::new();
    for d in documents {
        out.push_str(&serde_json::to_string(&CorpusRecord::from(d))?);
        out.push('\n');
    }
    crate::fsutil::write_atomic(path, out.as_bytes())
}

/// Keeps documents of at most `max_words` words that carry a valid group for
/// every configured category. Labels of unconfigured categories are dropped.
pub fn filter_documents(corpus: &Corpus, max_words: usize) -> Corpus {
    let categories = corpus.categories();
    let kept = corpus
        .documents()
        .iter()
        .filter(|d| d.word_count <= max_words)
        .filter(|d| categories.iter().all(|c| d.group_index(c).is_some()))
        .map(|d| {
            let mut d = d.clone();
            d.labels.retain(|k, _| categories.iter().any(|c| &c.name == k));
            d
        })
        .collect();
    Corpus::new(kept, categories.to_vec()).expect("ids stay unique under filtering")
}

/// The `n` topics with most documents; ties go to the lexicographically
/// smaller name.
pub fn select_topics(corpus: &Corpus, n: usize) -> Vec<String> {
    rank_topics(corpus.topic_counts(), n)
}

pub fn rank_topics(counts: &BTreeMap<String, usize>, n: usize) -> Vec<String> {
    if counts.len() < n {
        warn!(
            "requested {n} topics but only {} are available",
            counts.len()
        );
    }
    let mut ranked: Vec<(&String, &usize)> = counts.iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    ranked.into_iter().take(n).map(|(t, _)| t.clone()).collect()
}

/// Picks one document per populated cell of the cartesian product of the
/// categories' groups, uniformly at random under `seed`.
///
/// Cells are visited in mixed-radix order with the first category varying
/// slowest; the output follows that order.
pub fn sample_representatives(
    corpus: &Corpus,
    topic: &str,
    categories: &[FairnessCategory],
    seed: u64,
) -> Result<Vec<Document>> {
    if !corpus.topic_counts().contains_key(topic) {
        return Err(Error::UnknownTopic(topic.to_string()));
    }
    if categories.is_empty() {
        return Err(Error::Category("no categories to sample over".into()));
    }

    let mut cells: HashMap<Vec<usize>, Vec<&Document>> = HashMap::new();
    for d in corpus.documents().iter().filter(|d| d.topic == topic) {
        let key: Option<Vec<usize>> = categories.iter().map(|c| d.group_index(c)).collect();
        if let Some(key) = key {
            cells.entry(key).or_default().push(d);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::new();
    for cell in CellIter::new(categories) {
        if let Some(members) = cells.get(&cell) {
            let i = rng.random_range(0..members.len());
            picked.push(members[i].clone());
        }
    }
    Ok(picked)
}

/// Mixed-radix enumeration of group-index tuples.
struct CellIter {
    radices: Vec<usize>,
    next: Option<Vec<usize>>,
}

impl CellIter {
    fn new(categories: &[FairnessCategory]) -> Self {
        let radices: Vec<usize> = categories.iter().map(|c| c.groups.len()).collect();
        let next = if radices.iter().all(|&r| r > 0) {
            Some(vec![0; radices.len()])
        } else {
            None
        };
        CellIter { radices, next }
    }
}

impl Iterator for CellIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        for pos in (0..succ.len()).rev() {
            succ[pos] += 1;
            if succ[pos] < self.radices[pos] {
                self.next = Some(succ);
                return Some(current);
            }
            succ[pos] = 0;
        }
        Some(current)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    ArticleGeneration,
    TitleGeneration,
}

impl Task {
    pub fn slug(self) -> &'static str {
        match self {
            Task::ArticleGeneration => "article",
            Task::TitleGeneration => "title",
        }
    }

    pub fn default_beam_size(self) -> u32 {
        match self {
            Task::ArticleGeneration => 2,
            Task::TitleGeneration => 4,
        }
    }

    pub fn default_max_new_tokens(self) -> u32 {
        match self {
            Task::ArticleGeneration => 512,
            Task::TitleGeneration => 16,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::ArticleGeneration => "article_generation",
            Task::TitleGeneration => "title_generation",
        })
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "article" | "article_generation" => Ok(Task::ArticleGeneration),
            "title" | "title_generation" => Ok(Task::TitleGeneration),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryInstance {
    pub query_id: String,
    pub task: Task,
    pub query_text: String,
    pub ground_truth: String,
    pub source_doc_id: String,
    pub labels: BTreeMap<String, String>,
}

impl QueryInstance {
    pub fn from_document(doc: &Document, task: Task) -> Self {
        let (query_text, ground_truth) = match task {
            Task::ArticleGeneration => (doc.title.clone(), doc.body.clone()),
            Task::TitleGeneration => (doc.body.clone(), doc.title.clone()),
        };
        QueryInstance {
            query_id: format!("{}:{}", doc.doc_id, task.slug()),
            task,
            query_text,
            ground_truth,
            source_doc_id: doc.doc_id.clone(),
            labels: doc.labels.clone(),
        }
    }

    pub fn group_index(&self, category: &FairnessCategory) -> Option<usize> {
        self.labels
            .get(&category.name)
            .and_then(|g| category.group_index(g))
    }
}

/// One query per representative; documents with an empty title or body are
/// skipped.
pub fn build_queries(representatives: &[Document], task: Task) -> Vec<QueryInstance> {
    representatives
        .iter()
        .filter(|d| {
            let usable = !d.title.trim().is_empty() && !d.body.trim().is_empty();
            if !usable {
                warn!("skipping {}: empty title or body", d.doc_id);
            }
            usable
        })
        .map(|d| QueryInstance::from_document(d, task))
        .collect()
}
