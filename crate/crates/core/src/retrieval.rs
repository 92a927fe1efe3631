//! Built-in BM25 retrieval over an inverted index, plus the HTTP client for
//! externally hosted retrievers.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, QueryInstance};
use crate::error::{Error, Result};
use crate::http::{JsonClient, RetryPolicy};
use crate::tokenize::tokenize;

pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`; strictly positive for `df <= N`.
pub fn idf(doc_count: usize, df: usize) -> f64 {
    let n = doc_count as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Saturated, length-normalised term frequency.
pub fn tf_weight(tf: u32, doc_len: u32, avg_doc_len: f64, params: Bm25Params) -> f64 {
    let tf = f64::from(tf);
    let norm = 1.0 - params.b + params.b * f64::from(doc_len) / avg_doc_len;
    tf * (params.k1 + 1.0) / (tf + params.k1 * norm)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexField {
    Body,
    Title,
    /// Title and body joined by a newline.
    #[default]
    TitleBody,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    field: IndexField,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    postings: BTreeMap<String, Vec<Posting>>,
}

impl InvertedIndex {
    pub fn build(corpus: &Corpus, field: IndexField) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut doc_ids = Vec::with_capacity(corpus.len());
        let mut doc_lengths = Vec::with_capacity(corpus.len());
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        for (i, d) in corpus.documents().iter().enumerate() {
            let text = match field {
                IndexField::Body => d.body.clone(),
                IndexField::Title => d.title.clone(),
                IndexField::TitleBody => d.indexed_text(),
            };
            let tokens = tokenize(&text);
            let mut tfs: BTreeMap<String, u32> = BTreeMap::new();
            for t in &tokens {
                *tfs.entry(t.clone()).or_insert(0) += 1;
            }
            for (term, tf) in tfs {
                postings.entry(term).or_default().push(Posting { doc: i as u32, tf });
            }
            doc_ids.push(d.doc_id.clone());
            doc_lengths.push(tokens.len() as u32);
        }
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        Ok(InvertedIndex {
            field,
            avg_doc_length: total as f64 / doc_ids.len() as f64,
            doc_ids,
            doc_lengths,
            postings,
        })
    }

    pub fn field(&self) -> IndexField {
        self.field
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn term_frequency(&self, term: &str, doc_id: &str) -> u32 {
        let Some(idx) = self.doc_ids.iter().position(|d| d == doc_id) else {
            return 0;
        };
        self.postings
            .get(term)
            .and_then(|ps| ps.iter().find(|p| p.doc as usize == idx))
            .map_or(0, |p| p.tf)
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<u32> {
        self.doc_ids
            .iter()
            .position(|d| d == doc_id)
            .map(|i| self.doc_lengths[i])
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    /// Top-`k` documents for `query_text`. Each distinct query term
    /// contributes once; documents sharing no term with the query are left
    /// out.
    pub fn search(&self, query_text: &str, k: usize, params: Bm25Params) -> Vec<RankedEntry> {
        let terms: BTreeSet<String> = tokenize(query_text).into_iter().collect();
        let mut scores = vec![0.0f64; self.doc_ids.len()];
        let mut touched = vec![false; self.doc_ids.len()];
        for term in &terms {
            let Some(postings) = self.postings.get(term) else {
                continue;
            };
            let w = idf(self.doc_count(), postings.len());
            for p in postings {
                let d = p.doc as usize;
                scores[d] += w * tf_weight(p.tf, self.doc_lengths[d], self.avg_doc_length, params);
                touched[d] = true;
            }
        }
        let entries = touched
            .iter()
            .enumerate()
            .filter(|&(d, &t)| t && scores[d] > 0.0)
            .map(|(d, _)| RankedEntry {
                doc_id: self.doc_ids[d].clone(),
                score: scores[d],
            })
            .collect();
        top_k(entries, k)
    }
}

pub fn build_index(corpus: &Corpus, field: IndexField) -> Result<InvertedIndex> {
    InvertedIndex::build(corpus, field)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub doc_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub retriever_id: String,
    pub k: usize,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Score-descending order with ascending doc id among equal scores.
pub fn rank_order(a: &RankedEntry, b: &RankedEntry) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// Sorts, keeps the best-scored copy of each doc id, and truncates to `k`.
pub fn top_k(mut entries: Vec<RankedEntry>, k: usize) -> Vec<RankedEntry> {
    entries.sort_by(rank_order);
    let mut seen = HashSet::new();
    entries.retain(|e| seen.insert(e.doc_id.clone()));
    entries.truncate(k);
    entries
}

pub fn bm25_retrieve(index: &InvertedIndex, query_id: &str, query_text: &str, k: usize) -> RankedList {
    let entries = index.search(query_text, k, Bm25Params::default());
    if entries.is_empty() && tokenize(query_text).is_empty() {
        log::warn!("query {query_id} has no indexable tokens");
    }
    RankedList {
        query_id: query_id.to_string(),
        retriever_id: BM25_ID.to_string(),
        k,
        entries,
    }
}

pub const BM25_ID: &str = "bm25";

/// Anything that turns a query into a top-k list.
pub trait Retriever: Send + Sync {
    fn id(&self) -> &str;
    fn retrieve(&self, query: &QueryInstance, k: usize) -> Result<RankedList>;
}

pub struct Bm25Retriever {
    index: Arc<InvertedIndex>,
}

impl Bm25Retriever {
    pub fn new(index: Arc<InvertedIndex>) -> Self {
        Bm25Retriever { index }
    }
}

impl Retriever for Bm25Retriever {
    fn id(&self) -> &str {
        BM25_ID
    }

    fn retrieve(&self, query: &QueryInstance, k: usize) -> Result<RankedList> {
        Ok(bm25_retrieve(&self.index, &query.query_id, &query.query_text, k))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RetrieveRequest {
    pub query: String,
    pub k: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RetrieveResponse {
    pub results: Vec<RankedEntry>,
}

/// Client for a retriever served over `POST /retrieve`.
pub struct ExternalRetriever {
    id: String,
    client: JsonClient,
    known: Arc<HashSet<String>>,
}

impl ExternalRetriever {
    pub fn new(id: impl Into<String>, endpoint: &str, corpus: &Corpus, retry: RetryPolicy) -> Result<Self> {
        let known = corpus.documents().iter().map(|d| d.doc_id.clone()).collect();
        Ok(ExternalRetriever {
            id: id.into(),
            client: JsonClient::new(endpoint, retry)?,
            known: Arc::new(known),
        })
    }
}

impl Retriever for ExternalRetriever {
    fn id(&self) -> &str {
        &self.id
    }

    fn retrieve(&self, query: &QueryInstance, k: usize) -> Result<RankedList> {
        external_retrieve(&self.client, &self.id, &self.known, query, k)
    }
}

pub fn external_retrieve(
    client: &JsonClient,
    retriever_id: &str,
    known: &HashSet<String>,
    query: &QueryInstance,
    k: usize,
) -> Result<RankedList> {
    let response: RetrieveResponse = client.post(
        "/retrieve",
        &RetrieveRequest {
            query: query.query_text.clone(),
            k,
        },
    )?;
    if let Some(bad) = response.results.iter().find(|e| !known.contains(&e.doc_id)) {
        return Err(Error::UnknownDocument(bad.doc_id.clone()));
    }
    Ok(RankedList {
        query_id: query.query_id.clone(),
        retriever_id: retriever_id.to_string(),
        k,
        entries: top_k(response.results, k),
    })
}

/// Retrieves for `query`, optionally dropping its own source document. One
/// extra document is requested so the list stays `k` long after the drop.
pub fn retrieve_for_query(
    retriever: &dyn Retriever,
    query: &QueryInstance,
    k: usize,
    exclude_source_doc: bool,
) -> Result<RankedList> {
    if !exclude_source_doc {
        return retriever.retrieve(query, k);
    }
    let mut list = retriever.retrieve(query, k + 1)?;
    list.entries.retain(|e| e.doc_id != query.source_doc_id);
    list.entries.truncate(k);
    list.k = k;
    Ok(list)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use std::collections::BTreeMap;

    fn corpus(docs: &[(&str, &str)]) -> Corpus {
        let docs = docs
            .iter()
            .map(|(id, body)| Document::new(*id, "", *body, "T", BTreeMap::new()))
            .collect();
        Corpus::new(docs, vec![]).unwrap()
    }

    #[test]
    fn bookkeeping() {
        let c = corpus(&[("a", "one two"), ("b", "three"), ("c", "four five six")]);
        let idx = build_index(&c, IndexField::Body).unwrap();
        assert_eq!(idx.doc_count(), 3);
        assert!((idx.avg_doc_length() - 2.0).abs() < 1e-12);
        assert_eq!(idx.doc_frequency("seven"), 0);
        assert_eq!(idx.doc_frequency("two"), 1);
    }

    #[test]
    fn tokenizer_contract_in_index() {
        let c = corpus(&[("a", "Cat cat!")]);
        let idx = build_index(&c, IndexField::Body).unwrap();
        assert_eq!(idx.term_frequency("cat", "a"), 2);
        assert_eq!(idx.doc_length("a"), Some(2));
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let c = corpus(&[]);
        assert!(matches!(build_index(&c, IndexField::Body), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn toy_ranking_and_score() {
        // N=3, df(cat)=2, avgdl=4/3: idf = ln(1.6); d1 tf part = 2.2/1.975.
        let c = corpus(&[("d1", "cat"), ("d2", "cat cat"), ("d3", "dog")]);
        let idx = build_index(&c, IndexField::Body).unwrap();
        let list = bm25_retrieve(&idx, "q", "cat", 10);
        let ids: Vec<_> = list.doc_ids().collect();
        assert_eq!(ids, vec!["d2", "d1"]);
        let expected_d1 = 1.6f64.ln() * 2.2 / 1.975;
        assert!((list.entries[1].score - expected_d1).abs() < 1e-12);
        assert!((list.entries[1].score - 0.5235).abs() < 1e-3);
    }

    #[test]
    fn unmatched_and_empty_queries() {
        let c = corpus(&[("d1", "cat"), ("d2", "dog")]);
        let idx = build_index(&c, IndexField::Body).unwrap();
        assert!(bm25_retrieve(&idx, "q", "zebra", 10).is_empty());
        assert!(bm25_retrieve(&idx, "q", "?!", 10).is_empty());
    }

    #[test]
    fn ties_break_by_doc_id() {
        let c = corpus(&[("b", "same text"), ("a", "same text"), ("c", "other")]);
        let idx = build_index(&c, IndexField::Body).unwrap();
        let ids: Vec<_> = idx
            .search("same", 10, Bm25Params::default())
            .into_iter()
            .map(|e| e.doc_id)
            .collect();
        assert_eq!(ids, vec!["a", "b"]);
    }

    #[test]
    fn idf_decreases_with_df() {
        for n in 1..50 {
            for df in 0..n {
                assert!(idf(n, df) > idf(n, df + 1));
                assert!(idf(n, df + 1) > 0.0);
            }
        }
    }

    #[test]
    fn top_k_dedupes_and_truncates() {
        let e = |id: &str, s: f64| RankedEntry {
            doc_id: id.into(),
            score: s,
        };
        let out = top_k(vec![e("x", 1.0), e("y", 3.0), e("x", 2.0), e("z", 2.0)], 2);
        assert_eq!(out, vec![e("y", 3.0), e("x", 2.0)]);
    }

    #[test]
    fn source_exclusion_keeps_k() {
        let c = corpus(&[("d1", "cat"), ("d2", "cat cat"), ("d3", "cat dog")]);
        let idx = Arc::new(build_index(&c, IndexField::Body).unwrap());
        let r = Bm25Retriever::new(idx);
        let q = QueryInstance {
            query_id: "d2:article".into(),
            task: crate::corpus::Task::ArticleGeneration,
            query_text: "cat".into(),
            ground_truth: String::new(),
            source_doc_id: "d2".into(),
            labels: BTreeMap::new(),
        };
        let list = retrieve_for_query(&r, &q, 2, true).unwrap();
        let ids: Vec<_> = list.doc_ids().collect();
        assert_eq!(ids, vec!["d1", "d3"]);
        let with_source = retrieve_for_query(&r, &q, 2, false).unwrap();
        assert_eq!(with_source.entries[0].doc_id, "d2");
    }

    #[test]
    fn index_serializes() {
        let c = corpus(&[("d1", "cat"), ("d2", "cat cat")]);
        let idx = build_index(&c, IndexField::Body).unwrap();
        let back: InvertedIndex = serde_json::from_str(&serde_json::to_string(&idx).unwrap()).unwrap();
        assert_eq!(back, idx);
    }
}
