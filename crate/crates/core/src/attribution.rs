//! Document-to-response attribution: does a retrieved document entail the
//! generated response?

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::http::{JsonClient, RetryPolicy};
use crate::metrics::lcs_length;
use crate::tokenize::tokenize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionVerdict {
    pub query_id: String,
    pub doc_id: String,
    pub score: u8,
    pub oracle_id: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Judgement {
    pub entailed: bool,
    pub truncated: bool,
}

pub trait AttributionOracle: Send + Sync {
    fn id(&self) -> &str;
    /// Judges the premise `doc` against the hypothesis `response`.
    fn judge(&self, doc: &Document, response: &str) -> Result<Judgement>;
}

/// Verdict for one (document, response) pair. An empty response never
/// reaches the oracle and scores 0.
pub fn attribute(
    oracle: &dyn AttributionOracle,
    query_id: &str,
    doc: &Document,
    response: &str,
) -> Result<AttributionVerdict> {
    let judgement = if response.trim().is_empty() {
        Judgement::default()
    } else {
        oracle.judge(doc, response)?
    };
    Ok(AttributionVerdict {
        query_id: query_id.to_string(),
        doc_id: doc.doc_id.clone(),
        score: u8::from(judgement.entailed),
        oracle_id: oracle.id().to_string(),
        truncated: judgement.truncated,
    })
}

pub const DEFAULT_MOCK_THRESHOLD: f64 = 0.5;

/// 1 when the token LCS between the document body and the response covers at
/// least `threshold` of the response's tokens.
pub fn mock_attribute(doc: &Document, response: &str, threshold: f64) -> u8 {
    let response = tokenize(response);
    let body = tokenize(&doc.body);
    let lcs = lcs_length(&body, &response);
    let ratio = lcs as f64 / response.len().max(1) as f64;
    u8::from(ratio >= threshold)
}

#[derive(Debug, Clone, Copy)]
pub struct MockOracle {
    pub threshold: f64,
}

impl Default for MockOracle {
    fn default() -> Self {
        MockOracle {
            threshold: DEFAULT_MOCK_THRESHOLD,
        }
    }
}

impl AttributionOracle for MockOracle {
    fn id(&self) -> &str {
        "mock"
    }

    fn judge(&self, doc: &Document, response: &str) -> Result<Judgement> {
        Ok(Judgement {
            entailed: mock_attribute(doc, response, self.threshold) == 1,
            truncated: false,
        })
    }
}

/// Returns the same verdict for every pair.
#[derive(Debug, Clone, Copy)]
pub struct ConstantOracle(pub bool);

impl AttributionOracle for ConstantOracle {
    fn id(&self) -> &str {
        if self.0 {
            "constant-1"
        } else {
            "constant-0"
        }
    }

    fn judge(&self, _doc: &Document, _response: &str) -> Result<Judgement> {
        Ok(Judgement {
            entailed: self.0,
            truncated: false,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NliRequest {
    pub premise: String,
    pub hypothesis: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NliResponse {
    pub label: NliLabel,
    #[serde(default)]
    pub scores: std::collections::BTreeMap<String, f64>,
}

pub const DEFAULT_PREMISE_WORD_LIMIT: usize = 400;

/// Premise text for a document, cut to `max_words` whitespace words. The flag
/// reports whether anything was dropped.
pub fn build_premise(doc: &Document, max_words: usize) -> (String, bool) {
    let full = format!("{}\n{}", doc.title, doc.body);
    let words: Vec<&str> = full.split_whitespace().collect();
    if words.len() <= max_words {
        (full, false)
    } else {
        (words[..max_words].join(" "), true)
    }
}

/// Client for the model server's `POST /nli`.
pub struct NliOracle {
    id: String,
    client: JsonClient,
    max_premise_words: usize,
}

impl NliOracle {
    pub fn new(endpoint: &str, retry: RetryPolicy, max_premise_words: usize) -> Result<Self> {
        if max_premise_words == 0 {
            return Err(Error::Config("premise word limit must be positive".into()));
        }
        Ok(NliOracle {
            id: format!("ext:{endpoint}"),
            client: JsonClient::new(endpoint, retry)?,
            max_premise_words,
        })
    }
}

pub fn nli_attribute(
    client: &JsonClient,
    doc: &Document,
    response: &str,
    max_premise_words: usize,
) -> Result<Judgement> {
    let (premise, truncated) = build_premise(doc, max_premise_words);
    let reply: NliResponse = client.post(
        "/nli",
        &NliRequest {
            premise,
            hypothesis: response.to_string(),
        },
    )?;
    Ok(Judgement {
        entailed: reply.label == NliLabel::Entailment,
        truncated,
    })
}

impl AttributionOracle for NliOracle {
    fn id(&self) -> &str {
        &self.id
    }

    fn judge(&self, doc: &Document, response: &str) -> Result<Judgement> {
        nli_attribute(&self.client, doc, response, self.max_premise_words)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn doc(body: &str) -> Document {
        Document::new("d", "Title", body, "T", BTreeMap::new())
    }

    #[test]
    fn empty_response_scores_zero() {
        let v = attribute(&ConstantOracle(true), "q", &doc("a b"), "  ").unwrap();
        assert_eq!(v.score, 0);
    }

    #[test]
    fn substring_response_is_entailed() {
        let d = doc("the port of leith lies north of edinburgh");
        assert_eq!(mock_attribute(&d, "leith lies north", 0.5), 1);
        assert_eq!(mock_attribute(&d, &d.body, 0.5), 1);
    }

    #[test]
    fn disjoint_response_is_not() {
        assert_eq!(mock_attribute(&doc("a b c"), "x y z", 0.5), 0);
    }

    #[test]
    fn half_overlap_meets_threshold() {
        // LCS("a b c d", "a b x y") = 2, ratio 2/4.
        assert_eq!(mock_attribute(&doc("a b c d"), "a b x y", 0.5), 1);
        assert_eq!(mock_attribute(&doc("a b c d"), "a x y z", 0.5), 0);
    }

    #[test]
    fn premise_truncation() {
        let d = Document::new("d", "T", "w1 w2 w3 w4", "X", BTreeMap::new());
        assert_eq!(build_premise(&d, 10), ("T\nw1 w2 w3 w4".to_string(), false));
        assert_eq!(build_premise(&d, 3), ("T w1 w2".to_string(), true));
    }

    #[test]
    fn nli_labels_parse() {
        let r: NliResponse =
            serde_json::from_str(r#"{"label":"neutral","scores":{"neutral":0.7}}"#).unwrap();
        assert_eq!(r.label, NliLabel::Neutral);
    }

    proptest! {
        #[test]
        fn mock_is_monotone_under_appending_document_tokens(
            doc_len in 1usize..15,
            noise in 0usize..10,
            prefix in 0usize..15,
            extra in 1usize..15,
        ) {
            let body: Vec<String> = (0..doc_len).map(|i| format!("d{i}")).collect();
            let d = doc(&body.join(" "));
            let p = prefix.min(doc_len);
            let q = (p + extra).min(doc_len);
            let noise: Vec<String> = (0..noise).map(|i| format!("n{i}")).collect();
            let before = [noise.clone(), body[..p].to_vec()].concat().join(" ");
            let after = [noise, body[..q].to_vec()].concat().join(" ");
            prop_assert!(mock_attribute(&d, &after, 0.5) >= mock_attribute(&d, &before, 0.5));
        }
    }
}
