//! Accuracy (ROUGE-L), per-document utility and exposure, and the group-level
//! accuracy, utility, exposure and attribution vectors.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::attribution::AttributionVerdict;
use crate::corpus::{Corpus, FairnessCategory, QueryInstance};
use crate::error::{Error, Result};
use crate::generation::{GenerationRecord, Setting};
use crate::retrieval::RankedList;
use crate::tokenize::tokenize;

/// Length of the longest common subsequence of `a` and `b`.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            curr[j + 1] = if x == y {
                prev[j] + 1
            } else {
                curr[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RougeVariant {
    #[default]
    F1,
    Recall,
    Precision,
}

/// ROUGE-L F1 on the shared tokenizer, scaled to 0..=100.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    rouge_l_with(candidate, reference, RougeVariant::F1)
}

pub fn rouge_l_with(candidate: &str, reference: &str, variant: RougeVariant) -> f64 {
    rouge_l_tokens(&tokenize(candidate), &tokenize(reference), variant)
}

pub fn rouge_l_tokens<T: PartialEq>(candidate: &[T], reference: &[T], variant: RougeVariant) -> f64 {
    let lcs = lcs_length(candidate, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    let score = match variant {
        RougeVariant::F1 => 2.0 * p * r / (p + r),
        RougeVariant::Recall => r,
        RougeVariant::Precision => p,
    };
    100.0 * score
}

/// Clamped gain of the single-document output over the LLM-only output.
pub fn doc_utility(accuracy_llm_only: f64, accuracy_single_doc: f64) -> f64 {
    (accuracy_single_doc - accuracy_llm_only).max(0.0)
}

/// Neumaier-compensated sum, evaluated in iteration order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Fills each record's accuracy with ROUGE-L against its query's ground truth.
pub fn score_records(records: &mut [GenerationRecord], queries: &[QueryInstance], variant: RougeVariant) -> Result<()> {
    let truth: HashMap<&str, &str> = queries
        .iter()
        .map(|q| (q.query_id.as_str(), q.ground_truth.as_str()))
        .collect();
    let mut missing = Vec::new();
    for r in records.iter_mut() {
        match truth.get(r.query_id.as_str()) {
            Some(gt) => r.accuracy = Some(rouge_l_with(&r.output_text, gt, variant)),
            None => missing.push(r.query_id.clone()),
        }
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingRecords(missing))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorKind {
    AcRag,
    AcLlm,
    DeltaAc,
    U,
    E,
    A,
    UHat,
    EHat,
    AHat,
}

impl fmt::Display for VectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        f.write_str(s.as_ref().and_then(|v| v.as_str()).unwrap_or("?"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub group: String,
    /// `None` when the group is absent (no queries) or the vector is undefined.
    pub value: Option<f64>,
}

/// Per-group values of one quantity within one fairness category, in the
/// category's group order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupVector {
    pub category: String,
    pub kind: VectorKind,
    pub entries: Vec<GroupEntry>,
    /// Set on normalised vectors whose unnormalised total was zero.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub undefined: bool,
}

impl GroupVector {
    pub fn new(category: &FairnessCategory, kind: VectorKind, values: Vec<Option<f64>>) -> Self {
        assert_eq!(values.len(), category.groups.len(), "one value per group");
        GroupVector {
            category: category.name.clone(),
            kind,
            entries: category
                .groups
                .iter()
                .zip(values)
                .map(|(g, value)| GroupEntry {
                    group: g.clone(),
                    value,
                })
                .collect(),
            undefined: false,
        }
    }

    pub fn get(&self, group: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.group == group).and_then(|e| e.value)
    }

    pub fn values(&self) -> Vec<Option<f64>> {
        self.entries.iter().map(|e| e.value).collect()
    }

    /// `(group, value)` for every group with a value.
    pub fn present(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries
            .iter()
            .filter_map(|e| e.value.map(|v| (e.group.as_str(), v)))
    }

    pub fn absent_groups(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.value.is_none())
            .map(|e| e.group.as_str())
            .collect()
    }

    fn same_groups(&self, other: &GroupVector) -> bool {
        self.category == other.category
            && self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| a.group == b.group)
    }

    /// Divides by the total mass. A zero total yields an undefined vector.
    pub fn normalized(&self, kind: VectorKind) -> GroupVector {
        let total = compensated_sum(self.present().map(|(_, v)| v));
        let mut out = self.clone();
        out.kind = kind;
        if total > 0.0 {
            for e in &mut out.entries {
                e.value = e.value.map(|v| v / total);
            }
        } else {
            for e in &mut out.entries {
                e.value = None;
            }
            out.undefined = true;
        }
        out
    }
}

/// Mean accuracy of the queries in each group under `setting`.
///
/// Every query must have exactly one scored record in that setting. Groups
/// without queries come back as `None`.
pub fn query_group_accuracy(
    records: &[GenerationRecord],
    queries: &[QueryInstance],
    category: &FairnessCategory,
    setting: &Setting,
) -> Result<GroupVector> {
    let kind = match setting {
        Setting::LlmOnly => VectorKind::AcLlm,
        _ => VectorKind::AcRag,
    };
    let mut by_query: HashMap<&str, Vec<&GenerationRecord>> = HashMap::new();
    for r in records.iter().filter(|r| &r.setting == setting) {
        by_query.entry(r.query_id.as_str()).or_default().push(r);
    }
    let mut missing = Vec::new();
    let mut per_group: Vec<Vec<f64>> = vec![Vec::new(); category.groups.len()];
    for q in queries {
        let g = q.group_index(category).ok_or_else(|| Error::MissingLabel {
            doc_id: q.source_doc_id.clone(),
            category: category.name.clone(),
        })?;
        match by_query.get(q.query_id.as_str()).map(Vec::as_slice) {
            Some([r]) => match r.accuracy {
                Some(acc) => per_group[g].push(acc),
                None => missing.push(q.query_id.clone()),
            },
            Some(_) => return Err(Error::DuplicateKey(format!("{}/{setting}", q.query_id))),
            None => missing.push(q.query_id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingRecords(missing));
    }
    let values = per_group
        .iter()
        .map(|scores| {
            (!scores.is_empty())
                .then(|| compensated_sum(scores.iter().copied()) / scores.len() as f64)
        })
        .collect();
    Ok(GroupVector::new(category, kind, values))
}

/// Elementwise `rag - llm`; groups absent from either side stay absent.
pub fn accuracy_improvements(ac_rag: &GroupVector, ac_llm: &GroupVector) -> Result<GroupVector> {
    if !ac_rag.same_groups(ac_llm) {
        return Err(Error::CategoryMismatch {
            left: ac_rag.category.clone(),
            right: ac_llm.category.clone(),
        });
    }
    let mut out = ac_rag.clone();
    out.kind = VectorKind::DeltaAc;
    out.undefined = false;
    for (e, l) in out.entries.iter_mut().zip(&ac_llm.entries) {
        e.value = match (e.value, l.value) {
            (Some(r), Some(l)) => Some(r - l),
            _ => None,
        };
    }
    Ok(out)
}

/// Utility, exposure and attribution of one retrieved document for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocScore {
    pub query_id: String,
    pub doc_id: String,
    pub utility: f64,
    pub exposure: f64,
    pub attribution: Option<u8>,
}

/// One [`DocScore`] per (query, top-k document) pair.
///
/// `llm_accuracy` maps query id to the LLM-only accuracy; `single_doc_accuracy`
/// maps (query id, doc id) to the single-document accuracy. Pairs whose
/// single-document accuracy is missing get utility 0.
pub fn build_doc_scores(
    ranked_lists: &[RankedList],
    llm_accuracy: &HashMap<String, f64>,
    single_doc_accuracy: &HashMap<(String, String), f64>,
    verdicts: &[AttributionVerdict],
) -> Vec<DocScore> {
    let verdict: HashMap<(&str, &str), u8> = verdicts
        .iter()
        .map(|v| ((v.query_id.as_str(), v.doc_id.as_str()), v.score))
        .collect();
    let mut out = Vec::new();
    for list in ranked_lists {
        let e1 = llm_accuracy.get(&list.query_id).copied();
        for doc_id in list.doc_ids() {
            let e2 = single_doc_accuracy
                .get(&(list.query_id.clone(), doc_id.to_string()))
                .copied();
            let utility = match (e1, e2) {
                (Some(e1), Some(e2)) => doc_utility(e1, e2),
                _ => 0.0,
            };
            out.push(DocScore {
                query_id: list.query_id.clone(),
                doc_id: doc_id.to_string(),
                utility,
                exposure: 1.0,
                attribution: verdict.get(&(list.query_id.as_str(), doc_id)).copied(),
            });
        }
    }
    out
}

fn per_group_mass<'a, I>(items: I, corpus: &Corpus, category: &FairnessCategory, num_queries: usize) -> Result<Vec<Option<f64>>>
where
    I: IntoIterator<Item = (&'a str, f64)>,
{
    let mut mass: Vec<Vec<f64>> = vec![Vec::new(); category.groups.len()];
    for (doc_id, value) in items {
        let doc = corpus
            .get(doc_id)
            .ok_or_else(|| Error::UnknownDocument(doc_id.to_string()))?;
        let g = doc.group_index(category).ok_or_else(|| Error::MissingLabel {
            doc_id: doc_id.to_string(),
            category: category.name.clone(),
        })?;
        mass[g].push(value);
    }
    let n = num_queries.max(1) as f64;
    Ok(mass
        .into_iter()
        .map(|vs| Some(compensated_sum(vs) / n))
        .collect())
}

/// Average per-query utility mass of each group's documents (`U_hat`) and
/// its normalisation (`U`).
pub fn group_utility(
    doc_scores: &[DocScore],
    corpus: &Corpus,
    category: &FairnessCategory,
    num_queries: usize,
) -> Result<(GroupVector, GroupVector)> {
    let values = per_group_mass(
        doc_scores.iter().map(|s| (s.doc_id.as_str(), s.utility)),
        corpus,
        category,
        num_queries,
    )?;
    let hat = GroupVector::new(category, VectorKind::UHat, values);
    let norm = hat.normalized(VectorKind::U);
    Ok((hat, norm))
}

/// Average number of each group's documents per top-k list (`E_hat`) and its
/// normalisation (`E`). Every retrieved document has exposure 1.
pub fn group_exposure(
    ranked_lists: &[RankedList],
    corpus: &Corpus,
    category: &FairnessCategory,
) -> Result<(GroupVector, GroupVector)> {
    let values = per_group_mass(
        ranked_lists.iter().flat_map(|l| l.doc_ids().map(|d| (d, 1.0))),
        corpus,
        category,
        ranked_lists.len(),
    )?;
    let hat = GroupVector::new(category, VectorKind::EHat, values);
    let norm = hat.normalized(VectorKind::E);
    Ok((hat, norm))
}

/// Average number of each group's entailing documents per query (`A_hat`)
/// and its normalisation (`A`). Missing verdicts count as 0.
pub fn group_attribution(
    verdicts: &[AttributionVerdict],
    corpus: &Corpus,
    category: &FairnessCategory,
    num_queries: usize,
) -> Result<(GroupVector, GroupVector)> {
    let mut seen = HashSet::new();
    for v in verdicts {
        if !seen.insert((&v.query_id, &v.doc_id, &v.oracle_id)) {
            return Err(Error::DuplicateKey(format!("{}/{}/{}", v.query_id, v.doc_id, v.oracle_id)));
        }
    }
    let values = per_group_mass(
        verdicts
            .iter()
            .map(|v| (v.doc_id.as_str(), f64::from(v.score))),
        corpus,
        category,
        num_queries,
    )?;
    let hat = GroupVector::new(category, VectorKind::AHat, values);
    let norm = hat.normalized(VectorKind::A);
    Ok((hat, norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Task};
    use crate::generation::Decoding;
    use crate::retrieval::RankedEntry;
    use std::collections::BTreeMap;

    fn cat() -> FairnessCategory {
        FairnessCategory::new("C", ["g1", "g2"]).unwrap()
    }

    fn corpus() -> Corpus {
        let docs = ["a", "b", "c", "d"]
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let g = if i < 2 { "g1" } else { "g2" };
                Document::new(*id, *id, "x", "T", BTreeMap::from([("C".to_string(), g.to_string())]))
            })
            .collect();
        Corpus::new(docs, vec![cat()]).unwrap()
    }

    fn list(q: &str, ids: &[&str]) -> RankedList {
        RankedList {
            query_id: q.into(),
            retriever_id: "bm25".into(),
            k: ids.len(),
            entries: ids
                .iter()
                .map(|d| RankedEntry {
                    doc_id: d.to_string(),
                    score: 1.0,
                })
                .collect(),
        }
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l("a b c", "a b c"), 100.0);
        assert_eq!(rouge_l("x y", "a b"), 0.0);
        assert!((rouge_l("a c", "a b c") - 80.0).abs() < 1e-12);
        assert_eq!(rouge_l("", "a"), 0.0);
        assert_eq!(rouge_l("a", ""), 0.0);
        assert!((rouge_l_with("a c", "a b c", RougeVariant::Recall) - 200.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn lcs_basics() {
        assert_eq!(lcs_length(&[1, 2, 3, 4], &[2, 4]), 2);
        assert_eq!(lcs_length::<u8>(&[], &[1]), 0);
        assert_eq!(lcs_length(&["a", "b", "c", "d"], &["a", "b", "x", "y"]), 2);
    }

    #[test]
    fn utility_clamps() {
        assert_eq!(doc_utility(20.0, 35.0), 15.0);
        assert_eq!(doc_utility(30.0, 25.0), 0.0);
        assert_eq!(doc_utility(40.0, 40.0), 0.0);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let xs = [1e16, 1.0, -1e16];
        assert_eq!(compensated_sum(xs), 1.0);
    }

    fn record(q: &str, setting: Setting, acc: f64) -> GenerationRecord {
        GenerationRecord {
            query_id: q.into(),
            setting,
            generator_id: "g".into(),
            decoding: Decoding::for_task(Task::TitleGeneration),
            output_text: String::new(),
            accuracy: Some(acc),
        }
    }

    fn query(id: &str, group: &str) -> QueryInstance {
        QueryInstance {
            query_id: id.into(),
            task: Task::TitleGeneration,
            query_text: String::new(),
            ground_truth: String::new(),
            source_doc_id: id.into(),
            labels: BTreeMap::from([("C".to_string(), group.to_string())]),
        }
    }

    #[test]
    fn group_accuracy_means_and_absent_groups() {
        let qs = vec![query("1", "g1"), query("2", "g1"), query("3", "g1")];
        let rs = vec![
            record("1", Setting::LlmOnly, 20.0),
            record("2", Setting::LlmOnly, 30.0),
            record("3", Setting::LlmOnly, 40.0),
        ];
        let v = query_group_accuracy(&rs, &qs, &cat(), &Setting::LlmOnly).unwrap();
        assert_eq!(v.get("g1"), Some(30.0));
        assert_eq!(v.get("g2"), None);
        assert_eq!(v.absent_groups(), vec!["g2"]);
        assert_eq!(v.kind, VectorKind::AcLlm);
    }

    #[test]
    fn singleton_group() {
        let qs = vec![query("1", "g2")];
        let rs = vec![record("1", Setting::LlmOnly, 55.0)];
        let v = query_group_accuracy(&rs, &qs, &cat(), &Setting::LlmOnly).unwrap();
        assert_eq!(v.get("g2"), Some(55.0));
    }

    #[test]
    fn missing_records_are_listed() {
        let qs = vec![query("1", "g1"), query("2", "g2")];
        let rs = vec![record("1", Setting::LlmOnly, 1.0)];
        match query_group_accuracy(&rs, &qs, &cat(), &Setting::LlmOnly) {
            Err(Error::MissingRecords(ids)) => assert_eq!(ids, vec!["2"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn improvements_keep_sign_and_check_category() {
        let c = cat();
        let rag = GroupVector::new(&c, VectorKind::AcRag, vec![Some(28.4), Some(10.0)]);
        let llm = GroupVector::new(&c, VectorKind::AcLlm, vec![Some(21.8), Some(12.0)]);
        let d = accuracy_improvements(&rag, &llm).unwrap();
        assert!((d.get("g1").unwrap() - 6.6).abs() < 1e-9);
        assert!((d.get("g2").unwrap() + 2.0).abs() < 1e-12);
        let zero = accuracy_improvements(&rag, &rag).unwrap();
        assert!(zero.present().all(|(_, v)| v == 0.0));
        let other = FairnessCategory::new("D", ["g1", "g2"]).unwrap();
        let llm_other = GroupVector::new(&other, VectorKind::AcLlm, vec![Some(1.0), Some(1.0)]);
        assert!(matches!(
            accuracy_improvements(&rag, &llm_other),
            Err(Error::CategoryMismatch { .. })
        ));
    }

    fn score(q: &str, d: &str, u: f64) -> DocScore {
        DocScore {
            query_id: q.into(),
            doc_id: d.into(),
            utility: u,
            exposure: 1.0,
            attribution: None,
        }
    }

    #[test]
    fn utility_normalization_cases() {
        let c = corpus();
        let (hat, u) = group_utility(&[score("q", "a", 0.0), score("q", "c", 0.0)], &c, &cat(), 1).unwrap();
        assert_eq!(hat.values(), vec![Some(0.0), Some(0.0)]);
        assert!(u.undefined);

        let (hat, u) = group_utility(&[score("q", "a", 10.0)], &c, &cat(), 1).unwrap();
        assert_eq!(hat.get("g1"), Some(10.0));
        assert_eq!(u.get("g1"), Some(1.0));

        let (_, u) = group_utility(&[score("q", "a", 3.0), score("q", "c", 1.0)], &c, &cat(), 1).unwrap();
        assert_eq!(u.values(), vec![Some(0.75), Some(0.25)]);
    }

    #[test]
    fn exposure_counts_per_query() {
        let c = corpus();
        let lists = vec![list("q1", &["a", "b", "c"]), list("q2", &["a", "c", "d"])];
        let (hat, e) = group_exposure(&lists, &c, &cat()).unwrap();
        assert_eq!(hat.values(), vec![Some(1.5), Some(1.5)]);
        assert_eq!(e.values(), vec![Some(0.5), Some(0.5)]);

        let (hat, e) = group_exposure(&[list("q", &["a", "b"])], &c, &cat()).unwrap();
        assert_eq!(hat.get("g2"), Some(0.0));
        assert_eq!(e.get("g2"), Some(0.0));
    }

    #[test]
    fn attribution_single_mass_and_zero() {
        let c = corpus();
        let v = |q: &str, d: &str, s: u8| AttributionVerdict {
            query_id: q.into(),
            doc_id: d.into(),
            score: s,
            oracle_id: "o".into(),
            truncated: false,
        };
        let verdicts = vec![v("q1", "c", 1), v("q1", "a", 0), v("q2", "d", 1)];
        let (hat, a) = group_attribution(&verdicts, &c, &cat(), 2).unwrap();
        assert_eq!(hat.get("g2"), Some(1.0));
        assert_eq!(a.get("g2"), Some(1.0));
        let (_, a) = group_attribution(&[v("q1", "a", 0)], &c, &cat(), 1).unwrap();
        assert!(a.undefined);
        assert!(group_attribution(&[v("q", "a", 1), v("q", "a", 1)], &c, &cat(), 1).is_err());
    }

    #[test]
    fn unknown_documents_are_errors() {
        let c = corpus();
        assert!(matches!(
            group_exposure(&[list("q", &["zzz"])], &c, &cat()),
            Err(Error::UnknownDocument(_))
        ));
    }

    #[test]
    fn doc_scores_from_ledgers() {
        let lists = vec![list("q", &["a", "c"])];
        let llm = HashMap::from([("q".to_string(), 20.0)]);
        let single = HashMap::from([
            (("q".to_string(), "a".to_string()), 35.0),
            (("q".to_string(), "c".to_string()), 10.0),
        ]);
        let scores = build_doc_scores(&lists, &llm, &single, &[]);
        assert_eq!(scores.len(), 2);
        assert_eq!(scores[0].utility, 15.0);
        assert_eq!(scores[1].utility, 0.0);
        assert!(scores.iter().all(|s| s.exposure == 1.0 && s.attribution.is_none()));
    }
}
