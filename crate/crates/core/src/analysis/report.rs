use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{correlate_factors, range_metric, CorrelationStat, FactorInputs, RangeKind, RangeStat};
use crate::attribution::AttributionVerdict;
use crate::corpus::{Corpus, FairnessCategory, QueryInstance, Task};
use crate::error::Result;
use crate::generation::{Failure, GenerationRecord, Setting};
use crate::metrics::{
    accuracy_improvements, build_doc_scores, compensated_sum, group_attribution, group_exposure,
    group_utility, query_group_accuracy, score_records, GroupVector, RougeVariant,
};
use crate::retrieval::RankedList;

pub const SCHEMA_VERSION: u32 = 1;

/// Everything produced for one retriever.
#[derive(Debug, Clone, Default)]
pub struct RetrieverLedgers {
    pub retriever_id: String,
    pub ranked_lists: Vec<RankedList>,
    pub rag_records: Vec<GenerationRecord>,
    pub single_doc_records: Vec<GenerationRecord>,
    pub verdicts: Vec<AttributionVerdict>,
}

#[derive(Debug, Clone)]
pub struct RunLedgers<'a> {
    pub corpus: &'a Corpus,
    pub categories: Vec<FairnessCategory>,
    pub queries: Vec<QueryInstance>,
    pub llm_records: Vec<GenerationRecord>,
    pub retrievers: Vec<RetrieverLedgers>,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub run_id: String,
    pub topic: String,
    pub task: Task,
    pub generator_id: String,
    pub attributor_id: String,
    pub retriever_ids: Vec<String>,
    pub k: usize,
    pub seed: u64,
    pub config_hash: String,
    pub rouge_variant: RougeVariant,
    pub exclude_source_doc: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallAccuracy {
    pub retriever_id: String,
    pub llm_only: Option<f64>,
    pub rag: Option<f64>,
    pub evaluated_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySection {
    pub category: String,
    /// Evaluated queries per group, in group order.
    pub query_counts: BTreeMap<String, usize>,
    pub ac_rag: GroupVector,
    pub ac_llm: GroupVector,
    pub delta_ac: GroupVector,
    pub u_hat: GroupVector,
    pub u: GroupVector,
    pub e_hat: GroupVector,
    pub e: GroupVector,
    pub a_hat: GroupVector,
    pub a: GroupVector,
    pub ranges: Vec<RangeStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieverSection {
    pub retriever_id: String,
    pub evaluated_queries: usize,
    /// Queries left out because one of their ledgers is incomplete.
    pub excluded_queries: Vec<String>,
    /// (query, document) pairs with no attribution verdict, counted as 0.
    pub absent_verdicts: usize,
    pub truncated_premises: usize,
    pub categories: Vec<CategorySection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema_version: u32,
    pub meta: ReportMeta,
    pub num_queries: usize,
    pub overall: Vec<OverallAccuracy>,
    pub retrievers: Vec<RetrieverSection>,
    pub correlations: Vec<CorrelationStat>,
    pub failures: Vec<Failure>,
}

impl AuditReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn retriever(&self, id: &str) -> Option<&RetrieverSection> {
        self.retrievers.iter().find(|r| r.retriever_id == id)
    }
}

impl RetrieverSection {
    pub fn category(&self, name: &str) -> Option<&CategorySection> {
        self.categories.iter().find(|c| c.category == name)
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| compensated_sum(values.iter().copied()) / values.len() as f64)
}

/// Computes every group-level quantity from the run ledgers.
///
/// A query enters a retriever's metrics only when its LLM-only output, its
/// ranked list, its RAG output and all of its single-document outputs exist.
/// The report is a pure function of its inputs.
pub fn build_report(ledgers: &RunLedgers<'_>, meta: &ReportMeta) -> Result<AuditReport> {
    let mut llm_records = ledgers.llm_records.clone();
    score_records(&mut llm_records, &ledgers.queries, meta.rouge_variant)?;
    let llm_acc: HashMap<String, f64> = llm_records
        .iter()
        .filter(|r| r.setting == Setting::LlmOnly)
        .filter_map(|r| Some((r.query_id.clone(), r.accuracy?)))
        .collect();

    let mut retrievers = Vec::new();
    let mut overall = Vec::new();
    let mut factor_inputs: BTreeMap<String, Vec<FactorInputs>> = BTreeMap::new();

    for rl in &ledgers.retrievers {
        let mut rag = rl.rag_records.clone();
        score_records(&mut rag, &ledgers.queries, meta.rouge_variant)?;
        let mut single = rl.single_doc_records.clone();
        score_records(&mut single, &ledgers.queries, meta.rouge_variant)?;

        let lists: HashMap<&str, &RankedList> =
            rl.ranked_lists.iter().map(|l| (l.query_id.as_str(), l)).collect();
        let rag_ids: HashSet<&str> = rag.iter().map(|r| r.query_id.as_str()).collect();
        let single_acc: HashMap<(String, String), f64> = single
            .iter()
            .filter_map(|r| match &r.setting {
                Setting::SingleDoc { doc_id } => Some(((r.query_id.clone(), doc_id.clone()), r.accuracy?)),
                _ => None,
            })
            .collect();

        let mut evaluated = Vec::new();
        let mut excluded = Vec::new();
        for q in &ledgers.queries {
            let complete = llm_acc.contains_key(&q.query_id)
                && rag_ids.contains(q.query_id.as_str())
                && lists.get(q.query_id.as_str()).is_some_and(|l| {
                    l.doc_ids()
                        .all(|d| single_acc.contains_key(&(q.query_id.clone(), d.to_string())))
                });
            if complete {
                evaluated.push(q.clone());
            } else {
                excluded.push(q.query_id.clone());
            }
        }
        let eval_ids: HashSet<&str> = evaluated.iter().map(|q| q.query_id.as_str()).collect();
        let eval_lists: Vec<RankedList> = ledgers
            .queries
            .iter()
            .filter(|q| eval_ids.contains(q.query_id.as_str()))
            .map(|q| lists[q.query_id.as_str()].clone())
            .collect();
        let pairs: HashSet<(&str, &str)> = eval_lists
            .iter()
            .flat_map(|l| l.doc_ids().map(move |d| (l.query_id.as_str(), d)))
            .collect();
        let verdicts: Vec<AttributionVerdict> = rl
            .verdicts
            .iter()
            .filter(|v| pairs.contains(&(v.query_id.as_str(), v.doc_id.as_str())))
            .cloned()
            .collect();
        let absent_verdicts = pairs.len().saturating_sub(verdicts.len());
        let truncated_premises = verdicts.iter().filter(|v| v.truncated).count();
        let doc_scores = build_doc_scores(&eval_lists, &llm_acc, &single_acc, &verdicts);

        let rag_setting = Setting::Rag {
            retriever_id: rl.retriever_id.clone(),
        };
        let eval_rag: Vec<GenerationRecord> = rag
            .iter()
            .filter(|r| eval_ids.contains(r.query_id.as_str()) && r.setting == rag_setting)
            .cloned()
            .collect();
        let eval_llm: Vec<GenerationRecord> = llm_records
            .iter()
            .filter(|r| eval_ids.contains(r.query_id.as_str()))
            .cloned()
            .collect();

        overall.push(OverallAccuracy {
            retriever_id: rl.retriever_id.clone(),
            llm_only: mean(&eval_llm.iter().filter_map(|r| r.accuracy).collect::<Vec<_>>()),
            rag: mean(&eval_rag.iter().filter_map(|r| r.accuracy).collect::<Vec<_>>()),
            evaluated_queries: evaluated.len(),
        });

        let n = evaluated.len();
        let mut categories = Vec::new();
        for category in &ledgers.categories {
            let ac_rag = query_group_accuracy(&eval_rag, &evaluated, category, &rag_setting)?;
            let ac_llm = query_group_accuracy(&eval_llm, &evaluated, category, &Setting::LlmOnly)?;
            let delta_ac = accuracy_improvements(&ac_rag, &ac_llm)?;
            let (u_hat, u) = group_utility(&doc_scores, ledgers.corpus, category, n)?;
            let (e_hat, e) = group_exposure(&eval_lists, ledgers.corpus, category)?;
            let (a_hat, a) = group_attribution(&verdicts, ledgers.corpus, category, n)?;
            let ranges = vec![
                range_metric(&delta_ac, RangeKind::RDelta),
                range_metric(&ac_rag, RangeKind::RRag),
                range_metric(&ac_llm, RangeKind::RLlm),
            ];
            let mut query_counts: BTreeMap<String, usize> =
                category.groups.iter().map(|g| (g.clone(), 0)).collect();
            for q in &evaluated {
                if let Some(g) = q.group_index(category) {
                    *query_counts.get_mut(&category.groups[g]).unwrap() += 1;
                }
            }
            factor_inputs
                .entry(category.name.clone())
                .or_default()
                .push(FactorInputs {
                    retriever_id: rl.retriever_id.clone(),
                    u: u.clone(),
                    e: e.clone(),
                    a: a.clone(),
                    ac_rag: ac_rag.clone(),
                    delta_ac: delta_ac.clone(),
                });
            categories.push(CategorySection {
                category: category.name.clone(),
                query_counts,
                ac_rag,
                ac_llm,
                delta_ac,
                u_hat,
                u,
                e_hat,
                e,
                a_hat,
                a,
                ranges,
            });
        }

        retrievers.push(RetrieverSection {
            retriever_id: rl.retriever_id.clone(),
            evaluated_queries: n,
            excluded_queries: excluded,
            absent_verdicts,
            truncated_premises,
            categories,
        });
    }

    let mut failures = ledgers.failures.clone();
    failures.sort_by(|a, b| {
        (&a.query_id, &a.stage, &a.detail).cmp(&(&b.query_id, &b.stage, &b.detail))
    });
    failures.dedup();

    Ok(AuditReport {
        schema_version: SCHEMA_VERSION,
        meta: meta.clone(),
        num_queries: ledgers.queries.len(),
        overall,
        retrievers,
        correlations: correlate_factors(&factor_inputs),
        failures,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `overall.csv`, `group_vectors.csv`, `ranges.csv` and
/// `correlations.csv` under `dir`.
pub fn write_csv_exports(report: &AuditReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut emit = |name: &str, header: &[&str], rows: Vec<Vec<String>>| -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| crate::Error::io(dir.join(name), e.into_error()))?;
        let path = dir.join(name);
        crate::fsutil::write_atomic(&path, &bytes)?;
        written.push(path);
        Ok(())
    };

    emit(
        "overall.csv",
        &["retriever", "llm_only", "rag", "evaluated_queries"],
        report
            .overall
            .iter()
            .map(|o| {
                vec![
                    o.retriever_id.clone(),
                    fmt_opt(o.llm_only),
                    fmt_opt(o.rag),
                    o.evaluated_queries.to_string(),
                ]
            })
            .collect(),
    )?;

    let mut vectors = Vec::new();
    let mut ranges = Vec::new();
    for r in &report.retrievers {
        for c in &r.categories {
            for v in [&c.ac_rag, &c.ac_llm, &c.delta_ac, &c.u_hat, &c.u, &c.e_hat, &c.e, &c.a_hat, &c.a] {
                for e in &v.entries {
                    vectors.push(vec![
                        r.retriever_id.clone(),
                        c.category.clone(),
                        v.kind.to_string(),
                        e.group.clone(),
                        fmt_opt(e.value),
                    ]);
                }
            }
            for s in &c.ranges {
                ranges.push(vec![
                    r.retriever_id.clone(),
                    c.category.clone(),
                    serde_json::to_value(s.setting)?.as_str().unwrap_or_default().to_string(),
                    fmt_opt(s.value),
                    s.argmax_group.clone().unwrap_or_default(),
                    s.argmin_group.clone().unwrap_or_default(),
                ]);
            }
        }
    }
    emit("group_vectors.csv", &["retriever", "category", "kind", "group", "value"], vectors)?;
    emit(
        "ranges.csv",
        &["retriever", "category", "range", "value", "argmax_group", "argmin_group"],
        ranges,
    )?;

    let mut corr = Vec::new();
    for s in &report.correlations {
        let factor = format!("{:?}", s.factor);
        let target = serde_json::to_value(s.target)?.as_str().unwrap_or_default().to_string();
        for (rid, rho) in &s.per_retriever {
            corr.push(vec![s.category.clone(), factor.clone(), target.clone(), rid.clone(), fmt_opt(*rho)]);
        }
        corr.push(vec![s.category.clone(), factor, target, "average".into(), fmt_opt(s.averaged)]);
    }
    emit("correlations.csv", &["category", "factor", "target", "retriever", "rho"], corr)?;
    Ok(written)
}
