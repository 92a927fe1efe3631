//! Fairness diagnostics over group vectors: range statistics, Spearman
//! correlations between document-level factors and accuracy outcomes, and
//! the audit report.

mod plot;
mod report;

pub use plot::{correlation_heatmap_svg, range_bars_svg};
pub use report::{
    build_report, write_csv_exports, AuditReport, CategorySection, OverallAccuracy, ReportMeta,
    RetrieverLedgers, RetrieverSection, RunLedgers, SCHEMA_VERSION,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::metrics::{compensated_sum, GroupVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeKind {
    /// Range of accuracy improvements (EAI).
    RDelta,
    /// Range of RAG accuracy (EA).
    RRag,
    /// Range of LLM-only accuracy.
    RLlm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeStat {
    pub category: String,
    pub setting: RangeKind,
    /// `None` when fewer than two groups have values.
    pub value: Option<f64>,
    pub argmax_group: Option<String>,
    pub argmin_group: Option<String>,
    pub present_groups: usize,
}

/// `max - min` over the groups that have values. Ties for the extremes go
/// to the earlier group.
pub fn range_metric(vector: &GroupVector, setting: RangeKind) -> RangeStat {
    let present: Vec<(&str, f64)> = vector.present().collect();
    let mut stat = RangeStat {
        category: vector.category.clone(),
        setting,
        value: None,
        argmax_group: None,
        argmin_group: None,
        present_groups: present.len(),
    };
    if present.len() < 2 {
        return stat;
    }
    let mut max = present[0];
    let mut min = present[0];
    for &(g, v) in &present[1..] {
        if v > max.1 {
            max = (g, v);
        }
        if v < min.1 {
            min = (g, v);
        }
    }
    stat.value = Some(max.1 - min.1);
    stat.argmax_group = Some(max.0.to_string());
    stat.argmin_group = Some(min.0.to_string());
    stat
}

/// 1-based ranks; tied values share the mean of the positions they occupy.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let mid = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = mid;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation; `None` if either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.is_empty() {
        return None;
    }
    let n = x.len() as f64;
    let mx = compensated_sum(x.iter().copied()) / n;
    let my = compensated_sum(y.iter().copied()) / n;
    let sxy = compensated_sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let sxx = compensated_sum(x.iter().map(|a| (a - mx) * (a - mx)));
    let syy = compensated_sum(y.iter().map(|b| (b - my) * (b - my)));
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho with average-rank ties. Undefined (`None`) for fewer than
/// three points, mismatched lengths, or a constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return None;
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Factor {
    U,
    E,
    A,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    AcRag,
    DeltaAc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationStat {
    pub category: String,
    pub factor: Factor,
    pub target: Target,
    /// `None` marks an undefined cell.
    pub per_retriever: BTreeMap<String, Option<f64>>,
    /// Mean of the defined per-retriever values.
    pub averaged: Option<f64>,
    /// Retrievers left out of the average.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<String>,
    /// Number of groups entering each per-retriever correlation.
    pub n_groups: BTreeMap<String, usize>,
}

/// Group vectors of one retriever and one category.
#[derive(Debug, Clone)]
pub struct FactorInputs {
    pub retriever_id: String,
    pub u: GroupVector,
    pub e: GroupVector,
    pub a: GroupVector,
    pub ac_rag: GroupVector,
    pub delta_ac: GroupVector,
}

/// Spearman's rho over the groups where both vectors have values.
pub fn correlate_vectors(factor: &GroupVector, target: &GroupVector) -> (Option<f64>, usize) {
    if factor.undefined || target.undefined {
        return (None, 0);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = factor
        .entries
        .iter()
        .zip(&target.entries)
        .filter_map(|(f, t)| Some((f.value?, t.value?)))
        .unzip();
    let n = xs.len();
    (spearman(&xs, &ys), n)
}

/// Six correlations (U, E, A against AC_rag and delta AC) for each category,
/// per retriever and averaged across retrievers.
///
/// `inputs` maps category name to one [`FactorInputs`] per retriever.
pub fn correlate_factors(inputs: &BTreeMap<String, Vec<FactorInputs>>) -> Vec<CorrelationStat> {
    let mut out = Vec::new();
    for (category, per_retriever) in inputs {
        for factor in [Factor::U, Factor::E, Factor::A] {
            for target in [Target::AcRag, Target::DeltaAc] {
                let mut stat = CorrelationStat {
                    category: category.clone(),
                    factor,
                    target,
                    per_retriever: BTreeMap::new(),
                    averaged: None,
                    skipped: Vec::new(),
                    n_groups: BTreeMap::new(),
                };
                for r in per_retriever {
                    let f = match factor {
                        Factor::U => &r.u,
                        Factor::E => &r.e,
                        Factor::A => &r.a,
                    };
                    let t = match target {
                        Target::AcRag => &r.ac_rag,
                        Target::DeltaAc => &r.delta_ac,
                    };
                    let (rho, n) = correlate_vectors(f, t);
                    if rho.is_none() {
                        stat.skipped.push(r.retriever_id.clone());
                    }
                    stat.per_retriever.insert(r.retriever_id.clone(), rho);
                    stat.n_groups.insert(r.retriever_id.clone(), n);
                }
                let defined: Vec<f64> = stat.per_retriever.values().flatten().copied().collect();
                if !defined.is_empty() {
                    stat.averaged = Some(compensated_sum(defined.iter().copied()) / defined.len() as f64);
                }
                out.push(stat);
            }
        }
    }
    out
}
