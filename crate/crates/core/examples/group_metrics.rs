//! Computes group accuracy, accuracy gains, utility, exposure and
//! attribution vectors from hand-made ledgers.
//!
//! Run with `cargo run --example group_metrics`.

use std::collections::{BTreeMap, HashMap};

use ragfair::attribution::AttributionVerdict;
use ragfair::corpus::{Corpus, Document, FairnessCategory, QueryInstance, Task};
use ragfair::generation::{Decoding, GenerationRecord, Setting};
use ragfair::metrics::{
    accuracy_improvements, build_doc_scores, group_attribution, group_exposure, group_utility,
    query_group_accuracy, score_records, GroupVector, RougeVariant,
};
use ragfair::retrieval::{RankedEntry, RankedList};

fn show(v: &GroupVector) {
    let cells: Vec<String> = v
        .entries
        .iter()
        .map(|e| format!("{}={}", e.group, e.value.map_or("n/a".into(), |x| format!("{x:.3}"))))
        .collect();
    println!("{:>8}: {}", v.kind.to_string(), cells.join("  "));
}

fn main() -> ragfair::Result<()> {
    let region = FairnessCategory::new("Region", ["north", "south"])?;
    let doc = |id: &str, body: &str, g: &str| {
        Document::new(id, id.to_uppercase(), body, "Cities", BTreeMap::from([("Region".to_string(), g.to_string())]))
    };
    let docs = vec![
        doc("n1", "harbour city on the northern coast", "north"),
        doc("n2", "northern market town", "north"),
        doc("s1", "southern river city", "south"),
        doc("s2", "harbour city on the southern coast", "south"),
    ];
    let corpus = Corpus::new(docs.clone(), vec![region.clone()])?;
    let queries: Vec<QueryInstance> = [&docs[0], &docs[2]]
        .iter()
        .map(|d| QueryInstance::from_document(d, Task::TitleGeneration))
        .collect();

    let decoding = Decoding::for_task(Task::TitleGeneration);
    let record = |q: &QueryInstance, setting: Setting, text: &str| GenerationRecord {
        query_id: q.query_id.clone(),
        setting,
        generator_id: "mock".into(),
        decoding,
        output_text: text.into(),
        accuracy: None,
    };
    let rag_setting = Setting::Rag { retriever_id: "bm25".into() };
    let mut llm = vec![record(&queries[0], Setting::LlmOnly, "city"), record(&queries[1], Setting::LlmOnly, "S1")];
    let mut rag = vec![record(&queries[0], rag_setting.clone(), "N1"), record(&queries[1], rag_setting.clone(), "S1")];
    score_records(&mut llm, &queries, RougeVariant::F1)?;
    score_records(&mut rag, &queries, RougeVariant::F1)?;

    let lists: Vec<RankedList> = queries
        .iter()
        .map(|q| RankedList {
            query_id: q.query_id.clone(),
            retriever_id: "bm25".into(),
            k: 2,
            entries: ["n1", "s2"].iter().map(|d| RankedEntry { doc_id: d.to_string(), score: 1.0 }).collect(),
        })
        .collect();
    // Single-document accuracies: n1 answers the first query perfectly.
    let single: HashMap<(String, String), f64> = HashMap::from([
        ((queries[0].query_id.clone(), "n1".into()), 100.0),
        ((queries[0].query_id.clone(), "s2".into()), 0.0),
        ((queries[1].query_id.clone(), "n1".into()), 0.0),
        ((queries[1].query_id.clone(), "s2".into()), 0.0),
    ]);
    let llm_acc: HashMap<String, f64> = llm.iter().map(|r| (r.query_id.clone(), r.accuracy.unwrap())).collect();
    let verdicts: Vec<AttributionVerdict> = lists
        .iter()
        .flat_map(|l| {
            l.doc_ids().map(|d| AttributionVerdict {
                query_id: l.query_id.clone(),
                doc_id: d.to_string(),
                score: u8::from(d == "n1"),
                oracle_id: "example".into(),
                truncated: false,
            })
        })
        .collect();

    let ac_rag = query_group_accuracy(&rag, &queries, &region, &rag_setting)?;
    let ac_llm = query_group_accuracy(&llm, &queries, &region, &Setting::LlmOnly)?;
    show(&ac_rag);
    show(&ac_llm);
    show(&accuracy_improvements(&ac_rag, &ac_llm)?);
    let scores = build_doc_scores(&lists, &llm_acc, &single, &verdicts);
    let n = queries.len();
    for (hat, norm) in [
        group_utility(&scores, &corpus, &region, n)?,
        group_exposure(&lists, &corpus, &region)?,
        group_attribution(&verdicts, &corpus, &region, n)?,
    ] {
        show(&hat);
        show(&norm);
    }
    Ok(())
}
