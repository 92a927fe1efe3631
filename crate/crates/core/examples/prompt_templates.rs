//! Renders the few-shot prompts for both tasks, with and without context,
//! and shows how a raw completion is normalised.
//!
//! Run with `cargo run --example prompt_templates`.

use std::collections::BTreeMap;

use ragfair::corpus::{Document, QueryInstance, Task};
use ragfair::generation::{build_prompt, normalize_output};

fn main() {
    let context = [
        Document::new("a", "Leith", "Leith is a port district of Edinburgh.", "Cities", BTreeMap::new()),
        Document::new("b", "Perth", "Perth lies on the river Tay.", "Cities", BTreeMap::new()),
    ];
    let target = Document::new("t", "Dundee", "Dundee is a city on the Firth of Tay.", "Cities", BTreeMap::new());
    let refs: Vec<&Document> = context.iter().collect();

    for task in [Task::ArticleGeneration, Task::TitleGeneration] {
        let query = QueryInstance::from_document(&target, task);
        println!("== {task}, no context ==\n{}\n", build_prompt(&query, &[]).rendered);
        println!("== {task}, two documents ==\n{}\n", build_prompt(&query, &refs).rendered);
    }

    let query = QueryInstance::from_document(&target, Task::TitleGeneration);
    let prompt = build_prompt(&query, &refs);
    let raw = format!("{} Dundee\nArticle: a model running on", prompt.rendered);
    println!("normalised completion: {:?}", normalize_output(&raw, &prompt.rendered));
}
