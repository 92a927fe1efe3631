//! Loads a corpus file, filters it, ranks topics and samples one
//! representative query document per group combination.
//!
//! Run with `cargo run --example dataset_build [corpus.jsonl]`. Without an
//! argument a small synthetic corpus is written first.

use std::path::PathBuf;

use ragfair::corpus::{
    build_queries, default_categories, filter_documents, load_corpus_with_stats, rank_topics,
    sample_representatives, write_corpus, ParseMode, Task, DEFAULT_MAX_WORDS,
};
use ragfair::synth::{generate_synthetic_corpus, SynthSpec};

fn main() -> ragfair::Result<()> {
    let categories = default_categories();
    let path = match std::env::args().nth(1) {
        Some(p) => PathBuf::from(p),
        None => {
            let p = std::env::temp_dir().join("ragfair-dataset-example.jsonl");
            let spec = SynthSpec::balanced(512, "Rivers", categories.clone(), 1);
            write_corpus(&p, &generate_synthetic_corpus(&spec)?)?;
            p
        }
    };
    let loaded = load_corpus_with_stats(&path, &categories, ParseMode::Lenient)?;
    println!("loaded {} documents, skipped lines {:?}", loaded.corpus.len(), loaded.skipped_lines);
    let filtered = filter_documents(&loaded.corpus, DEFAULT_MAX_WORDS);
    println!("{} documents after filtering", filtered.len());
    let topics = rank_topics(filtered.topic_counts(), 3);
    println!("largest topics: {topics:?}");
    let Some(topic) = topics.first() else { return Ok(()) };

    let reps = sample_representatives(&filtered, topic, &categories, 0)?;
    let queries = build_queries(&reps, Task::ArticleGeneration);
    println!("{} queries for {topic:?}; first three:", queries.len());
    for q in queries.iter().take(3) {
        println!("  {} {:?} {:?}", q.query_id, q.query_text, q.labels);
    }
    Ok(())
}
