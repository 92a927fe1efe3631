//! Builds a BM25 index over a handful of documents and ranks them for a
//! query.
//!
//! Run with `cargo run --example bm25_search -- "harbour trade"`.

use std::collections::BTreeMap;

use ragfair::corpus::{Corpus, Document};
use ragfair::retrieval::{bm25_retrieve, build_index, IndexField};

fn main() -> ragfair::Result<()> {
    let query = std::env::args().nth(1).unwrap_or_else(|| "harbour trade".to_string());
    let docs = vec![
        Document::new("leith", "Leith", "Leith is a port district with a long harbour trade history.", "Cities", BTreeMap::new()),
        Document::new("perth", "Perth", "Perth lies on the river Tay and was once the royal capital.", "Cities", BTreeMap::new()),
        Document::new("dundee", "Dundee", "Dundee grew on jute, jam and journalism, and harbour trade.", "Cities", BTreeMap::new()),
        Document::new("stirling", "Stirling", "Stirling castle overlooks the old bridge over the Forth.", "Cities", BTreeMap::new()),
    ];
    let corpus = Corpus::new(docs, vec![])?;
    let index = build_index(&corpus, IndexField::TitleBody)?;
    println!("{} documents, average length {:.2} tokens", index.doc_count(), index.avg_doc_length());

    let list = bm25_retrieve(&index, "example", &query, 3);
    println!("top {} for {query:?}:", list.len());
    for (rank, e) in list.entries.iter().enumerate() {
        println!("  {}. {:<10} {:.4}", rank + 1, e.doc_id, e.score);
    }
    Ok(())
}
