//! Judges whether retrieved documents support a response with the mock and
//! constant oracles, and shows the premise sent to an NLI service.
//!
//! Run with `cargo run --example attribution`.

use std::collections::BTreeMap;

use ragfair::attribution::{attribute, build_premise, AttributionOracle, ConstantOracle, MockOracle};
use ragfair::corpus::Document;

fn main() -> ragfair::Result<()> {
    let docs = [
        Document::new("leith", "Leith", "Leith is a port district north of Edinburgh city centre.", "Cities", BTreeMap::new()),
        Document::new("perth", "Perth", "Perth lies on the river Tay.", "Cities", BTreeMap::new()),
    ];
    let response = "a port district north of Edinburgh";
    let oracles: [&dyn AttributionOracle; 3] = [&MockOracle::default(), &ConstantOracle(true), &ConstantOracle(false)];
    for oracle in oracles {
        for d in &docs {
            let v = attribute(oracle, "q1", d, response)?;
            println!("{:<10} {:<6} -> {}", oracle.id(), d.doc_id, v.score);
        }
    }
    let (premise, truncated) = build_premise(&docs[0], 5);
    println!("NLI premise (5 words): {premise:?}, truncated: {truncated}");
    Ok(())
}
