//! End-to-end audit over a synthetic corpus with a planted utility gap.
//!
//! Documents in group "g0" of the "Coverage" category repeat the answer
//! vocabulary in full, "g1" documents carry none of it, and the other groups
//! sit in between. The mock generator and mock attribution oracle then show
//! the gap in the utility and attribution vectors.
//!
//! Run with `cargo run --example synthetic_audit [output-dir]`.

use std::path::PathBuf;

use ragfair::corpus::{write_corpus, FairnessCategory, Task};
use ragfair::pipeline::{run_audit, RawConfig};
use ragfair::synth::{generate_synthetic_corpus, SynthSpec};

fn main() -> ragfair::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("ragfair-synthetic-audit"));
    std::fs::create_dir_all(&out).expect("output directory");

    let categories = vec![
        FairnessCategory::new("Coverage", ["g0", "g1", "g2", "g3"])?,
        FairnessCategory::new("Region", ["north", "south"])?,
    ];
    let spec = SynthSpec::balanced(200, "Cities", categories.clone(), 7)
        .with_bias("Coverage", vec![1.0, 0.0, 0.66, 0.33]);
    let corpus_path = out.join("corpus.jsonl");
    write_corpus(&corpus_path, &generate_synthetic_corpus(&spec)?)?;
    let categories_path = out.join("categories.json");
    ragfair::fsutil::write_json(&categories_path, &categories)?;

    let raw = RawConfig {
        corpus: Some(corpus_path),
        categories: Some(categories_path),
        topic: Some("Cities".into()),
        task: Some(Task::ArticleGeneration),
        exclude_source_doc: Some(true),
        runs_dir: Some(out.join("runs")),
        ..RawConfig::default()
    };
    let config = ragfair::pipeline::resolve(raw, &out, false)?;
    let outcome = run_audit(config)?;
    let report = &outcome.report;

    println!("run directory: {}", outcome.run_dir.display());
    println!("queries: {}", report.num_queries);
    let bm25 = report.retriever("bm25").expect("bm25 section");
    let coverage = bm25.category("Coverage").expect("Coverage section");
    for (name, vector) in [
        ("AC_rag", &coverage.ac_rag),
        ("AC_llm", &coverage.ac_llm),
        ("dAC", &coverage.delta_ac),
        ("U_hat", &coverage.u_hat),
        ("A_hat", &coverage.a_hat),
    ] {
        let cells: Vec<String> = vector
            .entries
            .iter()
            .map(|e| match e.value {
                Some(v) => format!("{}={v:.3}", e.group),
                None => format!("{}=n/a", e.group),
            })
            .collect();
        println!("{name:>7}: {}", cells.join("  "));
    }
    for stat in report.correlations.iter().filter(|s| s.category == "Coverage") {
        println!(
            "rho({:?}, {:?}) = {}",
            stat.factor,
            stat.target,
            stat.averaged.map_or("undefined".to_string(), |v| format!("{v:.3}"))
        );
    }
    Ok(())
}
