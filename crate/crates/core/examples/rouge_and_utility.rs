//! Scores outputs with ROUGE-L and turns a pair of scores into a document
//! utility.
//!
//! Run with `cargo run --example rouge_and_utility`.

use ragfair::metrics::{doc_utility, lcs_length, rouge_l, rouge_l_with, RougeVariant};
use ragfair::tokenize::tokenize;

fn main() {
    let reference = "Leith is the port district of Edinburgh";
    let llm_only = "Leith is a town";
    let with_doc = "Leith is the port of Edinburgh";

    let (c, r) = (tokenize(with_doc), tokenize(reference));
    println!("LCS tokens: {}", lcs_length(&c, &r));
    for variant in [RougeVariant::F1, RougeVariant::Recall, RougeVariant::Precision] {
        println!("ROUGE-L {variant:?}: {:.2}", rouge_l_with(with_doc, reference, variant));
    }

    let e1 = rouge_l(llm_only, reference);
    let e2 = rouge_l(with_doc, reference);
    println!("LLM-only {e1:.2}, single document {e2:.2}, utility {:.2}", doc_utility(e1, e2));
    println!("a harmful document has utility {:.2}", doc_utility(e2, e1));
}
