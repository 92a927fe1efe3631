//! The single tokenizer shared by the index, ROUGE-L and the mock oracles.
//!
//! Text is lowercased and split on every non-alphanumeric character. There is
//! no stemming and no stopword list.

/// Lowercased alphanumeric tokens of `text`, in order.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Whitespace-delimited word count, used for the corpus length filter.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}
