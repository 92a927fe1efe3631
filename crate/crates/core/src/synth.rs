//! Deterministic synthetic corpora for desk-scale audits.
//!
//! Every document carries one marker token per category naming its group
//! (`<category-slug>g<index>`), in both title and body. Bodies are a fixed
//! length: the markers, then a prefix of a shared answer sequence, then
//! noise words. A [`BiasSpec`] sets the answer share per group of one
//! category, which lets tests plant a known utility gap between groups.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{validate_categories, Document, FairnessCategory};
use crate::error::{Error, Result};

const NAME_SYLLABLES: [&str; 20] = [
    "ka", "lo", "mi", "ra", "ten", "vor", "sa", "bel", "dun", "fi", "gar", "hol", "ith", "jo", "kel",
    "mor", "nad", "pel", "quin", "tor",
];
const NOISE_SYLLABLES: [&str; 16] = [
    "zu", "xe", "wy", "qo", "ux", "yv", "zo", "xa", "wex", "qua", "zy", "xor", "wul", "qi", "yz", "zeb",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSpec {
    pub category: String,
    /// Fraction of each body (after markers) taken from the answer sequence,
    /// one entry per group of `category`.
    pub answer_share: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_docs: usize,
    pub topic: String,
    pub categories: Vec<FairnessCategory>,
    pub seed: u64,
    #[serde(default = "default_body_words")]
    pub body_words: usize,
    /// Answer share for every document when no bias is set.
    #[serde(default = "default_share")]
    pub default_answer_share: f64,
    #[serde(default)]
    pub bias: Option<BiasSpec>,
}

fn default_body_words() -> usize {
    40
}

fn default_share() -> f64 {
    0.5
}

impl SynthSpec {
    pub fn balanced(num_docs: usize, topic: &str, categories: Vec<FairnessCategory>, seed: u64) -> Self {
        SynthSpec {
            num_docs,
            topic: topic.to_string(),
            categories,
            seed,
            body_words: default_body_words(),
            default_answer_share: default_share(),
            bias: None,
        }
    }

    pub fn with_bias(mut self, category: &str, answer_share: Vec<f64>) -> Self {
        self.bias = Some(BiasSpec {
            category: category.to_string(),
            answer_share,
        });
        self
    }

    fn num_cells(&self) -> usize {
        self.categories.iter().map(|c| c.groups.len()).product()
    }

    fn validate(&self) -> Result<()> {
        validate_categories(&self.categories).map_err(|e| Error::Infeasible(e.to_string()))?;
        if self.categories.is_empty() {
            return Err(Error::Infeasible("no categories".into()));
        }
        if self.topic.trim().is_empty() {
            return Err(Error::Infeasible("empty topic".into()));
        }
        let cells = self.num_cells();
        if self.num_docs < cells {
            return Err(Error::Infeasible(format!(
                "{} documents cannot cover {cells} group combinations",
                self.num_docs
            )));
        }
        let markers = self.categories.len();
        if self.body_words <= markers {
            return Err(Error::Infeasible(format!(
                "body of {} words leaves no room after {markers} markers",
                self.body_words
            )));
        }
        let check_share = |s: f64| {
            if (0.0..=1.0).contains(&s) {
                Ok(())
            } else {
                Err(Error::Infeasible(format!("answer share {s} outside [0, 1]")))
            }
        };
        check_share(self.default_answer_share)?;
        if let Some(bias) = &self.bias {
            let cat = self
                .categories
                .iter()
                .find(|c| c.name == bias.category)
                .ok_or_else(|| Error::Infeasible(format!("unknown bias category {:?}", bias.category)))?;
            if bias.answer_share.len() != cat.groups.len() {
                return Err(Error::Infeasible(format!(
                    "{} answer shares for {} groups",
                    bias.answer_share.len(),
                    cat.groups.len()
                )));
            }
            bias.answer_share.iter().try_for_each(|&s| check_share(s))?;
        }
        Ok(())
    }
}

/// Marker token for group `index` of `category`.
pub fn marker_token(category: &FairnessCategory, index: usize) -> String {
    let slug: String = category
        .name
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect();
    format!("{slug}g{index}")
}

/// The shared answer vocabulary, in order.
pub fn answer_sequence(len: usize) -> Vec<String> {
    (0..len).map(|i| format!("answer{i}")).collect()
}

fn pseudo_word(rng: &mut ChaCha8Rng, syllables: &[&str], n: usize) -> String {
    (0..n).map(|_| syllables[rng.random_range(0..syllables.len())]).collect()
}

/// Builds the corpus described by `spec`. Cells receive `num_docs / cells`
/// documents each, with the remainder going to the first cells in
/// mixed-radix order. Document ids are shuffled across cells.
pub fn generate_synthetic_corpus(spec: &SynthSpec) -> Result<Vec<Document>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cells = spec.num_cells();
    let base = spec.num_docs / cells;
    let extra = spec.num_docs % cells;

    let mut ids: Vec<usize> = (0..spec.num_docs).collect();
    ids.shuffle(&mut rng);
    let width = spec.num_docs.to_string().len().max(4);

    let noise_vocab: Vec<String> = (0..2000).map(|_| pseudo_word(&mut rng, &NOISE_SYLLABLES, 3)).collect();
    let bias_pos = spec
        .bias
        .as_ref()
        .and_then(|b| spec.categories.iter().position(|c| c.name == b.category));
    let content_len = spec.body_words - spec.categories.len();
    let answers = answer_sequence(content_len);

    let mut names = HashSet::new();
    let mut docs = Vec::with_capacity(spec.num_docs);
    let mut next = 0;
    for cell_index in 0..cells {
        let mut cell = Vec::with_capacity(spec.categories.len());
        let mut rest = cell_index;
        for c in spec.categories.iter().rev() {
            cell.push(rest % c.groups.len());
            rest /= c.groups.len();
        }
        cell.reverse();

        let markers: Vec<String> = spec
            .categories
            .iter()
            .zip(&cell)
            .map(|(c, &g)| marker_token(c, g))
            .collect();
        let labels: BTreeMap<String, String> = spec
            .categories
            .iter()
            .zip(&cell)
            .map(|(c, &g)| (c.name.clone(), c.groups[g].clone()))
            .collect();
        let share = match (bias_pos, &spec.bias) {
            (Some(p), Some(b)) => b.answer_share[cell[p]],
            _ => spec.default_answer_share,
        };
        let answer_len = (share * content_len as f64).round() as usize;

        let count = base + usize::from(cell_index < extra);
        for _ in 0..count {
            let name = loop {
                let mut n = pseudo_word(&mut rng, &NAME_SYLLABLES, 3);
                if let Some(first) = n.get_mut(0..1) {
                    first.make_ascii_uppercase();
                }
                if names.insert(n.clone()) {
                    break n;
                }
            };
            let mut body: Vec<&str> = markers.iter().map(String::as_str).collect();
            body.extend(answers[..answer_len].iter().map(String::as_str));
            for _ in answer_len..content_len {
                body.push(&noise_vocab[rng.random_range(0..noise_vocab.len())]);
            }
            docs.push(Document::new(
                format!("doc{:0width$}", ids[next]),
                format!("{name} {}", markers.join(" ")),
                body.join(" "),
                spec.topic.clone(),
                labels.clone(),
            ));
            next += 1;
        }
    }
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok(docs)
}
