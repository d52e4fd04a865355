//! Labeled data, tagging-scheme codecs, chunk-level scoring, vocabularies
//! and the synthetic corpus generator.

mod alphabet;
mod conll;
pub(crate) mod labels;
mod metrics;
mod synth;

pub use alphabet::{build_alphabets, Alphabets, Vocab, PAD_INDEX, UNK_INDEX};
pub use conll::{read_conll, read_token_lines, write_conll};
pub use labels::{
    convert_scheme, labels_to_spans, spans_to_labels, validate_labels, EntitySpan, LabelViolation,
    NeType, Scheme,
};
pub use metrics::{evaluate, Metrics, PrfCounts};
pub use synth::generate_synthetic_corpus;

use crate::{Error, Result};

/// One sentence of syllable tokens with one label per token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSentence {
    pub tokens: Vec<String>,
    pub labels: Vec<String>,
}

impl LabeledSentence {
    pub fn new(tokens: Vec<String>, labels: Vec<String>) -> Result<LabeledSentence> {
        if tokens.is_empty() {
            return Err(Error::data("sentence must have at least one token"));
        }
        if tokens.len() != labels.len() {
            return Err(Error::data(format!(
                "{} tokens but {} labels",
                tokens.len(),
                labels.len()
            )));
        }
        Ok(LabeledSentence { tokens, labels })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}
