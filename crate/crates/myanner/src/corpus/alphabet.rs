//! Vocabularies built from training data.

use std::collections::HashMap;

use super::LabeledSentence;
use crate::{Error, Result};

/// Reserved index for padding (embedding row pinned to zero).
pub const PAD_INDEX: usize = 0;
/// Reserved index for unknown items.
pub const UNK_INDEX: usize = 1;

/// An indexed vocabulary with reserved pad/unk entries and training-time
/// frequency counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    items: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<usize>,
}

impl Vocab {
    pub(crate) fn with_reserved() -> Vocab {
        let items = vec!["<pad>".to_string(), "<unk>".to_string()];
        let index = items
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Vocab {
            items,
            index,
            counts: vec![0, 0],
        }
    }

    pub(crate) fn observe(&mut self, item: &str) {
        match self.index.get(item) {
            Some(&i) => self.counts[i] += 1,
            None => {
                self.index.insert(item.to_string(), self.items.len());
                self.items.push(item.to_string());
                self.counts.push(1);
            }
        }
    }

    /// Rebuild from a serialized item list (counts unknown, set to zero).
    pub(crate) fn from_items(items: Vec<String>) -> Result<Vocab> {
        if items.len() < 2 || items[0] != "<pad>" || items[1] != "<unk>" {
            return Err(Error::data("vocabulary must start with <pad>, <unk>"));
        }
        let index = items
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        let counts = vec![0; items.len()];
        Ok(Vocab {
            items,
            index,
            counts,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Index of an item, falling back to [`UNK_INDEX`].
    pub fn lookup(&self, item: &str) -> usize {
        self.index.get(item).copied().unwrap_or(UNK_INDEX)
    }

    pub fn contains(&self, item: &str) -> bool {
        self.index.contains_key(item)
    }

    pub fn item(&self, i: usize) -> &str {
        &self.items[i]
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    /// Training-time frequency of the item at index `i`.
    pub fn count(&self, i: usize) -> usize {
        self.counts[i]
    }

    /// Whether the item at index `i` occurred exactly once in training.
    pub fn is_singleton(&self, i: usize) -> bool {
        self.counts.get(i).copied() == Some(1)
    }
}

/// Syllable vocabulary, character vocabulary and the closed label set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabets {
    pub syllables: Vocab,
    pub chars: Vocab,
    /// Sorted, deduplicated label strings seen in training.
    pub labels: Vec<String>,
}

impl Alphabets {
    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    /// Character indices of one syllable token.
    pub fn char_ids(&self, token: &str) -> Vec<usize> {
        token
            .chars()
            .map(|c| self.chars.lookup(&c.to_string()))
            .collect()
    }
}

/// Build vocabularies from a non-empty training set. Indices 0 and 1 of the
/// syllable and character vocabularies are reserved for padding and unknown;
/// the label set is closed over the training labels and sorted.
pub fn build_alphabets(train: &[LabeledSentence]) -> Result<Alphabets> {
    if train.is_empty() {
        return Err(Error::data("cannot build alphabets from an empty corpus"));
    }
    let mut syllables = Vocab::with_reserved();
    let mut chars = Vocab::with_reserved();
    let mut labels: Vec<String> = Vec::new();
    for sentence in train {
        for token in &sentence.tokens {
            syllables.observe(token);
            for c in token.chars() {
                chars.observe(&c.to_string());
            }
        }
        for label in &sentence.labels {
            if !labels.contains(label) {
                labels.push(label.clone());
            }
        }
    }
    labels.sort();
    Ok(Alphabets {
        syllables,
        chars,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sentence_vocab_size() {
        let train = vec![LabeledSentence::new(
            vec![
                "\u{101B}\u{1014}\u{103A}".to_string(),
                "\u{1000}\u{102F}\u{1014}\u{103A}".to_string(),
            ],
            vec!["B-LOC".to_string(), "E-LOC".to_string()],
        )
        .unwrap()];
        let alphabets = build_alphabets(&train).unwrap();
        // pad, unk, and the two syllables
        assert_eq!(alphabets.syllables.len(), 4);
        assert_eq!(alphabets.labels, vec!["B-LOC", "E-LOC"]);
    }

    #[test]
    fn unseen_items_map_to_unk() {
        let train = vec![LabeledSentence::new(
            vec!["a".to_string()],
            vec!["O".to_string()],
        )
        .unwrap()];
        let alphabets = build_alphabets(&train).unwrap();
        assert_eq!(alphabets.syllables.lookup("zzz"), UNK_INDEX);
        assert_eq!(alphabets.syllables.lookup("a"), 2);
    }

    #[test]
    fn char_vocab_covers_all_training_scalars() {
        let train = vec![LabeledSentence::new(
            vec!["\u{1014}\u{102D}".to_string(), "\u{1004}\u{1036}".to_string()],
            vec!["O".to_string(), "O".to_string()],
        )
        .unwrap()];
        let alphabets = build_alphabets(&train).unwrap();
        for c in ['\u{1014}', '\u{102D}', '\u{1004}', '\u{1036}'] {
            assert!(alphabets.chars.contains(&c.to_string()), "{c} missing");
        }
    }

    #[test]
    fn frequency_counts_and_singletons() {
        let train = vec![LabeledSentence::new(
            vec!["a".to_string(), "a".to_string(), "b".to_string()],
            vec!["O".to_string(); 3],
        )
        .unwrap()];
        let alphabets = build_alphabets(&train).unwrap();
        let a = alphabets.syllables.lookup("a");
        let b = alphabets.syllables.lookup("b");
        assert_eq!(alphabets.syllables.count(a), 2);
        assert!(!alphabets.syllables.is_singleton(a));
        assert!(alphabets.syllables.is_singleton(b));
    }

    #[test]
    fn empty_training_set_errors() {
        assert!(build_alphabets(&[]).is_err());
    }
}
