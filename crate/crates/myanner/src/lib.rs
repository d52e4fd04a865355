//! Syllable-level named entity recognition for Myanmar text.
//!
//! The crate is organised in layers:
//!
//! - [`syllable`] — Unicode character classification and rule-based syllable
//!   segmentation, the tokenisation unit everything else works on.
//! - [`corpus`] — CoNLL-style data files, IOBES/IOB2 span codecs, chunk-level
//!   precision/recall/F1 scoring, vocabularies and a synthetic corpus
//!   generator for desk-scale experiments.
//! - [`tensor`] — a minimal dense f64 tensor with tape-based reverse-mode
//!   automatic differentiation.
//! - [`layers`] — LSTM cell, bidirectional LSTM, character CNN / BiLSTM
//!   encoders and input-representation assembly.
//! - [`crf`] — linear-chain CRF scoring, forward log-partition, negative
//!   log-likelihood and Viterbi decoding, shared by the neural taggers and
//!   the sparse-feature baseline.
//! - [`model`] — complete taggers (BiLSTM / BiLSTM-CRF with optional char
//!   encoders, sparse-feature CRF baseline) and model (de)serialization.
//! - [`train`] — SGD/Adam optimizers, learning-rate schedule, the training
//!   loop with early stopping, pretrained-embedding loading and the
//!   key=value config format.

pub mod corpus;
pub mod crf;
pub mod layers;
pub mod model;
pub mod syllable;
pub mod tensor;
pub mod train;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
