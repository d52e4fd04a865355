//! Complete taggers: BiLSTM / BiLSTM-CRF with optional character encoders,
//! the sparse-feature CRF baseline, and model file (de)serialization.

mod neural;
mod serialize;
mod sparse;

pub use neural::NeuralTagger;
pub use serialize::{load_model, save_model, FloatDtype, LoadedModel, ModelRef};
pub use sparse::{baseline_train, extract_features, FeatureTemplate, Gazetteer, SparseCrfModel};

use std::str::FromStr;

use rand_chacha::ChaCha8Rng;

use crate::corpus::LabeledSentence;
use crate::tensor::{ParamId, ParamStore, Tape, Var};
use crate::{Error, Result};

/// Character-level encoder choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CharEncoderKind {
    None,
    Cnn,
    Lstm,
}

impl CharEncoderKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CharEncoderKind::None => "none",
            CharEncoderKind::Cnn => "cnn",
            CharEncoderKind::Lstm => "lstm",
        }
    }
}

impl FromStr for CharEncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<CharEncoderKind> {
        match s {
            "none" => Ok(CharEncoderKind::None),
            "cnn" => Ok(CharEncoderKind::Cnn),
            "lstm" => Ok(CharEncoderKind::Lstm),
            other => Err(Error::Config(format!("unknown char encoder {other:?}"))),
        }
    }
}

/// Output head: independent per-token softmax or a CRF layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Softmax,
    Crf,
}

impl HeadKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            HeadKind::Softmax => "softmax",
            HeadKind::Crf => "crf",
        }
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<HeadKind> {
        match s {
            "softmax" => Ok(HeadKind::Softmax),
            "crf" => Ok(HeadKind::Crf),
            other => Err(Error::Config(format!("unknown head {other:?}"))),
        }
    }
}

/// Architecture and inference settings of a neural tagger.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggerConfig {
    pub char_encoder: CharEncoderKind,
    pub head: HeadKind,
    /// Syllable embedding dimension.
    pub d_syl: usize,
    /// Character embedding dimension.
    pub d_char: usize,
    /// Character CNN filters.
    pub n_filters: usize,
    /// Character CNN window (odd).
    pub window: usize,
    /// Total character BiLSTM hidden size (both directions).
    pub char_hidden: usize,
    /// Total sentence BiLSTM output size (both directions).
    pub hidden_total: usize,
    pub dropout: f64,
    /// Apply dropout to the character feature as well (off by default).
    pub char_dropout: bool,
    /// Constrain decoding to scheme-legal transitions.
    pub decode_mask: bool,
}

impl Default for TaggerConfig {
    fn default() -> TaggerConfig {
        TaggerConfig {
            char_encoder: CharEncoderKind::Cnn,
            head: HeadKind::Crf,
            d_syl: 100,
            d_char: 100,
            n_filters: 50,
            window: 3,
            char_hidden: 50,
            hidden_total: 200,
            dropout: 0.5,
            char_dropout: false,
            decode_mask: true,
        }
    }
}

impl TaggerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_syl == 0 || self.d_char == 0 {
            return Err(Error::Config(
                "embedding dimensions must be positive".to_string(),
            ));
        }
        if self.hidden_total == 0 || self.hidden_total % 2 != 0 {
            return Err(Error::Config(format!(
                "hidden_total must be positive and even, got {}",
                self.hidden_total
            )));
        }
        if self.char_hidden == 0 || self.char_hidden % 2 != 0 {
            return Err(Error::Config(format!(
                "char_hidden must be positive and even, got {}",
                self.char_hidden
            )));
        }
        if self.n_filters == 0 || self.window % 2 == 0 {
            return Err(Error::Config(
                "char CNN needs at least one filter and an odd window".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0,1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Per-step context the training loop hands to a model's forward pass.
pub struct StepCtx<'a> {
    pub training: bool,
    /// Probability of replacing a frequency-1 syllable with UNK (training
    /// only; 0 disables).
    pub singleton_unk_prob: f64,
    /// Apply the transition legality mask during training as well.
    pub train_mask: bool,
    pub rng: &'a mut ChaCha8Rng,
}

impl<'a> StepCtx<'a> {
    pub fn eval(rng: &'a mut ChaCha8Rng) -> StepCtx<'a> {
        StepCtx {
            training: false,
            singleton_unk_prob: 0.0,
            train_mask: false,
            rng,
        }
    }
}

/// What the training loop needs from a model.
pub trait TrainableModel {
    /// Record the mean per-sentence loss of a batch on the tape.
    fn loss_on_tape(
        &self,
        tape: &mut Tape,
        batch: &[LabeledSentence],
        ctx: &mut StepCtx,
    ) -> Result<Var>;

    /// Decode one sentence (eval mode). Empty input gives empty labels.
    fn predict(&self, tokens: &[String]) -> Vec<String>;

    fn store(&self) -> &ParamStore;

    fn store_mut(&mut self) -> &mut ParamStore;

    /// Rows whose gradients are zeroed before every optimizer step
    /// (embedding padding rows).
    fn frozen_rows(&self) -> Vec<(ParamId, usize)>;
}
