//! The neural tagger: input representation -> BiLSTM -> projection ->
//! softmax or CRF head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CharEncoderKind, HeadKind, StepCtx, TaggerConfig, TrainableModel};
use crate::corpus::{Alphabets, LabeledSentence, Scheme, UNK_INDEX};
use crate::crf::{self, CrfParams, EmissionMatrix, TransitionMask};
use crate::layers::{
    bilstm, build_input_repr, init_bound, CharCnnParams, CharEncoderVars, EmbeddingParams,
    LstmCellParams,
};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct NeuralParams {
    pub syl_emb: EmbeddingParams,
    pub char_emb: Option<EmbeddingParams>,
    pub char_cnn: Option<CharCnnParams>,
    pub char_fwd: Option<LstmCellParams>,
    pub char_bwd: Option<LstmCellParams>,
    pub fwd: LstmCellParams,
    pub bwd: LstmCellParams,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub trans: Option<ParamId>,
}

/// A complete syllable tagger with trained (or trainable) parameters.
pub struct NeuralTagger {
    pub cfg: TaggerConfig,
    pub alphabets: Alphabets,
    pub(crate) store: ParamStore,
    pub(crate) params: NeuralParams,
    mask: Option<TransitionMask>,
}

impl NeuralTagger {
    pub fn new(cfg: TaggerConfig, alphabets: Alphabets, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let n_labels = alphabets.n_labels();
        if n_labels == 0 {
            return Err(Error::data("tagger needs at least one label"));
        }
        let mut store = ParamStore::new();
        let syl_emb = EmbeddingParams::init(
            &mut store,
            "syl_emb",
            alphabets.syllables.len(),
            cfg.d_syl,
            rng,
        );
        let (char_emb, char_cnn, char_fwd, char_bwd) = match cfg.char_encoder {
            CharEncoderKind::None => (None, None, None, None),
            CharEncoderKind::Cnn => {
                let emb = EmbeddingParams::init(
                    &mut store,
                    "char_emb",
                    alphabets.chars.len(),
                    cfg.d_char,
                    rng,
                );
                let cnn = CharCnnParams::init(
                    &mut store,
                    "char_cnn",
                    cfg.n_filters,
                    cfg.window,
                    cfg.d_char,
                    rng,
                )?;
                (Some(emb), Some(cnn), None, None)
            }
            CharEncoderKind::Lstm => {
                let emb = EmbeddingParams::init(
                    &mut store,
                    "char_emb",
                    alphabets.chars.len(),
                    cfg.d_char,
                    rng,
                );
                let d_hc = cfg.char_hidden / 2;
                let fwd = LstmCellParams::init(&mut store, "char_fwd", cfg.d_char, d_hc, rng);
                let bwd = LstmCellParams::init(&mut store, "char_bwd", cfg.d_char, d_hc, rng);
                (Some(emb), None, Some(fwd), Some(bwd))
            }
        };
        let d_in = cfg.d_syl
            + match cfg.char_encoder {
                CharEncoderKind::None => 0,
                CharEncoderKind::Cnn => cfg.n_filters,
                CharEncoderKind::Lstm => cfg.char_hidden,
            };
        let d_h = cfg.hidden_total / 2;
        let fwd = LstmCellParams::init(&mut store, "lstm_fwd", d_in, d_h, rng);
        let bwd = LstmCellParams::init(&mut store, "lstm_bwd", d_in, d_h, rng);
        let bound = init_bound(cfg.hidden_total);
        let proj_w = store.add(
            "proj_w",
            Tensor::uniform(&[cfg.hidden_total, n_labels], -bound, bound, rng),
        );
        let proj_b = store.add("proj_b", Tensor::zeros(&[n_labels]));
        let trans = match cfg.head {
            HeadKind::Crf => Some(store.add("trans", CrfParams::new_zero(n_labels).trans().clone())),
            HeadKind::Softmax => None,
        };
        let mask = if cfg.decode_mask {
            Some(crf::transition_mask(&alphabets.labels, Scheme::Iobes)?)
        } else {
            None
        };
        Ok(NeuralTagger {
            cfg,
            alphabets,
            store,
            params: NeuralParams {
                syl_emb,
                char_emb,
                char_cnn,
                char_fwd,
                char_bwd,
                fwd,
                bwd,
                proj_w,
                proj_b,
                trans,
            },
            mask,
        })
    }

    /// Replace the syllable embedding table (pretrained embeddings). The
    /// padding row is forced back to zero.
    pub fn set_syllable_embeddings(&mut self, mut table: Tensor) -> Result<()> {
        let expect = [self.alphabets.syllables.len(), self.cfg.d_syl];
        if table.shape() != expect {
            return Err(Error::shape(format!(
                "embedding table {:?}, expected {:?}",
                table.shape(),
                expect
            )));
        }
        for j in 0..self.cfg.d_syl {
            table.set2(0, j, 0.0);
        }
        *self.store.value_mut(self.params.syl_emb.table) = table;
        Ok(())
    }

    fn token_ids(&self, tokens: &[String], ctx: &mut StepCtx) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| {
                let id = self.alphabets.syllables.lookup(t);
                if ctx.training
                    && ctx.singleton_unk_prob > 0.0
                    && self.alphabets.syllables.is_singleton(id)
                    && ctx.rng.random::<f64>() < ctx.singleton_unk_prob
                {
                    UNK_INDEX
                } else {
                    id
                }
            })
            .collect()
    }

    /// Record the per-position emission rows for one sentence.
    fn emission_rows(
        &self,
        tape: &mut Tape,
        bound: &BoundVars,
        tokens: &[String],
        ctx: &mut StepCtx,
    ) -> Result<Vec<Var>> {
        let syl_ids = self.token_ids(tokens, ctx);
        let char_ids: Vec<Vec<usize>> = tokens.iter().map(|t| self.alphabets.char_ids(t)).collect();
        let encoder = match (&bound.char_emb, &bound.char_cnn, &bound.char_lstm) {
            (Some(emb), Some(cnn), _) => CharEncoderVars::Cnn { emb: *emb, cnn },
            (Some(emb), None, Some((fwd, bwd))) => CharEncoderVars::Lstm {
                emb: *emb,
                fwd,
                bwd,
            },
            _ => CharEncoderVars::None,
        };
        let mut reprs = build_input_repr(
            tape,
            bound.syl_emb,
            &syl_ids,
            &char_ids,
            &encoder,
            self.cfg.dropout,
            ctx.training,
            ctx.rng,
        )?;
        if self.cfg.char_dropout && ctx.training {
            for repr in &mut reprs {
                *repr = tape.dropout(*repr, self.cfg.dropout, true, ctx.rng)?;
            }
        }
        let hidden = bilstm(tape, &reprs, &bound.fwd, &bound.bwd)?;
        hidden
            .into_iter()
            .map(|h| {
                let dropped = tape.dropout(h, self.cfg.dropout, ctx.training, ctx.rng)?;
                let projected = tape.vecmat(dropped, bound.proj_w)?;
                tape.add(projected, bound.proj_b)
            })
            .collect()
    }

    fn bind(&self, tape: &mut Tape, store: &ParamStore) -> BoundVars {
        let p = &self.params;
        BoundVars {
            syl_emb: tape.param(store, p.syl_emb.table),
            char_emb: p.char_emb.as_ref().map(|e| tape.param(store, e.table)),
            char_cnn: p.char_cnn.as_ref().map(|c| c.bind(tape, store)),
            char_lstm: match (&p.char_fwd, &p.char_bwd) {
                (Some(f), Some(b)) => Some((f.bind(tape, store), b.bind(tape, store))),
                _ => None,
            },
            fwd: p.fwd.bind(tape, store),
            bwd: p.bwd.bind(tape, store),
            proj_w: tape.param(store, p.proj_w),
            proj_b: tape.param(store, p.proj_b),
            trans: p.trans.map(|t| tape.param(store, t)),
        }
    }

    /// Like [`TrainableModel::loss_on_tape`] but reading parameters from an
    /// external store with this model's layout. This is what gradient
    /// checking perturbs.
    pub fn loss_with_store(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        batch: &[LabeledSentence],
        ctx: &mut StepCtx,
    ) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::data("loss over an empty batch"));
        }
        let bound = self.bind(tape, store);
        let mut total: Option<Var> = None;
        for sentence in batch {
            let loss = self.sentence_loss(tape, &bound, sentence, ctx)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, loss)?,
                None => loss,
            });
        }
        Ok(tape.scale(total.unwrap(), 1.0 / batch.len() as f64))
    }

    fn gold_ids(&self, sentence: &LabeledSentence) -> Result<Vec<usize>> {
        sentence
            .labels
            .iter()
            .map(|l| {
                self.alphabets
                    .label_id(l)
                    .ok_or_else(|| Error::data(format!("label {l:?} not in training label set")))
            })
            .collect()
    }

    fn sentence_loss(
        &self,
        tape: &mut Tape,
        bound: &BoundVars,
        sentence: &LabeledSentence,
        ctx: &mut StepCtx,
    ) -> Result<Var> {
        let gold = self.gold_ids(sentence)?;
        let rows = self.emission_rows(tape, bound, &sentence.tokens, ctx)?;
        match self.cfg.head {
            HeadKind::Crf => {
                let trans = bound.trans.expect("crf head has transitions");
                let train_mask = if ctx.train_mask {
                    self.mask.as_ref()
                } else {
                    None
                };
                crf::nll_on_tape(
                    tape,
                    &rows,
                    trans,
                    &gold,
                    self.alphabets.n_labels(),
                    train_mask,
                )
            }
            HeadKind::Softmax => {
                let mut token_losses = Vec::with_capacity(rows.len());
                for (row, &g) in rows.iter().zip(&gold) {
                    let lse = tape.log_sum_exp(*row)?;
                    let picked = tape.gather1(*row, &[g])?;
                    token_losses.push(tape.sub(lse, picked)?);
                }
                let all = tape.concat(&token_losses)?;
                Ok(tape.sum_all(all))
            }
        }
    }

    /// Emission matrix of a sentence under eval mode (plain values).
    pub fn emissions(&self, tokens: &[String]) -> Result<EmissionMatrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = StepCtx::eval(&mut rng);
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, &self.store);
        let rows = self.emission_rows(&mut tape, &bound, tokens, &mut ctx)?;
        let row_values: Vec<Vec<f64>> = rows
            .iter()
            .map(|&r| tape.value(r).data().to_vec())
            .collect();
        EmissionMatrix::from_rows(&row_values)
    }

    pub fn crf_params(&self) -> Option<CrfParams> {
        self.params.trans.map(|t| {
            CrfParams::from_tensor(self.store.value(t).clone(), self.alphabets.n_labels())
                .expect("stored transition shape")
        })
    }
}

struct BoundVars {
    syl_emb: Var,
    char_emb: Option<Var>,
    char_cnn: Option<crate::layers::CharCnnVars>,
    char_lstm: Option<(crate::layers::LstmCellVars, crate::layers::LstmCellVars)>,
    fwd: crate::layers::LstmCellVars,
    bwd: crate::layers::LstmCellVars,
    proj_w: Var,
    proj_b: Var,
    trans: Option<Var>,
}

impl TrainableModel for NeuralTagger {
    fn loss_on_tape(
        &self,
        tape: &mut Tape,
        batch: &[LabeledSentence],
        ctx: &mut StepCtx,
    ) -> Result<Var> {
        self.loss_with_store(&self.store, tape, batch, ctx)
    }

    fn predict(&self, tokens: &[String]) -> Vec<String> {
        if tokens.is_empty() {
            return Vec::new();
        }
        let emissions = match self.emissions(tokens) {
            Ok(e) => e,
            Err(_) => return vec!["O".to_string(); tokens.len()],
        };
        let ids: Vec<usize> = match self.cfg.head {
            HeadKind::Crf => {
                let params = self.crf_params().expect("crf head has transitions");
                let (path, _) = crf::viterbi_decode(&emissions, &params, self.mask.as_ref())
                    .expect("emission matrix is consistent by construction");
                path
            }
            HeadKind::Softmax => (0..emissions.n_tokens())
                .map(|i| {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_j = 0;
                    for j in 0..emissions.n_labels() {
                        let v = emissions.at(i, j);
                        if v > best {
                            best = v;
                            best_j = j;
                        }
                    }
                    best_j
                })
                .collect(),
        };
        ids.iter()
            .map(|&i| self.alphabets.labels[i].clone())
            .collect()
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn frozen_rows(&self) -> Vec<(ParamId, usize)> {
        let mut rows = vec![(self.params.syl_emb.table, 0)];
        if let Some(emb) = &self.params.char_emb {
            rows.push((emb.table, 0));
        }
        rows
    }
}
