//! Neural building blocks: LSTM cell, bidirectional LSTM over a sequence,
//! character-level CNN and BiLSTM encoders, and input-representation
//! assembly (syllable embedding, optional character feature, dropout).

use rand::Rng;

use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

/// Uniform initialization bound `sqrt(3/d)` over the fan-in.
pub fn init_bound(fan_in: usize) -> f64 {
    (3.0 / fan_in as f64).sqrt()
}

/// Embedding table parameter. Row 0 is the padding row, pinned at zero and
/// kept frozen through training.
#[derive(Debug, Clone)]
pub struct EmbeddingParams {
    pub table: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
}

impl EmbeddingParams {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        vocab_size: usize,
        dim: usize,
        rng: &mut impl Rng,
    ) -> EmbeddingParams {
        let bound = init_bound(dim);
        let mut table = Tensor::uniform(&[vocab_size, dim], -bound, bound, rng);
        for j in 0..dim {
            table.set2(0, j, 0.0);
        }
        EmbeddingParams {
            table: store.add(name, table),
            vocab_size,
            dim,
        }
    }
}

/// The twelve tensors of one LSTM cell: per-gate input and recurrent
/// weights plus biases for the input, forget and output gates and the cell
/// candidate.
#[derive(Debug, Clone)]
pub struct LstmCellParams {
    pub w_xi: ParamId,
    pub w_xf: ParamId,
    pub w_xo: ParamId,
    pub w_xc: ParamId,
    pub w_hi: ParamId,
    pub w_hf: ParamId,
    pub w_ho: ParamId,
    pub w_hc: ParamId,
    pub b_i: ParamId,
    pub b_f: ParamId,
    pub b_o: ParamId,
    pub b_c: ParamId,
    pub d_in: usize,
    pub d_h: usize,
}

impl LstmCellParams {
    /// Weights uniform in `±sqrt(3/fan_in)`, biases zero except the forget
    /// gate bias at +1.
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_h: usize,
        rng: &mut impl Rng,
    ) -> LstmCellParams {
        let bx = init_bound(d_in);
        let bh = init_bound(d_h);
        fn weight(
            store: &mut ParamStore,
            name: String,
            shape: &[usize],
            bound: f64,
            rng: &mut impl Rng,
        ) -> ParamId {
            store.add(name, Tensor::uniform(shape, -bound, bound, rng))
        }
        let xs = [d_in, d_h];
        let w_xi = weight(store, format!("{prefix}.w_xi"), &xs, bx, rng);
        let w_xf = weight(store, format!("{prefix}.w_xf"), &xs, bx, rng);
        let w_xo = weight(store, format!("{prefix}.w_xo"), &xs, bx, rng);
        let w_xc = weight(store, format!("{prefix}.w_xc"), &xs, bx, rng);
        let hs = [d_h, d_h];
        let w_hi = weight(store, format!("{prefix}.w_hi"), &hs, bh, rng);
        let w_hf = weight(store, format!("{prefix}.w_hf"), &hs, bh, rng);
        let w_ho = weight(store, format!("{prefix}.w_ho"), &hs, bh, rng);
        let w_hc = weight(store, format!("{prefix}.w_hc"), &hs, bh, rng);
        let b_i = store.add(format!("{prefix}.b_i"), Tensor::zeros(&[d_h]));
        let b_f = store.add(
            format!("{prefix}.b_f"),
            Tensor::from_vec(&[d_h], vec![1.0; d_h]).expect("bias shape"),
        );
        let b_o = store.add(format!("{prefix}.b_o"), Tensor::zeros(&[d_h]));
        let b_c = store.add(format!("{prefix}.b_c"), Tensor::zeros(&[d_h]));
        LstmCellParams {
            w_xi,
            w_xf,
            w_xo,
            w_xc,
            w_hi,
            w_hf,
            w_ho,
            w_hc,
            b_i,
            b_f,
            b_o,
            b_c,
            d_in,
            d_h,
        }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> LstmCellVars {
        LstmCellVars {
            w_xi: tape.param(store, self.w_xi),
            w_xf: tape.param(store, self.w_xf),
            w_xo: tape.param(store, self.w_xo),
            w_xc: tape.param(store, self.w_xc),
            w_hi: tape.param(store, self.w_hi),
            w_hf: tape.param(store, self.w_hf),
            w_ho: tape.param(store, self.w_ho),
            w_hc: tape.param(store, self.w_hc),
            b_i: tape.param(store, self.b_i),
            b_f: tape.param(store, self.b_f),
            b_o: tape.param(store, self.b_o),
            b_c: tape.param(store, self.b_c),
            d_h: self.d_h,
        }
    }
}

/// Tape-bound LSTM cell parameters for one step of training or inference.
#[derive(Debug, Clone, Copy)]
pub struct LstmCellVars {
    pub w_xi: Var,
    pub w_xf: Var,
    pub w_xo: Var,
    pub w_xc: Var,
    pub w_hi: Var,
    pub w_hf: Var,
    pub w_ho: Var,
    pub w_hc: Var,
    pub b_i: Var,
    pub b_f: Var,
    pub b_o: Var,
    pub b_c: Var,
    pub d_h: usize,
}

fn gate(
    tape: &mut Tape,
    x: Var,
    h: Var,
    w_x: Var,
    w_h: Var,
    b: Var,
) -> Result<Var> {
    let from_x = tape.vecmat(x, w_x)?;
    let from_h = tape.vecmat(h, w_h)?;
    let pre = tape.add(from_x, from_h)?;
    tape.add(pre, b)
}

/// One LSTM step: gates from sigmoid pre-activations, candidate from tanh,
/// cell state `f*c_prev + i*candidate`, hidden `o*tanh(c)`.
pub fn lstm_cell(
    tape: &mut Tape,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    p: &LstmCellVars,
) -> Result<(Var, Var)> {
    let pre_i = gate(tape, x, h_prev, p.w_xi, p.w_hi, p.b_i)?;
    let i = tape.sigmoid(pre_i);
    let pre_f = gate(tape, x, h_prev, p.w_xf, p.w_hf, p.b_f)?;
    let f = tape.sigmoid(pre_f);
    let pre_o = gate(tape, x, h_prev, p.w_xo, p.w_ho, p.b_o)?;
    let o = tape.sigmoid(pre_o);
    let pre_c = gate(tape, x, h_prev, p.w_xc, p.w_hc, p.b_c)?;
    let candidate = tape.tanh(pre_c);

    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, candidate)?;
    let c = tape.add(keep, write)?;
    let c_tanh = tape.tanh(c);
    let h = tape.mul(o, c_tanh)?;
    Ok((h, c))
}

/// Run a cell over a sequence from zero initial state; returns hidden states
/// in input order.
pub fn lstm_run(tape: &mut Tape, xs: &[Var], p: &LstmCellVars) -> Result<Vec<Var>> {
    if xs.is_empty() {
        return Err(Error::data("lstm over an empty sequence"));
    }
    let mut h = tape.constant(Tensor::zeros(&[p.d_h]));
    let mut c = tape.constant(Tensor::zeros(&[p.d_h]));
    let mut states = Vec::with_capacity(xs.len());
    for &x in xs {
        let (nh, nc) = lstm_cell(tape, x, h, c, p)?;
        h = nh;
        c = nc;
        states.push(h);
    }
    Ok(states)
}

/// Bidirectional LSTM: the forward cell reads the sequence in order, the
/// backward cell in reverse; output at position `t` is the concatenation of
/// the two hidden states aligned to `t`.
pub fn bilstm(
    tape: &mut Tape,
    xs: &[Var],
    fwd: &LstmCellVars,
    bwd: &LstmCellVars,
) -> Result<Vec<Var>> {
    if xs.is_empty() {
        return Err(Error::data("bilstm over an empty sequence"));
    }
    let forward = lstm_run(tape, xs, fwd)?;
    let reversed: Vec<Var> = xs.iter().rev().copied().collect();
    let backward = lstm_run(tape, &reversed, bwd)?;
    let n = xs.len();
    (0..n)
        .map(|t| tape.concat(&[forward[t], backward[n - 1 - t]]))
        .collect()
}

/// Character CNN parameters: `n_filters` filters over a window of character
/// embeddings (flattened window-major) plus a bias per filter.
#[derive(Debug, Clone)]
pub struct CharCnnParams {
    pub filters: ParamId,
    pub bias: ParamId,
    pub window: usize,
    pub n_filters: usize,
    pub d_char: usize,
}

impl CharCnnParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        n_filters: usize,
        window: usize,
        d_char: usize,
        rng: &mut impl Rng,
    ) -> Result<CharCnnParams> {
        if window % 2 == 0 || n_filters == 0 {
            return Err(Error::Config(format!(
                "char CNN needs an odd window and at least one filter, got window {window}, {n_filters} filters"
            )));
        }
        let bound = init_bound(window * d_char);
        let filters = store.add(
            format!("{prefix}.filters"),
            Tensor::uniform(&[n_filters, window * d_char], -bound, bound, rng),
        );
        let bias = store.add(format!("{prefix}.bias"), Tensor::zeros(&[n_filters]));
        Ok(CharCnnParams {
            filters,
            bias,
            window,
            n_filters,
            d_char,
        })
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> CharCnnVars {
        CharCnnVars {
            filters: tape.param(store, self.filters),
            bias: tape.param(store, self.bias),
            window: self.window,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CharCnnVars {
    pub filters: Var,
    pub bias: Var,
    pub window: usize,
}

/// Embed the characters, convolve with zero padding, and take the maximum
/// over time per filter.
pub fn char_cnn_encode(
    tape: &mut Tape,
    char_ids: &[usize],
    char_emb: Var,
    p: &CharCnnVars,
) -> Result<Var> {
    if char_ids.is_empty() {
        return Err(Error::data("char encoder over an empty character list"));
    }
    let embedded = tape.rows(char_emb, char_ids)?;
    let conv = tape.conv1d_same(embedded, p.filters, p.bias, p.window)?;
    tape.max_axis0(conv)
}

/// Embed the characters and run both LSTM directions; the feature is the
/// concatenation of the two final hidden states.
pub fn char_bilstm_encode(
    tape: &mut Tape,
    char_ids: &[usize],
    char_emb: Var,
    fwd: &LstmCellVars,
    bwd: &LstmCellVars,
) -> Result<Var> {
    if char_ids.is_empty() {
        return Err(Error::data("char encoder over an empty character list"));
    }
    let embedded = tape.rows(char_emb, char_ids)?;
    let xs: Vec<Var> = (0..char_ids.len())
        .map(|i| tape.row(embedded, i))
        .collect::<Result<_>>()?;
    let forward = lstm_run(tape, &xs, fwd)?;
    let reversed: Vec<Var> = xs.iter().rev().copied().collect();
    let backward = lstm_run(tape, &reversed, bwd)?;
    tape.concat(&[*forward.last().unwrap(), *backward.last().unwrap()])
}

/// Tape-bound character encoder choice.
pub enum CharEncoderVars<'a> {
    None,
    Cnn {
        emb: Var,
        cnn: &'a CharCnnVars,
    },
    Lstm {
        emb: Var,
        fwd: &'a LstmCellVars,
        bwd: &'a LstmCellVars,
    },
}

/// Per-token input representation: syllable embedding, concatenated with a
/// character feature when an encoder is configured, then embedding-layer
/// dropout (training mode only).
pub fn build_input_repr(
    tape: &mut Tape,
    syl_emb: Var,
    syl_ids: &[usize],
    char_ids: &[Vec<usize>],
    encoder: &CharEncoderVars,
    dropout_p: f64,
    training: bool,
    rng: &mut impl Rng,
) -> Result<Vec<Var>> {
    if syl_ids.len() != char_ids.len() {
        return Err(Error::data("token and character sequences misaligned"));
    }
    let mut reprs = Vec::with_capacity(syl_ids.len());
    for (&sid, chars) in syl_ids.iter().zip(char_ids) {
        let syl = tape.row(syl_emb, sid)?;
        let repr = match encoder {
            CharEncoderVars::None => syl,
            CharEncoderVars::Cnn { emb, cnn } => {
                let feat = char_cnn_encode(tape, chars, *emb, cnn)?;
                tape.concat(&[syl, feat])?
            }
            CharEncoderVars::Lstm { emb, fwd, bwd } => {
                let feat = char_bilstm_encode(tape, chars, *emb, fwd, bwd)?;
                tape.concat(&[syl, feat])?
            }
        };
        reprs.push(tape.dropout(repr, dropout_p, training, rng)?);
    }
    Ok(reprs)
}
