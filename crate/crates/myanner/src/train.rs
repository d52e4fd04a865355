//! Optimizers, learning-rate schedule, batching, early stopping, the
//! training loop, pretrained-embedding loading and the key=value training
//! config format.

use std::io::BufRead;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{evaluate, LabeledSentence, Scheme, Vocab, PAD_INDEX};
use crate::model::{CharEncoderKind, HeadKind, StepCtx, TaggerConfig, TrainableModel};
use crate::tensor::{ParamStore, Tape, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }

    /// Paper defaults: 0.015 for SGD, 0.0015 for Adam.
    pub fn default_lr(&self) -> f64 {
        match self {
            OptimizerKind::Sgd => 0.015,
            OptimizerKind::Adam => 0.0015,
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<OptimizerKind> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr0: f64,
    pub momentum: f64,
    /// Per-epoch decay of the SGD learning rate: `lr0 / (1 + decay * epoch)`.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Global L2 gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    /// Probability of replacing a frequency-1 syllable with UNK in training.
    pub singleton_unk_prob: f64,
    /// Apply the transition legality mask during training as well.
    pub train_mask: bool,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            optimizer: OptimizerKind::Sgd,
            lr0: 0.015,
            momentum: 0.1,
            lr_decay: 0.05,
            batch_size: 30,
            max_epochs: 100,
            patience: 10,
            grad_clip: 5.0,
            seed: 42,
            singleton_unk_prob: 0.5,
            train_mask: false,
        }
    }
}

impl TrainConfig {
    pub fn for_optimizer(kind: OptimizerKind) -> TrainConfig {
        TrainConfig {
            optimizer: kind,
            lr0: kind.default_lr(),
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0 {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".to_string()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".to_string()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".to_string()));
        }
        if !(0.0..=1.0).contains(&self.singleton_unk_prob) {
            return Err(Error::Config(
                "singleton_unk_prob must be in [0,1]".to_string(),
            ));
        }
        if self.grad_clip < 0.0 || self.lr_decay < 0.0 {
            return Err(Error::Config(
                "grad_clip and lr_decay must be non-negative".to_string(),
            ));
        }
        Ok(())
    }
}

/// Per-parameter optimizer buffers.
pub enum OptimState {
    Sgd {
        velocity: Vec<Tensor>,
    },
    Adam {
        m: Vec<Tensor>,
        v: Vec<Tensor>,
        t: u64,
    },
}

impl OptimState {
    pub fn new(kind: OptimizerKind, store: &ParamStore) -> OptimState {
        let zeros: Vec<Tensor> = store
            .ids()
            .map(|id| Tensor::zeros(store.value(id).shape()))
            .collect();
        match kind {
            OptimizerKind::Sgd => OptimState::Sgd { velocity: zeros },
            OptimizerKind::Adam => OptimState::Adam {
                m: zeros.clone(),
                v: zeros,
                t: 0,
            },
        }
    }
}

/// SGD with momentum: `v = momentum*v + g; p = p - lr*v`.
pub fn sgd_step(
    store: &mut ParamStore,
    grads: &[Tensor],
    state: &mut OptimState,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    let OptimState::Sgd { velocity } = state else {
        return Err(Error::Train("optimizer state is not SGD".to_string()));
    };
    if grads.len() != store.len() || velocity.len() != store.len() {
        return Err(Error::shape("gradient/state length mismatch"));
    }
    for id in store.ids().collect::<Vec<_>>() {
        let i = id.index();
        if grads[i].shape() != store.value(id).shape() {
            return Err(Error::shape(format!(
                "gradient shape mismatch for {}",
                store.name(id)
            )));
        }
        let vel = &mut velocity[i];
        for ((v, &g), p) in vel
            .data_mut()
            .iter_mut()
            .zip(grads[i].data())
            .zip(store.value_mut(id).data_mut())
        {
            *v = momentum * *v + g;
            *p -= lr * *v;
        }
    }
    Ok(())
}

/// Bias-corrected Adam.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[Tensor],
    state: &mut OptimState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    let OptimState::Adam { m, v, t } = state else {
        return Err(Error::Train("optimizer state is not Adam".to_string()));
    };
    if grads.len() != store.len() {
        return Err(Error::shape("gradient/state length mismatch"));
    }
    *t += 1;
    let bc1 = 1.0 - beta1.powi(*t as i32);
    let bc2 = 1.0 - beta2.powi(*t as i32);
    for id in store.ids().collect::<Vec<_>>() {
        let i = id.index();
        if grads[i].shape() != store.value(id).shape() {
            return Err(Error::shape(format!(
                "gradient shape mismatch for {}",
                store.name(id)
            )));
        }
        for (((mi, vi), &g), p) in m[i]
            .data_mut()
            .iter_mut()
            .zip(v[i].data_mut())
            .zip(grads[i].data())
            .zip(store.value_mut(id).data_mut())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * g;
            *vi = beta2 * *vi + (1.0 - beta2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// `lr0 / (1 + decay * epoch)`, applied per epoch (SGD only; Adam runs at a
/// constant rate).
pub fn lr_schedule(lr0: f64, decay: f64, epoch: usize) -> f64 {
    lr0 / (1.0 + decay * epoch as f64)
}

/// Scale all gradients so the global L2 norm is at most `cap` (0 disables).
/// Returns the pre-clip norm.
pub fn clip_gradients(grads: &mut [Tensor], cap: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if cap > 0.0 && norm > cap {
        let scale = cap / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// One history row per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_precision: f64,
    pub dev_recall: f64,
    pub dev_f1: f64,
    pub lr: f64,
}

impl EpochStats {
    pub const CSV_HEADER: &'static str = "epoch,loss,dev_p,dev_r,dev_f,lr";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.epoch, self.train_loss, self.dev_precision, self.dev_recall, self.dev_f1, self.lr
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
}

/// Train a model: shuffle into length-grouped batches, step the optimizer
/// with gradient clipping, evaluate dev micro-F1 per epoch, keep the best
/// parameters, and stop after `patience` epochs without improvement. The
/// model is left holding the best parameters.
pub fn train_loop<M: TrainableModel>(
    model: &mut M,
    train: &[LabeledSentence],
    dev: &[LabeledSentence],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::data("training and dev sets must be non-empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = OptimState::new(cfg.optimizer, model.store());
    let mut history = Vec::new();
    let mut best_store = model.store().clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut stale_epochs = 0;

    for epoch in 1..=cfg.max_epochs {
        let lr = match cfg.optimizer {
            OptimizerKind::Sgd => lr_schedule(cfg.lr0, cfg.lr_decay, epoch - 1),
            OptimizerKind::Adam => cfg.lr0,
        };

        // shuffle, then group sentences of similar length into batches and
        // visit the batches in random order
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        order.sort_by_key(|&i| train[i].len());
        let mut batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        batches.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for batch_ids in batches {
            let batch: Vec<LabeledSentence> =
                batch_ids.iter().map(|&i| train[i].clone()).collect();
            let mut tape = Tape::new();
            let mut ctx = StepCtx {
                training: true,
                singleton_unk_prob: cfg.singleton_unk_prob,
                train_mask: cfg.train_mask,
                rng: &mut rng,
            };
            let loss = model.loss_on_tape(&mut tape, &batch, &mut ctx)?;
            let loss_value = tape.value(loss).item();
            if !loss_value.is_finite() {
                return Err(Error::Train(format!(
                    "non-finite loss {loss_value} at epoch {epoch}"
                )));
            }
            loss_sum += loss_value * batch.len() as f64;
            tape.backward(loss)?;

            let mut grads: Vec<Tensor> = model
                .store()
                .ids()
                .map(|id| {
                    tape.param_grad(id)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(model.store().value(id).shape()))
                })
                .collect();
            drop(tape);
            for (pid, row) in model.frozen_rows() {
                let g = &mut grads[pid.index()];
                let cols = g.cols();
                for j in 0..cols {
                    g.set2(row, j, 0.0);
                }
            }
            clip_gradients(&mut grads, cfg.grad_clip);
            match cfg.optimizer {
                OptimizerKind::Sgd => {
                    sgd_step(model.store_mut(), &grads, &mut state, lr, cfg.momentum)?
                }
                OptimizerKind::Adam => {
                    adam_step(model.store_mut(), &grads, &mut state, lr, 0.9, 0.999, 1e-8)?
                }
            }
        }

        let predictions: Vec<Vec<String>> =
            dev.iter().map(|s| model.predict(&s.tokens)).collect();
        let metrics = evaluate(dev, &predictions)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            dev_precision: metrics.micro.precision(),
            dev_recall: metrics.micro.recall(),
            dev_f1: metrics.micro.f1(),
            lr,
        };
        let f1 = stats.dev_f1;
        history.push(stats);

        if f1 > best_f1 {
            best_f1 = f1;
            best_epoch = epoch;
            best_store = model.store().clone();
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= cfg.patience {
                break;
            }
        }
    }

    *model.store_mut() = best_store;
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_dev_f1: best_f1,
    })
}

/// Coverage report from [`load_pretrained_embeddings`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingLoadReport {
    /// Vocabulary entries found in the file.
    pub loaded: usize,
    /// Vocabulary entries (pad and unk excluded) not found in the file.
    pub missing: usize,
}

/// Read text-format embeddings: an optional `<count> <dim>` first line, then
/// `token v1 .. v_d` rows. Vocabulary tokens found in the file take their
/// stored vectors; missing ones are initialized uniform in `±sqrt(3/d)`. The
/// pad row stays zero.
pub fn load_pretrained_embeddings(
    reader: impl BufRead,
    vocab: &Vocab,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, EmbeddingLoadReport)> {
    let bound = (3.0 / dim as f64).sqrt();
    let mut table = Tensor::uniform(&[vocab.len(), dim], -bound, bound, rng);
    for j in 0..dim {
        table.set2(PAD_INDEX, j, 0.0);
    }
    let mut filled = vec![false; vocab.len()];

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else {
            continue; // blank line
        };
        let values: Vec<&str> = fields.collect();
        if line_no == 1 && values.len() == 1 {
            // optional "<count> <dim>" header
            if let (Ok(_), Ok(file_dim)) = (token.parse::<usize>(), values[0].parse::<usize>()) {
                if file_dim != dim {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("embedding file is {file_dim}-dimensional, config wants {dim}"),
                    });
                }
                continue;
            }
        }
        if values.len() != dim {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("{} values for dimension {dim}", values.len()),
            });
        }
        let id = vocab.lookup(token);
        let keep = vocab.contains(token) && id != PAD_INDEX;
        for (j, raw) in values.iter().enumerate() {
            let value: f64 = raw.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("malformed float {raw:?}"),
            })?;
            if keep {
                table.set2(id, j, value);
            }
        }
        if keep && !filled[id] {
            filled[id] = true;
        }
    }
    let loaded = filled.iter().skip(2).filter(|&&f| f).count()
        + usize::from(filled.get(1).copied().unwrap_or(false));
    let missing = vocab.len().saturating_sub(2) - filled.iter().skip(2).filter(|&&f| f).count();
    Ok((table, EmbeddingLoadReport { loaded, missing }))
}

/// Model choice in a training config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    Neural,
    SparseCrf,
}

/// Everything a config file can specify.
#[derive(Debug, Clone, PartialEq)]
pub struct FileConfig {
    pub model: ModelChoice,
    pub tagger: TaggerConfig,
    pub train: TrainConfig,
    pub scheme: Scheme,
    /// Sparse baseline: feature frequency cut-off.
    pub feature_cutoff: usize,
    /// Sparse baseline: window size (odd; offsets `-(w/2)..=w/2`).
    pub feature_window: usize,
    /// Sparse baseline: toolkit-style `c`; L2 strength is `1/(2c)`.
    pub l2_c: f64,
    /// Sparse baseline: gazetteer file paths.
    pub gazetteers: Vec<String>,
}

impl Default for FileConfig {
    fn default() -> FileConfig {
        FileConfig {
            model: ModelChoice::Neural,
            tagger: TaggerConfig::default(),
            train: TrainConfig::default(),
            scheme: Scheme::Iobes,
            feature_cutoff: 3,
            feature_window: 5,
            l2_c: 2.5,
            gazetteers: Vec::new(),
        }
    }
}

/// Parse flat `key = value` lines (UTF-8, `#` comments, blank lines
/// allowed). Unknown keys are errors so typos cannot silently change a run.
/// When `lr0` is not given it defaults per optimizer.
pub fn parse_config(text: &str) -> Result<FileConfig> {
    let mut cfg = FileConfig::default();
    let mut lr0_given = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected key=value, got {line:?}"),
            });
        };
        let key = key.trim();
        let value = value.trim();
        let bad = |msg: String| Error::Parse { line: line_no, msg };
        let parse_usize =
            |v: &str| v.parse::<usize>().map_err(|_| bad(format!("invalid integer {v:?}")));
        let parse_f64 =
            |v: &str| v.parse::<f64>().map_err(|_| bad(format!("invalid number {v:?}")));
        let parse_bool = |v: &str| match v {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(bad(format!("invalid boolean {v:?}"))),
        };
        match key {
            "model" => {
                cfg.model = match value {
                    "neural" => ModelChoice::Neural,
                    "sparse_crf" => ModelChoice::SparseCrf,
                    _ => return Err(bad(format!("unknown model {value:?}"))),
                }
            }
            "scheme" => cfg.scheme = Scheme::from_str(value)?,
            "char_encoder" => cfg.tagger.char_encoder = CharEncoderKind::from_str(value)?,
            "head" => cfg.tagger.head = HeadKind::from_str(value)?,
            "d_syl" => cfg.tagger.d_syl = parse_usize(value)?,
            "d_char" => cfg.tagger.d_char = parse_usize(value)?,
            "n_filters" => cfg.tagger.n_filters = parse_usize(value)?,
            "window" => cfg.tagger.window = parse_usize(value)?,
            "char_hidden" => cfg.tagger.char_hidden = parse_usize(value)?,
            "hidden_total" => cfg.tagger.hidden_total = parse_usize(value)?,
            "dropout" => cfg.tagger.dropout = parse_f64(value)?,
            "char_dropout" => cfg.tagger.char_dropout = parse_bool(value)?,
            "decode_mask" => cfg.tagger.decode_mask = parse_bool(value)?,
            "optimizer" => cfg.train.optimizer = OptimizerKind::from_str(value)?,
            "lr0" => {
                cfg.train.lr0 = parse_f64(value)?;
                lr0_given = true;
            }
            "momentum" => cfg.train.momentum = parse_f64(value)?,
            "lr_decay" => cfg.train.lr_decay = parse_f64(value)?,
            "batch_size" => cfg.train.batch_size = parse_usize(value)?,
            "max_epochs" => cfg.train.max_epochs = parse_usize(value)?,
            "patience" => cfg.train.patience = parse_usize(value)?,
            "grad_clip" => cfg.train.grad_clip = parse_f64(value)?,
            "seed" => {
                cfg.train.seed = value
                    .parse::<u64>()
                    .map_err(|_| bad(format!("invalid seed {value:?}")))?
            }
            "singleton_unk_prob" => cfg.train.singleton_unk_prob = parse_f64(value)?,
            "train_mask" => cfg.train.train_mask = parse_bool(value)?,
            "feature_cutoff" => cfg.feature_cutoff = parse_usize(value)?,
            "feature_window" => cfg.feature_window = parse_usize(value)?,
            "l2_c" => cfg.l2_c = parse_f64(value)?,
            "gazetteers" => {
                cfg.gazetteers = value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            }
            unknown => {
                return Err(Error::Config(format!(
                    "unknown config key {unknown:?} at line {line_no}"
                )))
            }
        }
    }
    if !lr0_given {
        cfg.train.lr0 = cfg.train.optimizer.default_lr();
    }
    if cfg.feature_window % 2 == 0 || cfg.feature_window == 0 {
        return Err(Error::Config(format!(
            "feature_window must be odd and positive, got {}",
            cfg.feature_window
        )));
    }
    if cfg.l2_c <= 0.0 {
        return Err(Error::Config(format!("l2_c must be positive, got {}", cfg.l2_c)));
    }
    cfg.train.validate()?;
    cfg.tagger.validate()?;
    Ok(cfg)
}

/// Offsets of a centered window of odd size `w`: `-(w/2) ..= w/2`.
pub fn window_offsets(window: usize) -> Vec<i64> {
    let half = (window / 2) as i64;
    (-half..=half).collect()
}
