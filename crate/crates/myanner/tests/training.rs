//! Training-level integration tests: baseline behavior on toy data, the
//! regularization path, descent sanity, and the paper-default settings.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use myanner::corpus::{evaluate, LabeledSentence};
use myanner::model::{
    baseline_train, CharEncoderKind, FeatureTemplate, HeadKind, NeuralTagger, StepCtx,
    TaggerConfig, TrainableModel,
};
use myanner::tensor::{Tape, Tensor};
use myanner::train::{
    sgd_step, train_loop, window_offsets, OptimState, OptimizerKind, TrainConfig,
};

fn s(tokens: &[&str], labels: &[&str]) -> LabeledSentence {
    LabeledSentence::new(
        tokens.iter().map(|t| t.to_string()).collect(),
        labels.iter().map(|l| l.to_string()).collect(),
    )
    .unwrap()
}

/// Separable toy corpus: the center token's identity decides the label.
fn separable_corpus() -> Vec<LabeledSentence> {
    let mut corpus = Vec::new();
    for _ in 0..4 {
        corpus.push(s(&["u", "aaa", "v"], &["O", "S-LOC", "O"]));
        corpus.push(s(&["u", "bbb", "v"], &["O", "S-ORG", "O"]));
        corpus.push(s(&["w", "aaa", "ccc", "v"], &["O", "B-LOC", "E-LOC", "O"]));
        corpus.push(s(&["w", "ddd", "v"], &["O", "S-NUM", "O"]));
    }
    corpus
}

fn baseline_cfg(seed: u64, max_epochs: usize) -> TrainConfig {
    TrainConfig {
        optimizer: OptimizerKind::Adam,
        lr0: 0.02,
        max_epochs,
        patience: max_epochs,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn baseline_overfits_separable_data() {
    let corpus = separable_corpus();
    let template = FeatureTemplate {
        offsets: window_offsets(5),
        gazetteers: Vec::new(),
    };
    let (model, outcome) = baseline_train(
        &corpus,
        &corpus,
        template,
        1,
        true,
        2.5,
        &baseline_cfg(5, 80),
    )
    .unwrap();
    assert_eq!(outcome.best_dev_f1, 1.0, "separable data must reach F1 = 1.0");
    let preds: Vec<Vec<String>> = corpus.iter().map(|c| model.predict(&c.tokens)).collect();
    assert_eq!(evaluate(&corpus, &preds).unwrap().micro.f1(), 1.0);
}

#[test]
fn strong_regularization_shrinks_weights_and_hurts_f1() {
    // fixed-step regularization path: run the same 120 Adam steps under a
    // moderate and a near-zero c and compare the resulting weights and fit
    use myanner::train::{adam_step, OptimState};

    // imbalanced but separable: with emissions squashed toward zero the
    // unregularized transition prior (O -> S-LOC is 5x more common) wins
    // over the token identity, so the minority class is lost
    let mut corpus = Vec::new();
    for _ in 0..10 {
        corpus.push(s(&["u", "aaa", "v"], &["O", "S-LOC", "O"]));
    }
    for _ in 0..2 {
        corpus.push(s(&["u", "bbb", "v"], &["O", "S-ORG", "O"]));
    }
    let template = FeatureTemplate {
        offsets: window_offsets(5),
        gazetteers: Vec::new(),
    };
    let run = |c: f64| {
        let mut model =
            myanner::model::SparseCrfModel::build(&corpus, template.clone(), 1, true).unwrap();
        model.set_l2_coeff(1.0 / (2.0 * c * corpus.len() as f64));
        let mut state = OptimState::new(OptimizerKind::Adam, model.store());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..120 {
            let mut tape = Tape::new();
            let mut ctx = StepCtx {
                training: true,
                singleton_unk_prob: 0.0,
                train_mask: false,
                rng: &mut rng,
            };
            let loss = model.loss_on_tape(&mut tape, &corpus, &mut ctx).unwrap();
            tape.backward(loss).unwrap();
            let grads: Vec<Tensor> = model
                .store()
                .ids()
                .map(|id| {
                    tape.param_grad(id)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(model.store().value(id).shape()))
                })
                .collect();
            drop(tape);
            adam_step(model.store_mut(), &grads, &mut state, 0.02, 0.9, 0.999, 1e-8).unwrap();
        }
        let weights = model.store().id_by_name("weights").unwrap();
        let norm = model.store().value(weights).l2_norm();
        let preds: Vec<Vec<String>> = corpus.iter().map(|s| model.predict(&s.tokens)).collect();
        let f1 = evaluate(&corpus, &preds).unwrap().micro.f1();
        (norm, f1)
    };
    let (moderate_norm, moderate_f1) = run(2.5);
    let (strong_norm, strong_f1) = run(1e-4);

    assert!(
        strong_norm < 0.2 * moderate_norm,
        "strong regularization must shrink weights: {strong_norm} vs {moderate_norm}"
    );
    assert_eq!(moderate_f1, 1.0, "moderate c fits the separable data");
    assert!(
        strong_f1 < moderate_f1,
        "strong regularization must hurt the fit: {strong_f1} vs {moderate_f1}"
    );
}

#[test]
fn baseline_training_is_deterministic_per_seed() {
    let corpus = separable_corpus();
    let template = FeatureTemplate {
        offsets: window_offsets(5),
        gazetteers: Vec::new(),
    };
    let run = || {
        baseline_train(
            &corpus,
            &corpus,
            template.clone(),
            1,
            true,
            2.5,
            &baseline_cfg(11, 10),
        )
        .unwrap()
    };
    let (model_a, out_a) = run();
    let (model_b, out_b) = run();
    let rows_a: Vec<String> = out_a.history.iter().map(|h| h.csv_row()).collect();
    let rows_b: Vec<String> = out_b.history.iter().map(|h| h.csv_row()).collect();
    assert_eq!(rows_a, rows_b);
    let wa = model_a.store().id_by_name("weights").unwrap();
    let wb = model_b.store().id_by_name("weights").unwrap();
    assert_eq!(model_a.store().value(wa), model_b.store().value(wb));
}

#[test]
fn one_small_step_strictly_decreases_loss() {
    // descent sanity at lr = 1e-4 on the deterministic (eval-mode) loss
    let corpus = myanner::corpus::generate_synthetic_corpus(3, 10);
    let alphabets = myanner::corpus::build_alphabets(&corpus).unwrap();
    let cfg = TaggerConfig {
        char_encoder: CharEncoderKind::Cnn,
        head: HeadKind::Crf,
        d_syl: 12,
        d_char: 8,
        n_filters: 6,
        window: 3,
        char_hidden: 6,
        hidden_total: 12,
        dropout: 0.0,
        char_dropout: false,
        decode_mask: true,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tagger = NeuralTagger::new(cfg, alphabets, &mut rng).unwrap();

    let eval_loss = |tagger: &NeuralTagger| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = StepCtx::eval(&mut rng);
        let mut tape = Tape::new();
        let loss = tagger.loss_on_tape(&mut tape, &corpus, &mut ctx).unwrap();
        tape.value(loss).item()
    };

    let before = eval_loss(&tagger);
    let mut tape = Tape::new();
    let mut rng2 = ChaCha8Rng::seed_from_u64(0);
    let mut ctx = StepCtx::eval(&mut rng2);
    let loss = tagger.loss_on_tape(&mut tape, &corpus, &mut ctx).unwrap();
    tape.backward(loss).unwrap();
    let grads: Vec<Tensor> = tagger
        .store()
        .ids()
        .map(|id| {
            tape.param_grad(id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(tagger.store().value(id).shape()))
        })
        .collect();
    drop(tape);
    let mut state = OptimState::new(OptimizerKind::Sgd, tagger.store());
    sgd_step(tagger.store_mut(), &grads, &mut state, 1e-4, 0.0).unwrap();
    let after = eval_loss(&tagger);
    assert!(after < before, "loss must strictly decrease: {before} -> {after}");
}

#[test]
fn default_configs_match_reported_setup() {
    let tagger = TaggerConfig::default();
    assert_eq!(tagger.d_syl, 100);
    assert_eq!(tagger.d_char, 100);
    assert_eq!(tagger.n_filters, 50);
    assert_eq!(tagger.window, 3);
    assert_eq!(tagger.hidden_total, 200);
    assert_eq!(tagger.dropout, 0.5);
    // input width: 100 alone, 150 with the 50-filter char CNN
    assert_eq!(tagger.d_syl + tagger.n_filters, 150);

    let sgd = TrainConfig::for_optimizer(OptimizerKind::Sgd);
    assert_eq!(sgd.lr0, 0.015);
    assert_eq!(sgd.momentum, 0.1);
    assert_eq!(sgd.lr_decay, 0.05);
    assert_eq!(sgd.batch_size, 30);
    let adam = TrainConfig::for_optimizer(OptimizerKind::Adam);
    assert_eq!(adam.lr0, 0.0015);
    assert_eq!(adam.batch_size, 30);
}

#[test]
fn neural_loop_memorizes_a_small_corpus() {
    let corpus = myanner::corpus::generate_synthetic_corpus(21, 10);
    let alphabets = myanner::corpus::build_alphabets(&corpus).unwrap();
    let cfg = TaggerConfig {
        char_encoder: CharEncoderKind::Cnn,
        head: HeadKind::Crf,
        d_syl: 24,
        d_char: 12,
        n_filters: 12,
        window: 3,
        char_hidden: 12,
        hidden_total: 32,
        dropout: 0.0,
        char_dropout: false,
        decode_mask: true,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut tagger = NeuralTagger::new(cfg, alphabets, &mut rng).unwrap();
    let tcfg = TrainConfig {
        optimizer: OptimizerKind::Adam,
        lr0: 0.01,
        max_epochs: 80,
        patience: 80,
        singleton_unk_prob: 0.0,
        seed: 4,
        ..TrainConfig::default()
    };
    let outcome = train_loop(&mut tagger, &corpus, &corpus, &tcfg).unwrap();
    assert!(
        outcome.best_dev_f1 >= 0.9,
        "train F1 after 80 epochs: {}",
        outcome.best_dev_f1
    );
    // the loop leaves the best parameters in place
    let preds: Vec<Vec<String>> = corpus.iter().map(|d| tagger.predict(&d.tokens)).collect();
    let now = evaluate(&corpus, &preds).unwrap().micro.f1();
    assert_eq!(now, outcome.best_dev_f1);
}
