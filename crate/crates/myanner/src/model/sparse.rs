//! Sparse-feature linear-chain CRF baseline: window token-identity features
//! (plus optional gazetteer features), a frequency cut-off, and the shared
//! CRF transition matrix.

use std::collections::{BTreeSet, HashMap};
use std::io::BufRead;

use super::{StepCtx, TrainableModel};
use crate::corpus::{LabeledSentence, Scheme};
use crate::crf::{self, CrfParams, EmissionMatrix, TransitionMask};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

const BOS_TOKEN: &str = "<BOS>";
const EOS_TOKEN: &str = "<EOS>";

/// One plain-text token list; a binary feature fires when a window token is
/// in the list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gazetteer {
    pub name: String,
    entries: BTreeSet<String>,
}

impl Gazetteer {
    pub fn new(name: impl Into<String>, entries: impl IntoIterator<Item = String>) -> Gazetteer {
        Gazetteer {
            name: name.into(),
            entries: entries.into_iter().collect(),
        }
    }

    /// One entry per line; blank lines and `#` comments are skipped.
    pub fn load(name: impl Into<String>, reader: impl BufRead) -> Result<Gazetteer> {
        let mut entries = BTreeSet::new();
        for line in reader.lines() {
            let line = line?;
            let entry = line.trim();
            if entry.is_empty() || entry.starts_with('#') {
                continue;
            }
            entries.insert(entry.to_string());
        }
        Ok(Gazetteer {
            name: name.into(),
            entries,
        })
    }

    pub fn contains(&self, token: &str) -> bool {
        self.entries.contains(token)
    }

    pub fn entries(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|s| s.as_str())
    }
}

/// Feature template: token-identity features at each window offset, plus
/// optional gazetteer membership features.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureTemplate {
    pub offsets: Vec<i64>,
    pub gazetteers: Vec<Gazetteer>,
}

impl Default for FeatureTemplate {
    /// The window-5 template: offsets -2..=2, no gazetteers.
    fn default() -> FeatureTemplate {
        FeatureTemplate {
            offsets: vec![-2, -1, 0, 1, 2],
            gazetteers: Vec::new(),
        }
    }
}

/// Names of the features active at `pos`. Offsets beyond the sentence
/// boundary produce BOS/EOS padding tokens.
pub fn extract_features(tokens: &[String], pos: usize, template: &FeatureTemplate) -> Vec<String> {
    let mut feats = Vec::with_capacity(template.offsets.len());
    for &off in &template.offsets {
        let idx = pos as i64 + off;
        let token = if idx < 0 {
            BOS_TOKEN
        } else if idx >= tokens.len() as i64 {
            EOS_TOKEN
        } else {
            tokens[idx as usize].as_str()
        };
        feats.push(format!("U[{off}]={token}"));
        for gaz in &template.gazetteers {
            if gaz.contains(token) {
                feats.push(format!("G[{off}]:{}", gaz.name));
            }
        }
    }
    feats
}

/// Linear-chain CRF over sparse features: per-label weights for every kept
/// feature plus the transition matrix.
pub struct SparseCrfModel {
    pub template: FeatureTemplate,
    pub labels: Vec<String>,
    pub cutoff: usize,
    pub decode_mask: bool,
    feature_names: Vec<String>,
    feature_index: HashMap<String, usize>,
    store: ParamStore,
    weights: ParamId,
    trans: ParamId,
    mask: Option<TransitionMask>,
    /// Coefficient of the `||w||^2` term added to every batch loss.
    l2_coeff: f64,
}

impl SparseCrfModel {
    /// Count features over the training set, drop those below the cut-off,
    /// and initialize all weights at zero.
    pub fn build(
        train: &[LabeledSentence],
        template: FeatureTemplate,
        cutoff: usize,
        decode_mask: bool,
    ) -> Result<SparseCrfModel> {
        if train.is_empty() {
            return Err(Error::data("cannot build a baseline from an empty corpus"));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut labels: Vec<String> = Vec::new();
        for sentence in train {
            for pos in 0..sentence.len() {
                for feat in extract_features(&sentence.tokens, pos, &template) {
                    *counts.entry(feat).or_default() += 1;
                }
            }
            for label in &sentence.labels {
                if !labels.contains(label) {
                    labels.push(label.clone());
                }
            }
        }
        labels.sort();
        let mut feature_names: Vec<String> = counts
            .into_iter()
            .filter(|(_, c)| *c >= cutoff)
            .map(|(name, _)| name)
            .collect();
        feature_names.sort();
        SparseCrfModel::from_parts(template, labels, feature_names, cutoff, decode_mask)
    }

    /// Assemble from explicit parts (deserialization path). Weights zero.
    pub(crate) fn from_parts(
        template: FeatureTemplate,
        labels: Vec<String>,
        feature_names: Vec<String>,
        cutoff: usize,
        decode_mask: bool,
    ) -> Result<SparseCrfModel> {
        if labels.is_empty() {
            return Err(Error::data("baseline needs at least one label"));
        }
        let t = labels.len();
        let feature_index = feature_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        let mut store = ParamStore::new();
        // a dummy row keeps the matrix non-empty if every feature was cut
        let rows = feature_names.len().max(1);
        let weights = store.add("weights", Tensor::zeros(&[rows, t]));
        let trans = store.add("trans", CrfParams::new_zero(t).trans().clone());
        let mask = if decode_mask {
            Some(crf::transition_mask(&labels, Scheme::Iobes)?)
        } else {
            None
        };
        Ok(SparseCrfModel {
            template,
            labels,
            cutoff,
            decode_mask,
            feature_names,
            feature_index,
            store,
            weights,
            trans,
            mask,
            l2_coeff: 0.0,
        })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Set the coefficient of the `||w||^2` penalty included in each batch
    /// loss. For toolkit-style `c` regularization over `n` training
    /// sentences, this is `1 / (2 c n)`.
    pub fn set_l2_coeff(&mut self, coeff: f64) {
        self.l2_coeff = coeff;
    }

    pub fn contains_feature(&self, name: &str) -> bool {
        self.feature_index.contains_key(name)
    }

    /// Ids of the kept features active at `pos`; unknown features drop out.
    pub fn active_features(&self, tokens: &[String], pos: usize) -> Vec<usize> {
        extract_features(tokens, pos, &self.template)
            .into_iter()
            .filter_map(|f| self.feature_index.get(&f).copied())
            .collect()
    }

    /// Plain emission matrix: each row is the sum of the active features'
    /// weight rows (zero where nothing fires).
    pub fn emissions(&self, tokens: &[String]) -> Result<EmissionMatrix> {
        if tokens.is_empty() {
            return Err(Error::data("emissions of an empty sentence"));
        }
        let t = self.labels.len();
        let w = self.store.value(self.weights);
        let mut rows = Vec::with_capacity(tokens.len());
        for pos in 0..tokens.len() {
            let mut row = vec![0.0; t];
            for fid in self.active_features(tokens, pos) {
                for (j, slot) in row.iter_mut().enumerate() {
                    *slot += w.at2(fid, j);
                }
            }
            rows.push(row);
        }
        EmissionMatrix::from_rows(&rows)
    }

    pub fn crf_params(&self) -> CrfParams {
        CrfParams::from_tensor(self.store.value(self.trans).clone(), self.labels.len())
            .expect("stored transition shape")
    }

    fn gold_ids(&self, sentence: &LabeledSentence) -> Result<Vec<usize>> {
        sentence
            .labels
            .iter()
            .map(|l| {
                self.labels
                    .iter()
                    .position(|x| x == l)
                    .ok_or_else(|| Error::data(format!("label {l:?} not in training label set")))
            })
            .collect()
    }
}

/// Build and train the sparse baseline in one call: features are counted
/// and cut off on `train`, the toolkit-style `c` becomes an L2 penalty of
/// `1/(2c)` spread over the epoch, and the shared training loop runs with
/// early stopping on dev F1. Returns the best model and its history.
pub fn baseline_train(
    train: &[LabeledSentence],
    dev: &[LabeledSentence],
    template: FeatureTemplate,
    cutoff: usize,
    decode_mask: bool,
    c: f64,
    tcfg: &crate::train::TrainConfig,
) -> Result<(SparseCrfModel, crate::train::TrainOutcome)> {
    if c <= 0.0 {
        return Err(Error::Config(format!("c must be positive, got {c}")));
    }
    let mut model = SparseCrfModel::build(train, template, cutoff, decode_mask)?;
    model.set_l2_coeff(1.0 / (2.0 * c * train.len() as f64));
    let outcome = crate::train::train_loop(&mut model, train, dev, tcfg)?;
    Ok((model, outcome))
}

impl TrainableModel for SparseCrfModel {
    fn loss_on_tape(
        &self,
        tape: &mut Tape,
        batch: &[LabeledSentence],
        ctx: &mut StepCtx,
    ) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::data("loss over an empty batch"));
        }
        let t = self.labels.len();
        let weights = tape.param(&self.store, self.weights);
        let trans = tape.param(&self.store, self.trans);
        let train_mask = if ctx.train_mask {
            self.mask.as_ref()
        } else {
            None
        };
        let mut total: Option<Var> = None;
        for sentence in batch {
            let gold = self.gold_ids(sentence)?;
            let rows: Vec<Var> = (0..sentence.len())
                .map(|pos| {
                    let active = self.active_features(&sentence.tokens, pos);
                    tape.sum_rows(weights, &active)
                })
                .collect::<Result<_>>()?;
            let loss = crf::nll_on_tape(tape, &rows, trans, &gold, t, train_mask)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, loss)?,
                None => loss,
            });
        }
        let mut loss = tape.scale(total.unwrap(), 1.0 / batch.len() as f64);
        if self.l2_coeff > 0.0 {
            let sq = tape.mul(weights, weights)?;
            let ssq = tape.sum_all(sq);
            let penalty = tape.scale(ssq, self.l2_coeff);
            loss = tape.add(loss, penalty)?;
        }
        Ok(loss)
    }

    fn predict(&self, tokens: &[String]) -> Vec<String> {
        if tokens.is_empty() {
            return Vec::new();
        }
        let emissions = self
            .emissions(tokens)
            .expect("non-empty sentence has emissions");
        let params = self.crf_params();
        let (path, _) = crf::viterbi_decode(&emissions, &params, self.mask.as_ref())
            .expect("emissions and transitions are consistent by construction");
        path.iter().map(|&i| self.labels[i].clone()).collect()
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn frozen_rows(&self) -> Vec<(ParamId, usize)> {
        Vec::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn s(tokens: &[&str], labels: &[&str]) -> LabeledSentence {
        LabeledSentence::new(
            tokens.iter().map(|t| t.to_string()).collect(),
            labels.iter().map(|l| l.to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn window_features_with_boundary_padding() {
        let tokens: Vec<String> = vec!["\u{101B}\u{1014}\u{103A}".into(), "\u{1000}".into()];
        let feats = extract_features(&tokens, 0, &FeatureTemplate::default());
        assert_eq!(
            feats,
            vec![
                "U[-2]=<BOS>",
                "U[-1]=<BOS>",
                "U[0]=\u{101B}\u{1014}\u{103A}",
                "U[1]=\u{1000}",
                "U[2]=<EOS>",
            ]
        );
        // middle of a 5-token sentence: all real tokens
        let five: Vec<String> = (0..5).map(|i| format!("t{i}")).collect();
        let mid = extract_features(&five, 2, &FeatureTemplate::default());
        assert_eq!(mid, vec!["U[-2]=t0", "U[-1]=t1", "U[0]=t2", "U[1]=t3", "U[2]=t4"]);
    }

    #[test]
    fn gazetteer_features_fire_on_membership() {
        let tokens: Vec<String> = vec!["a".into(), "b".into()];
        let template = FeatureTemplate {
            offsets: vec![0, 1],
            gazetteers: vec![Gazetteer::new("places", ["b".to_string()])],
        };
        let feats = extract_features(&tokens, 0, &template);
        assert!(feats.contains(&"G[1]:places".to_string()));
        assert!(!feats.contains(&"G[0]:places".to_string()));
    }

    #[test]
    fn gazetteer_loads_from_text() {
        let text = "one\n\n# comment\n two \n";
        let gaz = Gazetteer::load("g", text.as_bytes()).unwrap();
        assert!(gaz.contains("one"));
        assert!(gaz.contains("two"));
        assert!(!gaz.contains("# comment"));
    }

    #[test]
    fn cutoff_removes_rare_features() {
        // "a" appears twice as U[0]; with cutoff 3 it is absent
        let train = vec![s(&["a"], &["O"]), s(&["a"], &["O"])];
        let model = SparseCrfModel::build(&train, FeatureTemplate::default(), 3, true).unwrap();
        assert!(!model.contains_feature("U[0]=a"));

        let kept = SparseCrfModel::build(&train, FeatureTemplate::default(), 2, true).unwrap();
        assert!(kept.contains_feature("U[0]=a"));
        assert!(kept.contains_feature("U[-1]=<BOS>"));
    }

    #[test]
    fn zero_weights_zero_emissions() {
        let train = vec![s(&["a", "b"], &["O", "S-NUM"])];
        let model = SparseCrfModel::build(&train, FeatureTemplate::default(), 1, true).unwrap();
        let e = model.emissions(&train[0].tokens).unwrap();
        for i in 0..2 {
            for j in 0..model.labels.len() {
                assert_eq!(e.at(i, j), 0.0);
            }
        }
    }

    #[test]
    fn single_feature_weight_shows_in_emissions() {
        let train = vec![s(&["a"], &["O"])];
        let mut model = SparseCrfModel::build(&train, FeatureTemplate::default(), 1, true).unwrap();
        let fid = model.feature_index["U[0]=a"];
        let w = model.store.value_mut(model.weights);
        w.set2(fid, 0, 1.0);
        let tokens = vec!["a".to_string()];
        let e = model.emissions(&tokens).unwrap();
        assert_eq!(e.at(0, 0), 1.0);
    }

    #[test]
    fn emissions_match_dot_product_oracle() {
        let train = vec![
            s(&["a", "b", "c"], &["O", "B-LOC", "E-LOC"]),
            s(&["b", "c", "a"], &["O", "O", "S-NUM"]),
        ];
        let mut model = SparseCrfModel::build(&train, FeatureTemplate::default(), 1, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let rows = model.n_features();
        let t = model.labels.len();
        *model.store.value_mut(model.weights) = Tensor::uniform(&[rows, t], -1.0, 1.0, &mut rng);

        let tokens: Vec<String> = vec!["c".into(), "a".into()];
        let e = model.emissions(&tokens).unwrap();
        let w = model.store.value(model.weights);
        for pos in 0..tokens.len() {
            let names = extract_features(&tokens, pos, &model.template);
            for j in 0..t {
                let expected: f64 = names
                    .iter()
                    .filter_map(|n| model.feature_index.get(n))
                    .map(|&fid| w.at2(fid, j))
                    .sum();
                assert!((e.at(pos, j) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unseen_features_contribute_nothing() {
        let train = vec![s(&["a"], &["O"])];
        let model = SparseCrfModel::build(&train, FeatureTemplate::default(), 1, true).unwrap();
        let seen = model.emissions(&vec!["zzz".to_string()]).unwrap();
        // only boundary-padding features can fire; the U[0] identity is unseen
        assert!(!model.contains_feature("U[0]=zzz"));
        assert_eq!(seen.n_tokens(), 1);
    }

    #[test]
    fn baseline_gradients_pass_grad_check() {
        let train = vec![
            s(&["a", "b"], &["B-LOC", "E-LOC"]),
            s(&["c"], &["S-NUM"]),
            s(&["b", "c"], &["O", "O"]),
        ];
        let mut model = SparseCrfModel::build(&train, FeatureTemplate::default(), 1, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let rows = model.n_features();
        let t = model.labels.len();
        *model.store.value_mut(model.weights) = Tensor::uniform(&[rows, t], -0.5, 0.5, &mut rng);
        model.set_l2_coeff(0.01);

        let batch = train.clone();
        let mut probe = model.store.clone();
        // swap the probe store in and out so the closure sees perturbations
        let err = crate::tensor::grad_check(
            &mut probe,
            |tape, store| {
                let shadow = SparseCrfModel {
                    template: model.template.clone(),
                    labels: model.labels.clone(),
                    cutoff: model.cutoff,
                    decode_mask: model.decode_mask,
                    feature_names: model.feature_names.clone(),
                    feature_index: model.feature_index.clone(),
                    store: store.clone(),
                    weights: model.weights,
                    trans: model.trans,
                    mask: None,
                    l2_coeff: model.l2_coeff,
                };
                let mut rng2 = ChaCha8Rng::seed_from_u64(0);
                let mut ctx = StepCtx::eval(&mut rng2);
                shadow.loss_on_tape(tape, &batch, &mut ctx)
            },
            1e-5,
            Some(60),
            0,
        )
        .unwrap();
        assert!(err <= 1e-5, "baseline grad check error {err}");
    }
}
