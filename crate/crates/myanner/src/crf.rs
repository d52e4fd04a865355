//! Linear-chain CRF: sequence scoring, forward log-partition, negative
//! log-likelihood and Viterbi decoding.
//!
//! A path score is the sum of per-position emission scores and tag-pair
//! transition scores, with explicit START and STOP states for the boundary
//! transitions. The same potentials serve the neural taggers (emissions from
//! the BiLSTM projection) and the sparse-feature baseline (emissions from
//! feature weights).

use crate::corpus::Scheme;
use crate::tensor::{log_sum_exp_slice, Tape, Tensor, Var};
use crate::{Error, Result};

use crate::corpus::labels::LabelKind;

/// Additive score for transitions that must never win.
pub const BLOCKED_SCORE: f64 = -1.0e4;

/// Transition potentials over `T` labels plus START and STOP states.
///
/// Layout is `[(T+2) x (T+2)]`, indexed `[from][to]`; row `T` is START
/// (row-only use) and row/column `T+1` is STOP (column-only use).
/// Transitions into START and out of STOP are pinned at [`BLOCKED_SCORE`];
/// no scoring path ever reads them, so they stay pinned under training.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfParams {
    trans: Tensor,
    n_labels: usize,
}

impl CrfParams {
    pub fn new_zero(n_labels: usize) -> CrfParams {
        let mut p = CrfParams {
            trans: Tensor::zeros(&[n_labels + 2, n_labels + 2]),
            n_labels,
        };
        p.pin_blocked();
        p
    }

    /// Wrap an existing `[(T+2) x (T+2)]` transition tensor.
    pub fn from_tensor(trans: Tensor, n_labels: usize) -> Result<CrfParams> {
        if trans.shape() != [n_labels + 2, n_labels + 2] {
            return Err(Error::shape(format!(
                "transition tensor {:?} does not match {} labels",
                trans.shape(),
                n_labels
            )));
        }
        Ok(CrfParams { trans, n_labels })
    }

    fn pin_blocked(&mut self) {
        let (start, stop) = (self.start_state(), self.stop_state());
        for i in 0..self.n_labels + 2 {
            self.trans.set2(i, start, BLOCKED_SCORE);
            self.trans.set2(stop, i, BLOCKED_SCORE);
        }
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn start_state(&self) -> usize {
        self.n_labels
    }

    pub fn stop_state(&self) -> usize {
        self.n_labels + 1
    }

    pub fn trans(&self) -> &Tensor {
        &self.trans
    }

    pub fn trans_mut(&mut self) -> &mut Tensor {
        &mut self.trans
    }

    pub fn score(&self, from: usize, to: usize) -> f64 {
        self.trans.at2(from, to)
    }
}

/// Per-position, per-label scores for one sentence: `[n x T]`, n >= 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionMatrix {
    scores: Tensor,
}

impl EmissionMatrix {
    pub fn new(scores: Tensor) -> Result<EmissionMatrix> {
        if scores.shape().len() != 2 {
            return Err(Error::shape(format!(
                "emission matrix must be 2-D, got {:?}",
                scores.shape()
            )));
        }
        Ok(EmissionMatrix { scores })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<EmissionMatrix> {
        if rows.is_empty() {
            return Err(Error::data("emission matrix needs at least one row"));
        }
        let t = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * t);
        for row in rows {
            if row.len() != t {
                return Err(Error::shape("ragged emission rows"));
            }
            data.extend_from_slice(row);
        }
        EmissionMatrix::new(Tensor::from_vec(&[rows.len(), t], data)?)
    }

    pub fn n_tokens(&self) -> usize {
        self.scores.rows()
    }

    pub fn n_labels(&self) -> usize {
        self.scores.cols()
    }

    pub fn at(&self, pos: usize, label: usize) -> f64 {
        self.scores.at2(pos, label)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.scores
    }
}

fn check_instance(e: &EmissionMatrix, p: &CrfParams) -> Result<()> {
    if e.n_labels() != p.n_labels() {
        return Err(Error::shape(format!(
            "emissions over {} labels, transitions over {}",
            e.n_labels(),
            p.n_labels()
        )));
    }
    Ok(())
}

fn check_tags(e: &EmissionMatrix, tags: &[usize]) -> Result<()> {
    if tags.len() != e.n_tokens() {
        return Err(Error::data(format!(
            "{} tags for {} tokens",
            tags.len(),
            e.n_tokens()
        )));
    }
    if let Some(&bad) = tags.iter().find(|&&t| t >= e.n_labels()) {
        return Err(Error::data(format!("tag id {bad} out of range")));
    }
    Ok(())
}

/// Path score: emissions plus transitions including START and STOP.
///
/// Accumulation is strictly left to right (START transition, emission,
/// transition, emission, ..., STOP transition) so independently computed
/// per-path sums agree bit-for-bit.
pub fn score_sequence(e: &EmissionMatrix, p: &CrfParams, tags: &[usize]) -> Result<f64> {
    check_instance(e, p)?;
    check_tags(e, tags)?;
    let mut acc = p.score(p.start_state(), tags[0]);
    acc += e.at(0, tags[0]);
    for t in 1..tags.len() {
        acc += p.score(tags[t - 1], tags[t]);
        acc += e.at(t, tags[t]);
    }
    acc += p.score(tags[tags.len() - 1], p.stop_state());
    Ok(acc)
}

/// Log of the summed exponentiated scores over all `T^n` paths, via the
/// forward recursion with a log-sum-exp at every step.
pub fn forward_log_partition(e: &EmissionMatrix, p: &CrfParams) -> Result<f64> {
    check_instance(e, p)?;
    let (n, t) = (e.n_tokens(), e.n_labels());
    let start = p.start_state();
    let mut alpha: Vec<f64> = (0..t).map(|j| p.score(start, j) + e.at(0, j)).collect();
    let mut col = vec![0.0; t];
    for pos in 1..n {
        let mut next = vec![0.0; t];
        for j in 0..t {
            for (i, a) in alpha.iter().enumerate() {
                col[i] = a + p.score(i, j);
            }
            next[j] = log_sum_exp_slice(&col) + e.at(pos, j);
        }
        alpha = next;
    }
    let finals: Vec<f64> = alpha
        .iter()
        .enumerate()
        .map(|(j, a)| a + p.score(j, p.stop_state()))
        .collect();
    Ok(log_sum_exp_slice(&finals))
}

/// Negative log-likelihood of the gold path: `logZ - score(gold)`.
pub fn crf_nll(e: &EmissionMatrix, p: &CrfParams, gold: &[usize]) -> Result<f64> {
    Ok(forward_log_partition(e, p)? - score_sequence(e, p, gold)?)
}

/// Boolean transition mask over labels plus START/STOP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionMask {
    allowed: Vec<bool>,
    n_labels: usize,
}

impl TransitionMask {
    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn is_allowed(&self, from: usize, to: usize) -> bool {
        self.allowed[from * (self.n_labels + 2) + to]
    }

    /// Additive penalty tensor: 0 where allowed, [`BLOCKED_SCORE`] otherwise.
    pub fn penalty_tensor(&self) -> Tensor {
        let side = self.n_labels + 2;
        let data = self
            .allowed
            .iter()
            .map(|&a| if a { 0.0 } else { BLOCKED_SCORE })
            .collect();
        Tensor::from_vec(&[side, side], data).expect("mask shape")
    }
}

/// Build the IOBES legality mask for a label list.
///
/// Allowed moves: anything that is outside or just closed a chunk (O, E-*,
/// S-*, START) may go to O, B-*, S-* or STOP; an open chunk (B-X, I-X) may
/// only continue as I-X or close as E-X.
pub fn iobes_transition_mask(labels: &[String]) -> Result<TransitionMask> {
    let t = labels.len();
    let kinds: Vec<LabelKind> = labels
        .iter()
        .map(|l| LabelKind::parse(l))
        .collect::<Result<_>>()?;
    let side = t + 2;
    let mut allowed = vec![false; side * side];
    let closed_to = |kind: &LabelKind| {
        matches!(
            kind,
            LabelKind::Outside | LabelKind::Begin(_) | LabelKind::Single(_)
        )
    };
    for from in 0..t {
        for to in 0..t {
            let ok = match &kinds[from] {
                LabelKind::Outside | LabelKind::End(_) | LabelKind::Single(_) => {
                    closed_to(&kinds[to])
                }
                LabelKind::Begin(x) | LabelKind::Inside(x) => match &kinds[to] {
                    LabelKind::Inside(y) | LabelKind::End(y) => x == y,
                    _ => false,
                },
            };
            allowed[from * side + to] = ok;
        }
        // into STOP: only from closed states
        allowed[from * side + t + 1] = matches!(
            &kinds[from],
            LabelKind::Outside | LabelKind::End(_) | LabelKind::Single(_)
        );
        // START behaves like a closed state
        allowed[t * side + from] = closed_to(&kinds[from]);
    }
    Ok(TransitionMask {
        allowed,
        n_labels: t,
    })
}

/// Mask for the scheme in use (IOB2 chunks close implicitly, so its mask
/// additionally allows open -> O / B-* moves).
pub fn transition_mask(labels: &[String], scheme: Scheme) -> Result<TransitionMask> {
    match scheme {
        Scheme::Iobes => iobes_transition_mask(labels),
        Scheme::Iob2 => {
            let t = labels.len();
            let kinds: Vec<LabelKind> = labels
                .iter()
                .map(|l| LabelKind::parse(l))
                .collect::<Result<_>>()?;
            let side = t + 2;
            let mut allowed = vec![false; side * side];
            for from in 0..t {
                for to in 0..t {
                    let ok = match &kinds[to] {
                        LabelKind::Outside | LabelKind::Begin(_) => true,
                        LabelKind::Inside(y) => match &kinds[from] {
                            LabelKind::Begin(x) | LabelKind::Inside(x) => x == y,
                            _ => false,
                        },
                        _ => false,
                    };
                    allowed[from * side + to] = ok;
                }
                allowed[from * side + t + 1] = true;
                allowed[t * side + from] = matches!(
                    &kinds[from],
                    LabelKind::Outside | LabelKind::Begin(_)
                );
            }
            Ok(TransitionMask {
                allowed,
                n_labels: t,
            })
        }
    }
}

/// Maximum-score path and its score. Ties break toward the lowest label id
/// at the final state and at every backtrack step. With a mask, disallowed
/// transitions are penalized by [`BLOCKED_SCORE`] before decoding.
pub fn viterbi_decode(
    e: &EmissionMatrix,
    p: &CrfParams,
    mask: Option<&TransitionMask>,
) -> Result<(Vec<usize>, f64)> {
    check_instance(e, p)?;
    if let Some(m) = mask {
        if m.n_labels() != p.n_labels() {
            return Err(Error::shape("mask size does not match label count"));
        }
    }
    let (n, t) = (e.n_tokens(), e.n_labels());
    let eff = |from: usize, to: usize| -> f64 {
        let penalty = match mask {
            Some(m) if !m.is_allowed(from, to) => BLOCKED_SCORE,
            _ => 0.0,
        };
        p.score(from, to) + penalty
    };

    let mut delta: Vec<f64> = (0..t)
        .map(|j| eff(p.start_state(), j) + e.at(0, j))
        .collect();
    let mut backpointers: Vec<Vec<usize>> = Vec::with_capacity(n.saturating_sub(1));
    for pos in 1..n {
        let mut next = vec![0.0; t];
        let mut bp = vec![0usize; t];
        for j in 0..t {
            let mut best = f64::NEG_INFINITY;
            let mut best_i = 0;
            for (i, d) in delta.iter().enumerate() {
                let cand = d + eff(i, j);
                if cand > best {
                    best = cand;
                    best_i = i;
                }
            }
            next[j] = best + e.at(pos, j);
            bp[j] = best_i;
        }
        delta = next;
        backpointers.push(bp);
    }

    let mut best = f64::NEG_INFINITY;
    let mut best_j = 0;
    for (j, d) in delta.iter().enumerate() {
        let cand = d + eff(j, p.stop_state());
        if cand > best {
            best = cand;
            best_j = j;
        }
    }
    let mut path = vec![best_j];
    for bp in backpointers.iter().rev() {
        path.push(bp[*path.last().unwrap()]);
    }
    path.reverse();
    Ok((path, best))
}

// ---- tape-recorded versions for training ------------------------------

/// Gold-path score recorded on the tape, differentiable w.r.t. the emission
/// rows and the transition tensor. Pick order mirrors [`score_sequence`].
pub fn score_on_tape(
    tape: &mut Tape,
    emission_rows: &[Var],
    trans: Var,
    gold: &[usize],
    n_labels: usize,
) -> Result<Var> {
    let n = emission_rows.len();
    if n == 0 || gold.len() != n {
        return Err(Error::data("gold tags must align with emission rows"));
    }
    if let Some(&bad) = gold.iter().find(|&&g| g >= n_labels) {
        return Err(Error::data(format!("gold tag id {bad} out of range")));
    }
    let (start, stop) = (n_labels, n_labels + 1);
    let mut parts = Vec::with_capacity(2 * n + 1);
    parts.push(tape.gather2(trans, &[(start, gold[0])])?);
    parts.push(tape.gather1(emission_rows[0], &[gold[0]])?);
    for t in 1..n {
        parts.push(tape.gather2(trans, &[(gold[t - 1], gold[t])])?);
        parts.push(tape.gather1(emission_rows[t], &[gold[t]])?);
    }
    parts.push(tape.gather2(trans, &[(gold[n - 1], stop)])?);
    let all = tape.concat(&parts)?;
    Ok(tape.sum_all(all))
}

/// Log-partition recorded on the tape. Mirrors [`forward_log_partition`].
pub fn log_partition_on_tape(
    tape: &mut Tape,
    emission_rows: &[Var],
    trans: Var,
    n_labels: usize,
) -> Result<Var> {
    let n = emission_rows.len();
    if n == 0 {
        return Err(Error::data("log partition of an empty sentence"));
    }
    let t = n_labels;
    let (start, stop) = (t, t + 1);
    let block = tape.submatrix(trans, 0, t, 0, t)?;
    let start_coords: Vec<(usize, usize)> = (0..t).map(|j| (start, j)).collect();
    let start_row = tape.gather2(trans, &start_coords)?;
    let mut alpha = tape.add(start_row, emission_rows[0])?;
    for row in emission_rows.iter().skip(1) {
        let scored = tape.add_col(block, alpha)?;
        let reduced = tape.log_sum_exp_axis0(scored)?;
        alpha = tape.add(reduced, *row)?;
    }
    let stop_coords: Vec<(usize, usize)> = (0..t).map(|j| (j, stop)).collect();
    let stop_col = tape.gather2(trans, &stop_coords)?;
    let finals = tape.add(alpha, stop_col)?;
    tape.log_sum_exp(finals)
}

/// CRF negative log-likelihood on the tape: `logZ - score(gold)`.
///
/// `train_mask`, when given, applies the transition legality penalty during
/// training as well (decode-time masking is the default elsewhere).
pub fn nll_on_tape(
    tape: &mut Tape,
    emission_rows: &[Var],
    trans: Var,
    gold: &[usize],
    n_labels: usize,
    train_mask: Option<&TransitionMask>,
) -> Result<Var> {
    let trans_eff = match train_mask {
        Some(mask) => {
            let penalty = tape.constant(mask.penalty_tensor());
            tape.add(trans, penalty)?
        }
        None => trans,
    };
    let log_z = log_partition_on_tape(tape, emission_rows, trans_eff, n_labels)?;
    let gold_score = score_on_tape(tape, emission_rows, trans_eff, gold, n_labels)?;
    tape.sub(log_z, gold_score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn zeros_instance(n: usize, t: usize) -> (EmissionMatrix, CrfParams) {
        (
            EmissionMatrix::new(Tensor::zeros(&[n, t])).unwrap(),
            CrfParams::new_zero(t),
        )
    }

    fn random_instance(
        rng: &mut ChaCha8Rng,
        n: usize,
        t: usize,
        spread: f64,
    ) -> (EmissionMatrix, CrfParams) {
        let e = EmissionMatrix::new(Tensor::uniform(&[n, t], -spread, spread, rng)).unwrap();
        let mut p = CrfParams::new_zero(t);
        for i in 0..t + 1 {
            for j in 0..t + 2 {
                if j == p.start_state() {
                    continue;
                }
                let v = rng.random_range(-spread..spread);
                p.trans_mut().set2(i, j, v);
            }
        }
        (e, p)
    }

    /// Enumerate all T^n paths; returns (best_path, best_score, log_z)
    /// computed with the same left-to-right accumulation as the library.
    fn brute_force(e: &EmissionMatrix, p: &CrfParams) -> (Vec<usize>, f64, f64) {
        let (n, t) = (e.n_tokens(), e.n_labels());
        let mut path = vec![0usize; n];
        let mut best_path = path.clone();
        let mut best_score = f64::NEG_INFINITY;
        let mut scores = Vec::new();
        loop {
            let mut acc = p.score(p.start_state(), path[0]) + e.at(0, path[0]);
            for i in 1..n {
                acc += p.score(path[i - 1], path[i]);
                acc += e.at(i, path[i]);
            }
            acc += p.score(path[n - 1], p.stop_state());
            scores.push(acc);
            let better = acc > best_score
                || (acc == best_score && {
                    // viterbi breaks ties backward: compare reversed paths
                    let mut a = path.clone();
                    let mut b = best_path.clone();
                    a.reverse();
                    b.reverse();
                    a < b
                });
            if better {
                best_score = acc;
                best_path = path.clone();
            }
            // odometer
            let mut k = n;
            loop {
                if k == 0 {
                    return (best_path, best_score, log_sum_exp_slice(&scores));
                }
                k -= 1;
                path[k] += 1;
                if path[k] < t {
                    break;
                }
                path[k] = 0;
            }
        }
    }

    #[test]
    fn zero_potentials_score_zero() {
        let (e, p) = zeros_instance(3, 4);
        for tags in [[0, 0, 0], [1, 2, 3], [3, 3, 3]] {
            assert_eq!(score_sequence(&e, &p, &tags).unwrap(), 0.0);
        }
    }

    #[test]
    fn single_token_score() {
        let e = EmissionMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let p = CrfParams::new_zero(2);
        assert_eq!(score_sequence(&e, &p, &[1]).unwrap(), 2.0);
    }

    #[test]
    fn score_matches_term_by_term_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.random_range(1..=6);
            let t = rng.random_range(2..=5);
            let (e, p) = random_instance(&mut rng, n, t, 3.0);
            let tags: Vec<usize> = (0..n).map(|_| rng.random_range(0..t)).collect();
            // independent summation: collect all terms, then sum
            let mut terms = vec![p.score(p.start_state(), tags[0])];
            for (i, &tag) in tags.iter().enumerate() {
                if i > 0 {
                    terms.push(p.score(tags[i - 1], tag));
                }
                terms.push(e.at(i, tag));
            }
            terms.push(p.score(tags[n - 1], p.stop_state()));
            let oracle: f64 = terms.iter().sum();
            let got = score_sequence(&e, &p, &tags).unwrap();
            assert!((got - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn score_sequence_rejects_bad_tags() {
        let (e, p) = zeros_instance(2, 3);
        assert!(score_sequence(&e, &p, &[0]).is_err());
        assert!(score_sequence(&e, &p, &[0, 3]).is_err());
    }

    #[test]
    fn uniform_partition_closed_form() {
        let (e, p) = zeros_instance(2, 4);
        let log_z = forward_log_partition(&e, &p).unwrap();
        assert!((log_z - 16.0f64.ln()).abs() < 1e-12);
        // single token: lse of the emission row
        let e1 = EmissionMatrix::from_rows(&[vec![0.5, -1.0, 2.0]]).unwrap();
        let p1 = CrfParams::new_zero(3);
        let expected = log_sum_exp_slice(&[0.5, -1.0, 2.0]);
        assert!((forward_log_partition(&e1, &p1).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn partition_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..40 {
            let n = rng.random_range(1..=6);
            let t = rng.random_range(2..=5);
            let (e, p) = random_instance(&mut rng, n, t, 3.0);
            let (_, best, log_z) = brute_force(&e, &p);
            let got = forward_log_partition(&e, &p).unwrap();
            assert!(
                (got - log_z).abs() <= 1e-8,
                "logZ {got} vs brute {log_z} (n={n}, t={t})"
            );
            // partition dominates every path
            assert!(got >= best - 1e-12);
        }
    }

    #[test]
    fn path_probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (e, p) = random_instance(&mut rng, 4, 3, 2.0);
        let log_z = forward_log_partition(&e, &p).unwrap();
        let mut total = 0.0;
        let mut path = vec![0usize; 4];
        loop {
            total += (score_sequence(&e, &p, &path).unwrap() - log_z).exp();
            let mut k = 4;
            loop {
                if k == 0 {
                    assert!((total - 1.0).abs() < 1e-9, "prob mass {total}");
                    return;
                }
                k -= 1;
                path[k] += 1;
                if path[k] < 3 {
                    break;
                }
                path[k] = 0;
            }
        }
    }

    #[test]
    fn nll_uniform_and_saturated() {
        let (e, p) = zeros_instance(2, 4);
        let loss = crf_nll(&e, &p, &[1, 2]).unwrap();
        assert!((loss - 16.0f64.ln()).abs() < 1e-12);

        // emissions strongly favoring gold drive the loss to zero
        let mut rows = vec![vec![0.0; 4]; 3];
        let gold = [2usize, 0, 3];
        for (i, &g) in gold.iter().enumerate() {
            rows[i][g] = 100.0;
        }
        let e = EmissionMatrix::from_rows(&rows).unwrap();
        let loss = crf_nll(&e, &p, &gold).unwrap();
        assert!(loss >= 0.0);
        assert!(loss <= 1e-6, "saturated loss {loss}");
    }

    #[test]
    fn nll_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..30 {
            let n = rng.random_range(1..=5);
            let t = rng.random_range(2..=5);
            let (e, p) = random_instance(&mut rng, n, t, 3.0);
            let tags: Vec<usize> = (0..n).map(|_| rng.random_range(0..t)).collect();
            assert!(crf_nll(&e, &p, &tags).unwrap() >= 0.0);
        }
    }

    #[test]
    fn viterbi_decoupled_chain_is_positionwise_argmax() {
        let e = EmissionMatrix::from_rows(&[
            vec![0.1, 0.9, 0.0],
            vec![2.0, 0.5, 1.0],
            vec![-1.0, -0.5, -0.2],
        ])
        .unwrap();
        let p = CrfParams::new_zero(3);
        let (path, score) = viterbi_decode(&e, &p, None).unwrap();
        assert_eq!(path, vec![1, 0, 2]);
        assert!((score - (0.9 + 2.0 - 0.2)).abs() < 1e-12);
    }

    #[test]
    fn viterbi_all_equal_takes_lowest_ids() {
        let (e, p) = zeros_instance(4, 3);
        let (path, score) = viterbi_decode(&e, &p, None).unwrap();
        assert_eq!(path, vec![0, 0, 0, 0]);
        assert_eq!(score, 0.0);
    }

    #[test]
    fn viterbi_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..40 {
            let n = rng.random_range(1..=6);
            let t = rng.random_range(2..=5);
            let (e, p) = random_instance(&mut rng, n, t, 3.0);
            let (brute_path, brute_score, _) = brute_force(&e, &p);
            let (path, score) = viterbi_decode(&e, &p, None).unwrap();
            assert_eq!(score, brute_score, "exact score equality");
            assert_eq!(path, brute_path);
            // decoded score equals score_sequence of the decoded path
            assert_eq!(score, score_sequence(&e, &p, &path).unwrap());
        }
    }

    #[test]
    fn emission_shift_invariance() {
        // adding a constant to every emission shifts logZ and all path
        // scores by n*c, leaving the NLL and the argmax unchanged
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let (e, p) = random_instance(&mut rng, 5, 4, 2.0);
        let c = 0.73;
        let shifted_rows: Vec<Vec<f64>> = (0..5)
            .map(|i| (0..4).map(|j| e.at(i, j) + c).collect())
            .collect();
        let shifted = EmissionMatrix::from_rows(&shifted_rows).unwrap();
        let tags = [1usize, 3, 0, 2, 2];

        let dz = forward_log_partition(&shifted, &p).unwrap()
            - forward_log_partition(&e, &p).unwrap();
        assert!((dz - 5.0 * c).abs() < 1e-9);
        let ds =
            score_sequence(&shifted, &p, &tags).unwrap() - score_sequence(&e, &p, &tags).unwrap();
        assert!((ds - 5.0 * c).abs() < 1e-9);
        let dn = crf_nll(&shifted, &p, &tags).unwrap() - crf_nll(&e, &p, &tags).unwrap();
        assert!(dn.abs() < 1e-9);
        assert_eq!(
            viterbi_decode(&e, &p, None).unwrap().0,
            viterbi_decode(&shifted, &p, None).unwrap().0
        );
    }

    #[test]
    fn iobes_mask_rules() {
        let labels: Vec<String> = ["B-LOC", "E-LOC", "B-ORG", "E-ORG", "I-PNAME", "O", "S-NUM"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mask = iobes_transition_mask(&labels).unwrap();
        let id = |l: &str| labels.iter().position(|x| x == l).unwrap();
        let (start, stop) = (labels.len(), labels.len() + 1);

        assert!(mask.is_allowed(id("B-LOC"), id("E-LOC")));
        assert!(!mask.is_allowed(id("B-LOC"), id("E-ORG")));
        assert!(!mask.is_allowed(id("O"), id("I-PNAME")));
        assert!(!mask.is_allowed(id("B-LOC"), id("O")));
        assert!(!mask.is_allowed(id("B-LOC"), stop));
        assert!(mask.is_allowed(id("E-LOC"), id("B-ORG")));
        assert!(mask.is_allowed(id("S-NUM"), stop));
        assert!(mask.is_allowed(start, id("O")));
        assert!(mask.is_allowed(start, id("B-LOC")));
        assert!(!mask.is_allowed(start, id("I-PNAME")));
        assert!(mask.is_allowed(id("O"), stop));

        assert!(iobes_transition_mask(&["Q-LOC".to_string()]).is_err());
    }

    #[test]
    fn masked_decode_emits_valid_sequences() {
        use crate::corpus::{validate_labels, Scheme};
        let labels: Vec<String> = ["B-LOC", "E-LOC", "I-LOC", "O", "S-NUM"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mask = iobes_transition_mask(&labels).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for _ in 0..50 {
            let n = rng.random_range(1..=8);
            let (e, p) = random_instance(&mut rng, n, labels.len(), 3.0);
            let (path, _) = viterbi_decode(&e, &p, Some(&mask)).unwrap();
            let decoded: Vec<String> = path.iter().map(|&i| labels[i].clone()).collect();
            assert!(
                validate_labels(&decoded, Scheme::Iobes).is_empty(),
                "masked decode produced {decoded:?}"
            );
        }
    }

    #[test]
    fn tape_versions_match_plain_versions() {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        for _ in 0..20 {
            let n = rng.random_range(1..=5);
            let t = rng.random_range(2..=5);
            let (e, p) = random_instance(&mut rng, n, t, 2.0);
            let tags: Vec<usize> = (0..n).map(|_| rng.random_range(0..t)).collect();

            let mut tape = Tape::new();
            let trans = tape.constant(p.trans().clone());
            let rows: Vec<Var> = (0..n)
                .map(|i| {
                    let row: Vec<f64> = (0..t).map(|j| e.at(i, j)).collect();
                    tape.constant(Tensor::from_vec(&[t], row).unwrap())
                })
                .collect();
            let log_z = log_partition_on_tape(&mut tape, &rows, trans, t).unwrap();
            let score = score_on_tape(&mut tape, &rows, trans, &tags, t).unwrap();
            assert_eq!(
                tape.value(log_z).item(),
                forward_log_partition(&e, &p).unwrap()
            );
            assert_eq!(
                tape.value(score).item(),
                score_sequence(&e, &p, &tags).unwrap()
            );
        }
    }

    #[test]
    fn nll_gradient_equals_marginals_minus_indicators() {
        // d nll / d e[i][j] = P(y_i = j | x) - [gold_i == j], checked
        // against brute-force marginals on an enumerable instance
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let (n, t) = (4usize, 3usize);
        let (e, p) = random_instance(&mut rng, n, t, 2.0);
        let gold = [2usize, 0, 1, 1];

        let mut tape = Tape::new();
        let trans = tape.constant(p.trans().clone());
        let rows: Vec<Var> = (0..n)
            .map(|i| {
                let row: Vec<f64> = (0..t).map(|j| e.at(i, j)).collect();
                tape.leaf(Tensor::from_vec(&[t], row).unwrap(), true)
            })
            .collect();
        let loss = nll_on_tape(&mut tape, &rows, trans, &gold, t, None).unwrap();
        tape.backward(loss).unwrap();

        // brute-force marginals
        let log_z = forward_log_partition(&e, &p).unwrap();
        let mut marginals = vec![vec![0.0f64; t]; n];
        let mut path = vec![0usize; n];
        'outer: loop {
            let prob = (score_sequence(&e, &p, &path).unwrap() - log_z).exp();
            for (i, &y) in path.iter().enumerate() {
                marginals[i][y] += prob;
            }
            let mut k = n;
            loop {
                if k == 0 {
                    break 'outer;
                }
                k -= 1;
                path[k] += 1;
                if path[k] < t {
                    break;
                }
                path[k] = 0;
            }
        }
        for (i, row) in rows.iter().enumerate() {
            let grad = tape.grad(*row).unwrap();
            for j in 0..t {
                let expected = marginals[i][j] - if gold[i] == j { 1.0 } else { 0.0 };
                assert!(
                    (grad.data()[j] - expected).abs() < 1e-9,
                    "marginal mismatch at ({i},{j})"
                );
            }
        }
    }
}
