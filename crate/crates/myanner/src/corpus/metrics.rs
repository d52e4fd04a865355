//! Chunk-level precision / recall / F1 in the conlleval style: a predicted
//! span counts as correct only when start, end and type all match.

use std::collections::BTreeMap;

use super::{labels_to_spans, LabeledSentence};
use crate::{Error, Result};

/// Counts plus derived fractions for one slice of the evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PrfCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl PrfCounts {
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// Micro-averaged counts plus a per-type breakdown.
#[derive(Debug, Clone, Default)]
pub struct Metrics {
    pub micro: PrfCounts,
    pub per_type: BTreeMap<String, PrfCounts>,
}

impl Metrics {
    /// Unweighted mean of per-type F1 (macro averaging).
    pub fn macro_f1(&self) -> f64 {
        if self.per_type.is_empty() {
            return 0.0;
        }
        self.per_type.values().map(PrfCounts::f1).sum::<f64>() / self.per_type.len() as f64
    }
}

/// Score predictions against gold sentences. `pred` must align 1:1 with the
/// gold sentences in order and in length.
pub fn evaluate(gold: &[LabeledSentence], pred: &[Vec<String>]) -> Result<Metrics> {
    if gold.len() != pred.len() {
        return Err(Error::data(format!(
            "{} gold sentences but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    let mut metrics = Metrics::default();
    for (g, p) in gold.iter().zip(pred) {
        if g.len() != p.len() {
            return Err(Error::data(format!(
                "gold sentence has {} tokens but prediction has {}",
                g.len(),
                p.len()
            )));
        }
        let gold_spans = labels_to_spans(&g.labels);
        let pred_spans = labels_to_spans(p);

        for ps in &pred_spans {
            let entry = metrics
                .per_type
                .entry(ps.ne_type.as_str().to_string())
                .or_default();
            if gold_spans.contains(ps) {
                entry.tp += 1;
                metrics.micro.tp += 1;
            } else {
                entry.fp += 1;
                metrics.micro.fp += 1;
            }
        }
        for gs in &gold_spans {
            if !pred_spans.contains(gs) {
                metrics
                    .per_type
                    .entry(gs.ne_type.as_str().to_string())
                    .or_default()
                    .fn_ += 1;
                metrics.micro.fn_ += 1;
            }
        }
    }
    Ok(metrics)
}
