//! Per-option selection heads, the prediction matrix and the training loss.
//!
//! Channel 0 of every prediction pair means "select", channel 1 "not select".

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::Linear;
use crate::error::{Error, Result};
use crate::graph::{softmax_rows, Graph, Mat, ParamStore, Var};
use crate::reconstruct::LabelMatrix;

pub const SELECT: usize = 0;
pub const NOT_SELECT: usize = 1;
/// Lower clamp applied to probabilities before taking logs.
pub const LOG_EPS: f64 = 1e-12;

/// `k × N_O × 2` scores, stored row-major by position then option.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMatrix {
    k: usize,
    n_options: usize,
    scores: Vec<[f64; 2]>,
    normalized: bool,
}

impl PredictionMatrix {
    pub fn new(k: usize, n_options: usize, scores: Vec<[f64; 2]>, normalized: bool) -> Result<Self> {
        if scores.len() != k * n_options {
            return Err(Error::Shape(format!(
                "{} score pairs for a {k} × {n_options} matrix",
                scores.len()
            )));
        }
        Ok(Self {
            k,
            n_options,
            scores,
            normalized,
        })
    }

    /// Normalized matrix from per-cell select probabilities.
    pub fn from_select_probs(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("ragged probability rows".into()));
        }
        let scores = rows.iter().flatten().map(|&p| [p, 1.0 - p]).collect();
        Self::new(rows.len(), n, scores, true)
    }

    /// Normalized matrix from one `k × 2` probability block per option.
    pub fn from_option_probs(blocks: &[Mat]) -> Result<Self> {
        let k = blocks.first().map_or(0, Mat::nrows);
        if blocks.iter().any(|b| b.dim() != (k, 2)) {
            return Err(Error::Shape("option blocks must all be k × 2".into()));
        }
        let mut scores = Vec::with_capacity(k * blocks.len());
        for r in 0..k {
            for b in blocks {
                scores.push([b[[r, 0]], b[[r, 1]]]);
            }
        }
        Self::new(k, blocks.len(), scores, true)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_options(&self) -> usize {
        self.n_options
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.k, self.n_options, 2)
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn get(&self, row: usize, option: usize) -> [f64; 2] {
        self.scores[row * self.n_options + option]
    }

    pub fn set(&mut self, row: usize, option: usize, pair: [f64; 2]) {
        self.scores[row * self.n_options + option] = pair;
    }

    pub fn select_prob(&self, row: usize, option: usize) -> f64 {
        self.get(row, option)[SELECT]
    }

    /// The `k × 2` slice for one option.
    pub fn option_slice(&self, option: usize) -> Vec<[f64; 2]> {
        (0..self.k).map(|r| self.get(r, option)).collect()
    }

    /// Softmax over the last axis.
    pub fn normalize(&self) -> Self {
        if self.normalized {
            return self.clone();
        }
        let scores = self
            .scores
            .iter()
            .map(|&[a, b]| {
                let m = a.max(b);
                let (ea, eb) = ((a - m).exp(), (b - m).exp());
                [ea / (ea + eb), eb / (ea + eb)]
            })
            .collect();
        Self {
            scores,
            normalized: true,
            ..*self
        }
    }

    /// One-hot predictions that reproduce `labels` exactly.
    pub fn perfect(labels: &LabelMatrix) -> Self {
        let (k, n) = labels.shape();
        let scores = (0..k)
            .flat_map(|r| (0..n).map(move |i| (r, i)))
            .map(|(r, i)| if labels.get(r, i) == 1 { [1.0, 0.0] } else { [0.0, 1.0] })
            .collect();
        Self {
            k,
            n_options: n,
            scores,
            normalized: true,
        }
    }
}

/// One `d → 2` sub-head per catalog option, in catalog order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadParams {
    pub sub_heads: Vec<Linear>,
}

impl HeadParams {
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, d_model: usize, n_options: usize) -> Self {
        let sub_heads = (0..n_options)
            .map(|i| Linear::init(store, rng, &format!("head.opt{i}"), d_model, 2))
            .collect();
        Self { sub_heads }
    }
}

/// Select / not-select probabilities, one `k × 2` block per option.
pub fn predict_graph(g: &mut Graph, states: &[Var], head: &HeadParams) -> Result<Vec<Var>> {
    if states.len() != head.sub_heads.len() {
        return Err(Error::Shape(format!(
            "{} option states for {} sub-heads",
            states.len(),
            head.sub_heads.len()
        )));
    }
    states
        .iter()
        .zip(&head.sub_heads)
        .map(|(&s, sub)| {
            let logits = sub.forward(g, s)?;
            Ok(g.softmax_rows(logits))
        })
        .collect()
}

/// Plain-value prediction from enriched passage states.
pub fn predict(states: &[Mat], head: &HeadParams, store: &ParamStore) -> Result<PredictionMatrix> {
    if states.len() != head.sub_heads.len() {
        return Err(Error::Shape(format!(
            "{} option states for {} sub-heads",
            states.len(),
            head.sub_heads.len()
        )));
    }
    let blocks: Vec<Mat> = states
        .iter()
        .zip(&head.sub_heads)
        .map(|(s, sub)| {
            let logits = s.dot(store.get(sub.weight)) + store.get(sub.bias);
            softmax_rows(logits.view())
        })
        .collect();
    PredictionMatrix::from_option_probs(&blocks)
}

fn targets(labels: &[u8]) -> Vec<usize> {
    labels
        .iter()
        .map(|&l| if l == 1 { SELECT } else { NOT_SELECT })
        .collect()
}

/// Mean two-class cross-entropy over the `k` positions of one option.
pub fn cce_loss(pred: &[[f64; 2]], labels: &[u8]) -> Result<f64> {
    if pred.len() != labels.len() || pred.is_empty() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions for {} labels",
            pred.len(),
            labels.len()
        )));
    }
    let total: f64 = pred
        .iter()
        .zip(targets(labels))
        .map(|(pair, t)| -crate::graph::clamp_nan(pair[t], LOG_EPS).ln())
        .sum();
    Ok(total / pred.len() as f64)
}

/// Sum of per-option losses.
pub fn overall_loss(pred: &PredictionMatrix, labels: &LabelMatrix) -> Result<f64> {
    if labels.shape() != (pred.k(), pred.n_options()) {
        return Err(Error::Shape(format!(
            "prediction {:?} vs labels {:?}",
            pred.shape(),
            labels.shape()
        )));
    }
    (0..pred.n_options())
        .map(|i| cce_loss(&pred.option_slice(i), &labels.column(i)))
        .sum()
}

/// Tape version of [`cce_loss`] on a `k × 2` probability node.
pub fn cce_loss_graph(g: &mut Graph, probs: Var, labels: &[u8]) -> Result<Var> {
    g.nll_rows(probs, &targets(labels), LOG_EPS)
}

/// Tape version of [`overall_loss`].
pub fn overall_loss_graph(g: &mut Graph, probs: &[Var], labels: &LabelMatrix) -> Result<Var> {
    if probs.len() != labels.shape().1 {
        return Err(Error::Shape(format!(
            "{} option blocks for {} label columns",
            probs.len(),
            labels.shape().1
        )));
    }
    let mut total: Option<Var> = None;
    for (i, &p) in probs.iter().enumerate() {
        let rows = g.shape(p).0;
        let column: Vec<u8> = labels.column(i).into_iter().take(rows).collect();
        let li = cce_loss_graph(g, p, &column)?;
        total = Some(match total {
            Some(t) => g.add(t, li)?,
            None => li,
        });
    }
    total.ok_or_else(|| Error::Shape("no options".into()))
}
