//! Three-step reasoning stack over the separated encoder states.
//!
//! Each layer runs, in order:
//! 1. review: self-attention over the question states;
//! 2. read: option states attend to the reviewed question;
//! 3. find: passage states attend to the read options.
//!
//! Only the passage output feeds the prediction head, so the question and
//! option context reaches the labels through step 3.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{attention, AttentionParams, LayerNorm};
use crate::encoder::HiddenStates;
use crate::error::{Error, Result};
use crate::graph::{Graph, ParamStore, Var};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HrcaConfig {
    pub n_heads: usize,
    pub head_dim: usize,
    pub n_layers: usize,
    /// Residual connection plus layer norm around every attention step.
    pub residual: bool,
}

impl Default for HrcaConfig {
    fn default() -> Self {
        Self {
            n_heads: 8,
            head_dim: 8,
            n_layers: 1,
            residual: true,
        }
    }
}

impl HrcaConfig {
    /// 16 heads of width 32, used for the noisy social-media corpora.
    pub fn wide() -> Self {
        Self {
            n_heads: 16,
            head_dim: 32,
            ..Self::default()
        }
    }

    /// 8 heads of width 64.
    pub fn standard() -> Self {
        Self {
            n_heads: 8,
            head_dim: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.head_dim == 0 || self.n_layers == 0 {
            return Err(Error::Config(format!("HRCA config needs all counts ≥ 1: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HrcaStep {
    pub attn: AttentionParams,
    pub norm: Option<LayerNorm>,
}

impl HrcaStep {
    fn forward(&self, g: &mut Graph, queries: Var, context: Var) -> Result<(Var, Vec<Var>)> {
        let out = attention(g, queries, context, context, &self.attn)?;
        let y = match &self.norm {
            Some(norm) => {
                let res = g.add(queries, out.output)?;
                norm.forward(g, res)?
            }
            None => out.output,
        };
        Ok((y, out.weights))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HrcaLayerParams {
    pub review: HrcaStep,
    pub read: HrcaStep,
    pub find: HrcaStep,
}

/// One shared set of layers, applied to every option pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HrcaParams {
    pub layers: Vec<HrcaLayerParams>,
}

impl HrcaParams {
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, config: &HrcaConfig, d_model: usize) -> Self {
        let mut step = |name: String| HrcaStep {
            attn: AttentionParams::init(store, rng, &name, d_model, config.n_heads, config.head_dim),
            norm: config.residual.then(|| LayerNorm::init(store, &format!("{name}.ln"), d_model)),
        };
        let layers = (0..config.n_layers)
            .map(|l| HrcaLayerParams {
                review: step(format!("hrca.l{l}.review")),
                read: step(format!("hrca.l{l}.read")),
                find: step(format!("hrca.l{l}.find")),
            })
            .collect();
        Self { layers }
    }

    pub fn validate(&self, store: &ParamStore, config: &HrcaConfig, d_model: usize) -> Result<()> {
        if self.layers.len() != config.n_layers {
            return Err(Error::Shape(format!(
                "{} HRCA layers for a config of {}",
                self.layers.len(),
                config.n_layers
            )));
        }
        for layer in &self.layers {
            for step in [&layer.review, &layer.read, &layer.find] {
                if step.attn.n_heads != config.n_heads || step.attn.head_dim != config.head_dim {
                    return Err(Error::Shape(format!(
                        "step has {} heads × {}, config says {} × {}",
                        step.attn.n_heads, step.attn.head_dim, config.n_heads, config.head_dim
                    )));
                }
                if step.norm.is_some() != config.residual {
                    return Err(Error::Shape("residual flag disagrees with parameters".into()));
                }
                step.attn.validate(store, d_model)?;
            }
        }
        Ok(())
    }
}

/// Attention weights of the last layer, one matrix per head for each step.
pub struct HrcaTrace {
    pub review: Vec<Var>,
    pub read: Vec<Var>,
    pub find: Vec<Var>,
}

pub struct HrcaOutput {
    /// Enriched passage states, `k × d`.
    pub passage: Var,
    pub question: Var,
    pub option: Var,
    pub trace: HrcaTrace,
}

pub fn hrca_forward(g: &mut Graph, h: &HiddenStates, params: &HrcaParams) -> Result<HrcaOutput> {
    for (label, v) in [("passage", h.passage), ("question", h.question), ("option", h.option)] {
        if g.shape(v).0 == 0 {
            return Err(Error::Shape(format!("empty {label} segment")));
        }
    }
    if params.layers.is_empty() {
        return Err(Error::Shape("HRCA stack has no layers".into()));
    }
    let (mut question, mut option, mut passage) = (h.question, h.option, h.passage);
    let mut trace = HrcaTrace {
        review: vec![],
        read: vec![],
        find: vec![],
    };
    for layer in &params.layers {
        let (q, w_review) = layer.review.forward(g, question, question)?;
        let (o, w_read) = layer.read.forward(g, option, q)?;
        let (p, w_find) = layer.find.forward(g, passage, o)?;
        question = q;
        option = o;
        passage = p;
        trace = HrcaTrace {
            review: w_review,
            read: w_read,
            find: w_find,
        };
    }
    Ok(HrcaOutput {
        passage,
        question,
        option,
        trace,
    })
}
