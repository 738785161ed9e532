//! Multi-head scaled dot-product attention on the autograd tape.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Mat, ParamId, ParamStore, Var};

/// Matrix with entries drawn from U(-bound, bound).
pub fn uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound))
}

/// Glorot-style bound for a `fan_in × fan_out` weight.
pub(crate) fn glorot(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, prefix: &str, fan_in: usize, fan_out: usize) -> Self {
        let weight = store.add(
            format!("{prefix}.weight"),
            uniform(rng, fan_in, fan_out, glorot(fan_in, fan_out)),
        );
        let bias = store.add(format!("{prefix}.bias"), Mat::zeros((1, fan_out)));
        Self { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.linear(x, w, b)
    }

    pub fn dims(&self, store: &ParamStore) -> (usize, usize) {
        store.get(self.weight).dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn init(store: &mut ParamStore, prefix: &str, width: usize) -> Self {
        Self {
            gamma: store.add(format!("{prefix}.gamma"), Mat::ones((1, width))),
            beta: store.add(format!("{prefix}.beta"), Mat::zeros((1, width))),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta, LN_EPS)
    }
}

/// Projections for one multi-head attention block. The inner width
/// `n_heads × head_dim` is independent of the model width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub n_heads: usize,
    pub head_dim: usize,
}

pub struct AttentionOutput {
    pub output: Var,
    /// One `queries × keys` weight matrix per head.
    pub weights: Vec<Var>,
}

impl AttentionParams {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        d_model: usize,
        n_heads: usize,
        head_dim: usize,
    ) -> Self {
        let inner = n_heads * head_dim;
        Self {
            query: Linear::init(store, rng, &format!("{prefix}.q"), d_model, inner),
            key: Linear::init(store, rng, &format!("{prefix}.k"), d_model, inner),
            value: Linear::init(store, rng, &format!("{prefix}.v"), d_model, inner),
            output: Linear::init(store, rng, &format!("{prefix}.o"), inner, d_model),
            n_heads,
            head_dim,
        }
    }

    pub fn inner_dim(&self) -> usize {
        self.n_heads * self.head_dim
    }

    /// Checks every projection against `d_model` and the head layout.
    pub fn validate(&self, store: &ParamStore, d_model: usize) -> Result<()> {
        let inner = self.inner_dim();
        if self.n_heads == 0 || self.head_dim == 0 {
            return Err(Error::Shape("attention needs at least one head of width ≥ 1".into()));
        }
        for (label, lin, want) in [
            ("query", self.query, (d_model, inner)),
            ("key", self.key, (d_model, inner)),
            ("value", self.value, (d_model, inner)),
            ("output", self.output, (inner, d_model)),
        ] {
            if lin.dims(store) != want || store.get(lin.bias).dim() != (1, want.1) {
                return Err(Error::Shape(format!(
                    "{label} projection is {:?}, expected {want:?} for {} heads × {}",
                    lin.dims(store),
                    self.n_heads,
                    self.head_dim
                )));
            }
        }
        Ok(())
    }
}

/// `softmax(Q Kᵀ / √head_dim) V` per head, heads concatenated and projected.
pub fn attention(
    g: &mut Graph,
    queries: Var,
    keys: Var,
    values: Var,
    params: &AttentionParams,
) -> Result<AttentionOutput> {
    let n_keys = g.shape(keys).0;
    if n_keys == 0 {
        return Err(Error::Shape("attention over an empty key set".into()));
    }
    if g.shape(values).0 != n_keys {
        return Err(Error::Shape(format!(
            "{} keys but {} values",
            n_keys,
            g.shape(values).0
        )));
    }
    let q = params.query.forward(g, queries)?;
    let k = params.key.forward(g, keys)?;
    let v = params.value.forward(g, values)?;
    let scale = 1.0 / (params.head_dim as f64).sqrt();

    let mut heads = Vec::with_capacity(params.n_heads);
    let mut weights = Vec::with_capacity(params.n_heads);
    for h in 0..params.n_heads {
        let (lo, hi) = (h * params.head_dim, (h + 1) * params.head_dim);
        let (qh, kh, vh) = if params.n_heads == 1 {
            (q, k, v)
        } else {
            (g.slice_cols(q, lo, hi)?, g.slice_cols(k, lo, hi)?, g.slice_cols(v, lo, hi)?)
        };
        let scores = g.matmul_t(qh, kh)?;
        let scores = g.scale(scores, scale);
        let w = g.softmax_rows(scores);
        heads.push(g.matmul(w, vh)?);
        weights.push(w);
    }
    let joined = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat_cols(&heads)?
    };
    let output = params.output.forward(g, joined)?;
    Ok(AttentionOutput { output, weights })
}
