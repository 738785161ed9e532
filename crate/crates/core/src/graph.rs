//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] is built fresh for every forward pass. Parameters live in a
//! [`ParamStore`] that the graph borrows immutably; leaf nodes referring to
//! parameters do not copy their values. [`Graph::backward`] walks the tape in
//! reverse and returns gradients for every parameter that took part in the
//! computation, plus gradients for every intermediate node.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

pub type Mat = Array2<f64>;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: Mat,
}

/// Flat, ordered collection of named trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: Vec<NamedTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.tensors.push(NamedTensor { name, value });
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.tensors[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.tensors[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.tensors[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &NamedTensor> {
        self.tensors.iter()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.value.iter().all(|v| v.is_finite()))
    }
}

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    /// Adds a `1 × n` row to every row of `a`.
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SliceRows(Var, usize, usize),
    SliceCols(Var, usize, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Sum(Var),
    /// Mean negative log-likelihood of one target column per row, with the
    /// probability clamped from below by `eps`.
    NllRows {
        probs: Var,
        targets: Vec<usize>,
        eps: f64,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Mat,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    node: Vec<Option<Mat>>,
    params: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&Mat> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    pub fn of(&self, v: Var) -> Option<&Mat> {
        self.node.get(v.0).and_then(Option::as_ref)
    }

    pub fn into_param_grads(self) -> Vec<Option<Mat>> {
        self.params
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn softmax_rows(x: ArrayView2<f64>) -> Mat {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn layer_norm_stats(x: ArrayView2<f64>, eps: f64) -> (Mat, Vec<f64>) {
    let n = x.ncols() as f64;
    let mut xhat = x.to_owned();
    let mut rstds = Vec::with_capacity(x.nrows());
    for mut row in xhat.rows_mut() {
        let mean = row.sum() / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / n;
        let rstd = 1.0 / (var + eps).sqrt();
        row.mapv_inplace(|v| v * rstd);
        rstds.push(rstd);
    }
    (xhat, rstds)
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        match &self.nodes[v.0].op {
            Op::Param(id) => self.params.get(*id),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    fn push(&mut self, op: Op, value: Mat) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Mat) -> Var {
        self.push(Op::Input, value)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(Op::Param(id), Mat::zeros((0, 0)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::Shape(format!(
                "matmul {:?} x {:?}",
                va.dim(),
                vb.dim()
            )));
        }
        let out = va.dot(vb);
        Ok(self.push(Op::MatMul(a, b), out))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.ncols() {
            return Err(Error::Shape(format!(
                "matmul_t {:?} x {:?}ᵀ",
                va.dim(),
                vb.dim()
            )));
        }
        let out = va.dot(&vb.t());
        Ok(self.push(Op::MatMulT(a, b), out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(Error::Shape(format!("add {:?} + {:?}", va.dim(), vb.dim())));
        }
        let out = va + vb;
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != va.ncols() {
            return Err(Error::Shape(format!(
                "add_row {:?} + {:?}",
                va.dim(),
                vr.dim()
            )));
        }
        let out = va + vr;
        Ok(self.push(Op::AddRow(a, row), out))
    }

    /// `x · w + b`
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a) * factor;
        self.push(Op::Scale(a, factor), out)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(gelu);
        self.push(Op::Gelu(a), out)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a).view());
        self.push(Op::SoftmaxRows(a), out)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let d = self.value(x).ncols();
        for (label, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).dim() != (1, d) {
                return Err(Error::Shape(format!(
                    "layer_norm {label} {:?} for width {d}",
                    self.value(v).dim()
                )));
            }
        }
        let (xhat, _) = layer_norm_stats(self.value(x).view(), eps);
        let out = &xhat * self.value(gamma) + self.value(beta);
        Ok(self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                eps,
            },
            out,
        ))
    }

    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vt.nrows()) {
            return Err(Error::Shape(format!(
                "gather row {bad} from table of {} rows",
                vt.nrows()
            )));
        }
        let out = vt.select(Axis(0), ids);
        Ok(self.push(
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            out,
        ))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let va = self.value(a);
        if start >= end || end > va.nrows() {
            return Err(Error::Shape(format!(
                "slice rows {start}..{end} of {}",
                va.nrows()
            )));
        }
        let out = va.slice(s![start..end, ..]).to_owned();
        Ok(self.push(Op::SliceRows(a, start, end), out))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let va = self.value(a);
        if start >= end || end > va.ncols() {
            return Err(Error::Shape(format!(
                "slice cols {start}..{end} of {}",
                va.ncols()
            )));
        }
        let out = va.slice(s![.., start..end]).to_owned();
        Ok(self.push(Op::SliceCols(a, start, end), out))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|&v| self.value(v).view()).collect();
        let out = concatenate(Axis(0), &views)
            .map_err(|e| Error::Shape(format!("concat rows: {e}")))?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), out))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|&v| self.value(v).view()).collect();
        let out = concatenate(Axis(1), &views)
            .map_err(|e| Error::Shape(format!("concat cols: {e}")))?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).sum();
        self.push(Op::Sum(a), Mat::from_elem((1, 1), total))
    }

    pub fn nll_rows(&mut self, probs: Var, targets: &[usize], eps: f64) -> Result<Var> {
        let vp = self.value(probs);
        if vp.nrows() != targets.len() || vp.nrows() == 0 {
            return Err(Error::Shape(format!(
                "nll over {} rows with {} targets",
                vp.nrows(),
                targets.len()
            )));
        }
        if targets.iter().any(|&t| t >= vp.ncols()) {
            return Err(Error::Shape("nll target out of range".into()));
        }
        let k = vp.nrows() as f64;
        let loss = targets
            .iter()
            .enumerate()
            .map(|(r, &t)| -clamp_nan(vp[[r, t]], eps).ln())
            .sum::<f64>()
            / k;
        Ok(self.push(
            Op::NllRows {
                probs,
                targets: targets.to_vec(),
                eps,
            },
            Mat::from_elem((1, 1), loss),
        ))
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    /// Back-propagates from a `1 × 1` node.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        let mut param_grads: Vec<Option<Mat>> = vec![None; self.params.len()];
        grads[root.0] = Some(Mat::ones(self.value(root).dim()));

        fn acc(slot: &mut Option<Mat>, g: Mat) {
            match slot {
                Some(existing) => *existing += &g,
                None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::Param(id) => acc(&mut param_grads[id.0], g.clone()),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads[a.0], ga);
                    acc(&mut grads[b.0], gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    acc(&mut grads[a.0], ga);
                    acc(&mut grads[b.0], gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads[a.0], g.clone());
                    acc(&mut grads[b.0], g.clone());
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads[row.0], gr);
                    acc(&mut grads[a.0], g.clone());
                }
                Op::Scale(a, factor) => acc(&mut grads[a.0], &g * *factor),
                Op::Gelu(a) => {
                    let mut ga = self.value(*a).mapv(gelu_grad);
                    ga *= &g;
                    acc(&mut grads[a.0], ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[idx].value;
                    let mut ga = Mat::zeros(y.dim());
                    for ((mut out, yr), gr) in ga.rows_mut().into_iter().zip(y.rows()).zip(g.rows())
                    {
                        let dot: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                        for ((o, &yv), &gv) in out.iter_mut().zip(yr.iter()).zip(gr.iter()) {
                            *o = yv * (gv - dot);
                        }
                    }
                    acc(&mut grads[a.0], ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    eps,
                } => {
                    let (xhat, rstds) = layer_norm_stats(self.value(*x).view(), *eps);
                    let gam = self.value(*gamma);
                    let ggamma = (&g * &xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &g * gam;
                    let n = xhat.ncols() as f64;
                    let mut gx = Mat::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let dr = dxhat.row(r);
                        let xr = xhat.row(r);
                        let sum_d: f64 = dr.sum();
                        let sum_dx: f64 = dr.iter().zip(xr.iter()).map(|(a, b)| a * b).sum();
                        for c in 0..xhat.ncols() {
                            gx[[r, c]] =
                                rstds[r] / n * (n * dr[c] - sum_d - xr[c] * sum_dx);
                        }
                    }
                    acc(&mut grads[x.0], gx);
                    acc(&mut grads[gamma.0], ggamma);
                    acc(&mut grads[beta.0], gbeta);
                }
                Op::Gather { table, ids } => {
                    let mut gt = Mat::zeros(self.value(*table).dim());
                    for (r, &id) in ids.iter().enumerate() {
                        let mut row = gt.row_mut(id);
                        row += &g.row(r);
                    }
                    acc(&mut grads[table.0], gt);
                }
                Op::SliceRows(a, start, end) => {
                    let mut ga = Mat::zeros(self.value(*a).dim());
                    ga.slice_mut(s![*start..*end, ..]).assign(&g);
                    acc(&mut grads[a.0], ga);
                }
                Op::SliceCols(a, start, end) => {
                    let mut ga = Mat::zeros(self.value(*a).dim());
                    ga.slice_mut(s![.., *start..*end]).assign(&g);
                    acc(&mut grads[a.0], ga);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let rows = self.value(*p).nrows();
                        let gp = g.slice(s![offset..offset + rows, ..]).to_owned();
                        acc(&mut grads[p.0], gp);
                        offset += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let cols = self.value(*p).ncols();
                        let gp = g.slice(s![.., offset..offset + cols]).to_owned();
                        acc(&mut grads[p.0], gp);
                        offset += cols;
                    }
                }
                Op::Sum(a) => {
                    let ga = Mat::from_elem(self.value(*a).dim(), g[[0, 0]]);
                    acc(&mut grads[a.0], ga);
                }
                Op::NllRows {
                    probs,
                    targets,
                    eps,
                } => {
                    let vp = self.value(*probs);
                    let k = vp.nrows() as f64;
                    let mut gp = Mat::zeros(vp.dim());
                    for (r, &t) in targets.iter().enumerate() {
                        let p = vp[[r, t]];
                        if p > *eps || p.is_nan() {
                            gp[[r, t]] = -g[[0, 0]] / (k * p);
                        }
                    }
                    acc(&mut grads[probs.0], gp);
                }
            }
            grads[idx] = Some(g);
        }

        Gradients {
            node: grads,
            params: param_grads,
        }
    }
}

/// `p.max(eps)` that keeps NaN, so a diverged model still yields a NaN loss.
pub fn clamp_nan(p: f64, eps: f64) -> f64 {
    if p.is_nan() {
        p
    } else {
        p.max(eps)
    }
}
