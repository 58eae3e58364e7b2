//! Reverse-mode differentiation over an explicitly recorded tape.
//!
//! Every primitive evaluates eagerly, stores its output on the tape, and
//! remembers its inputs. [`Tape::backward`] walks the tape in reverse and
//! accumulates adjoints. Parameters are bound by name through
//! [`Tape::bind`], and [`gradient`] wraps the whole cycle for a loss
//! closure.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::{GradSet, ParamSet};
use crate::tensor::{sigmoid, RowMix, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Tape handles for a bound `ParamSet`, keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::Parameter {
            name: name.into(),
            detail: "not bound on tape".into(),
        })
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Clamp(Var, f64, f64),
    LogSoftmax(Var),
    Softmax(Var),
    LogSumExp(Var),
    Sum(Var),
    Mean(Var),
    GatherCols(Var, Vec<usize>),
    SelectRows(Var, Vec<usize>),
    CombineRows(Var, RowMix),
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Records a constant (or an input that needs no gradient).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records every parameter as a leaf and returns the name -> handle map.
    pub fn bind(&mut self, params: &ParamSet) -> ParamVars {
        let vars = params
            .iter()
            .map(|(name, t)| (name.to_string(), self.push(t.clone(), Op::Leaf)))
            .collect();
        ParamVars { vars }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Elementwise minimum; on ties the gradient flows to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).minimum(self.value(b))?;
        Ok(self.push(v, Op::Minimum(a, b)))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let v = self.value(a).add_row(self.value(bias))?;
        Ok(self.push(v, Op::AddRow(a, bias)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let v = self.value(a).scale(factor)?;
        Ok(self.push(v, Op::Scale(a, factor)))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map("add_scalar", |x| x + c)?;
        Ok(self.push(v, Op::AddScalar(a)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).tanh()?;
        Ok(self.push(v, Op::Tanh(a)))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).relu()?;
        Ok(self.push(v, Op::Relu(a)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).sigmoid()?;
        Ok(self.push(v, Op::Sigmoid(a)))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).exp()?;
        Ok(self.push(v, Op::Exp(a)))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).ln()?;
        Ok(self.push(v, Op::Log(a)))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).softplus()?;
        Ok(self.push(v, Op::Softplus(a)))
    }

    /// Clamp into `[lo, hi]`; zero gradient where the bound is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let v = self.value(a).clamp(lo, hi)?;
        Ok(self.push(v, Op::Clamp(a, lo, hi)))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).log_softmax_rows()?;
        Ok(self.push(v, Op::LogSoftmax(a)))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).softmax_rows()?;
        Ok(self.push(v, Op::Softmax(a)))
    }

    pub fn logsumexp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).logsumexp_rows()?;
        Ok(self.push(v, Op::LogSumExp(a)))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).sum()?;
        Ok(self.push(v, Op::Sum(a)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).mean()?;
        Ok(self.push(v, Op::Mean(a)))
    }

    pub fn gather_cols(&mut self, a: Var, index: Vec<usize>) -> Result<Var> {
        let v = self.value(a).gather_cols(&index)?;
        Ok(self.push(v, Op::GatherCols(a, index)))
    }

    pub fn select_rows(&mut self, a: Var, index: Vec<usize>) -> Result<Var> {
        let v = self.value(a).select_rows(&index)?;
        Ok(self.push(v, Op::SelectRows(a, index)))
    }

    pub fn combine_rows(&mut self, a: Var, mix: RowMix) -> Result<Var> {
        let v = self.value(a).combine_rows(&mix)?;
        Ok(self.push(v, Op::CombineRows(a, mix)))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// Adjoints of every node with respect to the scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Vec<Option<Vec<f64>>>> {
        if self.value(output).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("output must be scalar, got {:?}", self.value(output).shape()),
            ));
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[output.0] = Some(vec![1.0]);

        for i in (0..=output.0).rev() {
            // leaves keep their adjoint for the caller
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let out = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, &g, self);
                    accumulate(&mut adj, *b, &g, self);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *a, &g, self);
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    accumulate(&mut adj, *b, &neg, self);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    let ga: Vec<f64> = g.iter().zip(vb).map(|(g, y)| g * y).collect();
                    let gb: Vec<f64> = g.iter().zip(va).map(|(g, x)| g * x).collect();
                    accumulate(&mut adj, *a, &ga, self);
                    accumulate(&mut adj, *b, &gb, self);
                }
                Op::Minimum(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    let mut ga = vec![0.0; g.len()];
                    let mut gb = vec![0.0; g.len()];
                    for k in 0..g.len() {
                        if va[k] <= vb[k] {
                            ga[k] = g[k];
                        } else {
                            gb[k] = g[k];
                        }
                    }
                    accumulate(&mut adj, *a, &ga, self);
                    accumulate(&mut adj, *b, &gb, self);
                }
                Op::AddRow(a, bias) => {
                    accumulate(&mut adj, *a, &g, self);
                    let c = out.cols();
                    let mut gb = vec![0.0; c];
                    for (k, v) in g.iter().enumerate() {
                        gb[k % c] += v;
                    }
                    accumulate(&mut adj, *bias, &gb, self);
                }
                Op::Scale(a, f) => {
                    let ga: Vec<f64> = g.iter().map(|v| v * f).collect();
                    accumulate(&mut adj, *a, &ga, self);
                }
                Op::AddScalar(a) | Op::Reshape(a) => accumulate(&mut adj, *a, &g, self),
                Op::MatMul(a, b) => {
                    let ta = self.value(*a);
                    let tb = self.value(*b);
                    let go = Tensor::from_unchecked(out.shape().to_vec(), g);
                    let ga = go.matmul(&tb.transpose()?)?;
                    let gb = ta.transpose()?.matmul(&go)?;
                    accumulate(&mut adj, *a, ga.data(), self);
                    accumulate(&mut adj, *b, gb.data(), self);
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(out.data())
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect();
                    accumulate(&mut adj, *a, &ga, self);
                }
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(x)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, *a, &ga, self);
                }
                Op::Sigmoid(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(out.data())
                        .map(|(g, s)| g * s * (1.0 - s))
                        .collect();
                    accumulate(&mut adj, *a, &ga, self);
                }
                Op::Exp(a) => {
                    let ga: Vec<f64> = g.iter().zip(out.data()).map(|(g, y)| g * y).collect();
                    accumulate(&mut adj, *a, &ga, self);
                }
                Op::Log(a) => {
                    let x = self.value(*a).data();
                    let ga: Vec<f64> = g.iter().zip(x).map(|(g, x)| g / x).collect();
                    accumulate(&mut adj, *a, &ga, self);
                }
                Op::Softplus(a) => {
                    let x = self.value(*a).data();
                    let ga: Vec<f64> = g.iter().zip(x).map(|(g, &x)| g * sigmoid(x)).collect();
                    accumulate(&mut adj, *a, &ga, self);
                }
                Op::Clamp(a, lo, hi) => {
                    let x = self.value(*a).data();
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(x)
                        .map(|(g, &x)| if x > *lo && x < *hi { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, *a, &ga, self);
                }
                Op::LogSoftmax(a) => {
                    // d/dx_j = g_j - softmax_j * sum_k g_k, row by row
                    let c = out.cols();
                    let mut ga = vec![0.0; g.len()];
                    for r in 0..out.rows() {
                        let gs = &g[r * c..(r + 1) * c];
                        let total: f64 = gs.iter().sum();
                        for j in 0..c {
                            ga[r * c + j] = gs[j] - out.data()[r * c + j].exp() * total;
                        }
                    }
                    accumulate(&mut adj, *a, &ga, self);
                }
                Op::Softmax(a) => {
                    let c = out.cols();
                    let mut ga = vec![0.0; g.len()];
                    for r in 0..out.rows() {
                        let s = &out.data()[r * c..(r + 1) * c];
                        let gs = &g[r * c..(r + 1) * c];
                        let dot: f64 = s.iter().zip(gs).map(|(s, g)| s * g).sum();
                        for j in 0..c {
                            ga[r * c + j] = s[j] * (gs[j] - dot);
                        }
                    }
                    accumulate(&mut adj, *a, &ga, self);
                }
                Op::LogSumExp(a) => {
                    let x = self.value(*a);
                    let c = x.cols();
                    let mut ga = vec![0.0; x.len()];
                    for r in 0..x.rows() {
                        let lse = out.data()[r];
                        for j in 0..c {
                            ga[r * c + j] = g[r] * (x.data()[r * c + j] - lse).exp();
                        }
                    }
                    accumulate(&mut adj, *a, &ga, self);
                }
                Op::Sum(a) => {
                    let ga = vec![g[0]; self.value(*a).len()];
                    accumulate(&mut adj, *a, &ga, self);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    let ga = vec![g[0] / n as f64; n];
                    accumulate(&mut adj, *a, &ga, self);
                }
                Op::GatherCols(a, index) => {
                    let x = self.value(*a);
                    let c = x.cols();
                    let mut ga = vec![0.0; x.len()];
                    for (r, &col) in index.iter().enumerate() {
                        ga[r * c + col] += g[r];
                    }
                    accumulate(&mut adj, *a, &ga, self);
                }
                Op::SelectRows(a, index) => {
                    let x = self.value(*a);
                    let c = x.cols();
                    let mut ga = vec![0.0; x.len()];
                    for (i, &r) in index.iter().enumerate() {
                        for j in 0..c {
                            ga[r * c + j] += g[i * c + j];
                        }
                    }
                    accumulate(&mut adj, *a, &ga, self);
                }
                Op::CombineRows(a, mix) => {
                    let x = self.value(*a);
                    let c = x.cols();
                    let mut ga = vec![0.0; x.len()];
                    for i in 0..mix.rows() {
                        for &(r, w) in mix.row(i) {
                            for j in 0..c {
                                ga[r * c + j] += w * g[i * c + j];
                            }
                        }
                    }
                    accumulate(&mut adj, *a, &ga, self);
                }
            }
        }
        Ok(adj)
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, g: &[f64], tape: &Tape) {
    debug_assert_eq!(g.len(), tape.value(v).len());
    match &mut adj[v.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

/// Evaluates `loss_fn` on a fresh tape with `params` bound and returns the
/// scalar loss together with its gradient for every parameter.
pub fn gradient<F>(params: &ParamSet, loss_fn: F) -> Result<(f64, GradSet)>
where
    F: FnOnce(&mut Tape, &ParamVars) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = tape.bind(params);
    let loss = loss_fn(&mut tape, &vars)?;
    let value = tape.value(loss).item()?;
    let grads = tape.gradients_for(loss, &vars)?;
    Ok((value, grads))
}

/// Evaluates `loss_fn` without computing gradients.
pub fn evaluate<F>(params: &ParamSet, loss_fn: F) -> Result<Tensor>
where
    F: FnOnce(&mut Tape, &ParamVars) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = tape.bind(params);
    let out = loss_fn(&mut tape, &vars)?;
    Ok(tape.value(out).clone())
}

impl Tape {
    /// Gradient of scalar `output` with respect to each bound parameter.
    pub fn gradients_for(&self, output: Var, vars: &ParamVars) -> Result<GradSet> {
        let adj = self.backward(output)?;
        let items = vars.vars.iter().map(|(name, v)| {
            let shape = self.value(*v).shape().to_vec();
            let data = adj[v.0]
                .clone()
                .unwrap_or_else(|| vec![0.0; self.value(*v).len()]);
            (name.clone(), Tensor::from_unchecked(shape, data))
        });
        let g = GradSet::from_tensors(items);
        if !g.is_finite() {
            return Err(Error::NonFinite { op: "backward" });
        }
        Ok(g)
    }
}
