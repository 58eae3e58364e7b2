//! Dense `f64` tensors and the forward kernels used by the tape.
//!
//! Every kernel treats its input as a row-major matrix: a 0-d tensor is
//! `1 x 1`, a 1-d tensor of length `n` is a single row `1 x n`, and higher
//! ranks fold all leading dimensions into rows. Kernels validate shapes and
//! reject non-finite outputs, so a `Tensor` obtained from any public
//! operation holds only finite values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Sparse linear combination of input rows: output row `i` is
/// `sum_k coeff * input[row]` over `terms[i]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RowMix {
    terms: Vec<Vec<(usize, f64)>>,
}

impl RowMix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an output row and returns its index.
    pub fn push_row(&mut self, terms: Vec<(usize, f64)>) -> usize {
        self.terms.push(terms);
        self.terms.len() - 1
    }

    pub fn rows(&self) -> usize {
        self.terms.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.terms[i]
    }

    fn max_input(&self) -> Option<usize> {
        self.terms.iter().flatten().map(|&(r, _)| r).max()
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        check_finite("tensor", &data)?;
        Ok(Self { shape, data })
    }

    pub(crate) fn from_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        match self.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::shape(
                "item",
                format!("expected one element, shape {:?}", self.shape),
            )),
        }
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            n => self.shape[..n - 1].iter().product(),
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.last() {
            None => 1,
            Some(&c) => c,
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    /// Elementwise map with a finiteness check on the result.
    pub fn map(&self, op: &'static str, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        check_finite(op, &data)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    fn zip(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        check_finite(op, &data)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "mul", |a, b| a * b)
    }

    pub fn minimum(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "minimum", f64::min)
    }

    pub fn scale(&self, factor: f64) -> Result<Tensor> {
        self.map("scale", |v| v * factor)
    }

    /// Adds `bias` (length `cols`) to every row.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        let c = self.cols();
        if bias.len() != c {
            return Err(Error::shape(
                "add_row",
                format!("input {:?}, bias {:?}", self.shape, bias.shape),
            ));
        }
        let data: Vec<f64> = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bias.data[i % c])
            .collect();
        check_finite("add_row", &data)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.shape.len() != 2 {
            return Err(Error::shape("transpose", format!("{:?}", self.shape)));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor {
            shape: vec![c, r],
            data,
        })
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", self.shape, other.shape),
            ));
        }
        let (n, k, m) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let out_row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        check_finite("matmul", &out)?;
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }

    pub fn tanh(&self) -> Result<Tensor> {
        self.map("tanh", f64::tanh)
    }

    pub fn relu(&self) -> Result<Tensor> {
        self.map("relu", |v| v.max(0.0))
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.map("sigmoid", sigmoid)
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.map("exp", f64::exp)
    }

    pub fn ln(&self) -> Result<Tensor> {
        self.map("log", f64::ln)
    }

    /// `ln(1 + e^x)` without overflow.
    pub fn softplus(&self) -> Result<Tensor> {
        self.map("softplus", softplus)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        self.map("clamp", |v| v.clamp(lo, hi))
    }

    pub fn log_softmax_rows(&self) -> Result<Tensor> {
        let c = self.cols();
        if c == 0 {
            return Err(Error::shape("log_softmax", "zero-width rows"));
        }
        let mut data = Vec::with_capacity(self.len());
        for r in 0..self.rows() {
            let row = self.row(r);
            let lse = logsumexp(row);
            data.extend(row.iter().map(|&v| v - lse));
        }
        check_finite("log_softmax", &data)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn softmax_rows(&self) -> Result<Tensor> {
        let mut out = self.log_softmax_rows()?;
        out.data.iter_mut().for_each(|v| *v = v.exp());
        Ok(out)
    }

    /// One value per row, shape `[rows, 1]` (or `[1]` for a 1-d input).
    pub fn logsumexp_rows(&self) -> Result<Tensor> {
        if self.cols() == 0 {
            return Err(Error::shape("logsumexp", "zero-width rows"));
        }
        let data: Vec<f64> = (0..self.rows()).map(|r| logsumexp(self.row(r))).collect();
        check_finite("logsumexp", &data)?;
        let shape = if self.shape.len() <= 1 {
            vec![1]
        } else {
            vec![self.rows(), 1]
        };
        Ok(Tensor { shape, data })
    }

    pub fn sum(&self) -> Result<Tensor> {
        let s: f64 = self.data.iter().sum();
        check_finite("sum", &[s])?;
        Ok(Tensor::scalar(s))
    }

    pub fn mean(&self) -> Result<Tensor> {
        if self.is_empty() {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let s: f64 = self.data.iter().sum::<f64>() / self.len() as f64;
        check_finite("mean", &[s])?;
        Ok(Tensor::scalar(s))
    }

    /// Picks `self[r, index[r]]` for every row; result `[rows, 1]`.
    pub fn gather_cols(&self, index: &[usize]) -> Result<Tensor> {
        let (rows, cols) = (self.rows(), self.cols());
        if index.len() != rows {
            return Err(Error::shape(
                "gather",
                format!("{} indices for {rows} rows", index.len()),
            ));
        }
        let mut data = Vec::with_capacity(rows);
        for (r, &c) in index.iter().enumerate() {
            if c >= cols {
                return Err(Error::shape(
                    "gather",
                    format!("column {c} out of range for width {cols}"),
                ));
            }
            data.push(self.data[r * cols + c]);
        }
        Ok(Tensor {
            shape: vec![rows, 1],
            data,
        })
    }

    /// Embedding lookup: rows `index` of a 2-d table.
    pub fn select_rows(&self, index: &[usize]) -> Result<Tensor> {
        let (rows, cols) = (self.rows(), self.cols());
        let mut data = Vec::with_capacity(index.len() * cols);
        for &r in index {
            if r >= rows {
                return Err(Error::shape(
                    "select_rows",
                    format!("row {r} out of range for {:?}", self.shape),
                ));
            }
            data.extend_from_slice(self.row(r));
        }
        Ok(Tensor {
            shape: vec![index.len(), cols],
            data,
        })
    }

    pub fn combine_rows(&self, mix: &RowMix) -> Result<Tensor> {
        let (rows, cols) = (self.rows(), self.cols());
        if let Some(max) = mix.max_input() {
            if max >= rows {
                return Err(Error::shape(
                    "combine_rows",
                    format!("row {max} out of range for {:?}", self.shape),
                ));
            }
        }
        let mut data = vec![0.0; mix.rows() * cols];
        for (i, terms) in mix.terms.iter().enumerate() {
            let out = &mut data[i * cols..(i + 1) * cols];
            for &(r, w) in terms {
                for (o, &v) in out.iter_mut().zip(self.row(r)) {
                    *o += w * v;
                }
            }
        }
        check_finite("combine_rows", &data)?;
        Ok(Tensor {
            shape: vec![mix.rows(), cols],
            data,
        })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Max-shifted log-sum-exp of a slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}
