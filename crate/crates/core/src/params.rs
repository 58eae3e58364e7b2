//! Named parameter and gradient collections.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Model parameters keyed by name; iteration is in sorted name order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

/// Gradients with the same names and shapes as the `ParamSet` they belong to.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::Parameter {
                name,
                detail: "duplicate name".into(),
            });
        }
        self.tensors.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Union of two disjoint parameter sets.
    pub fn merged(&self, other: &ParamSet) -> Result<ParamSet> {
        let mut out = self.clone();
        for (name, t) in other.iter() {
            out.insert(name, t.clone())?;
        }
        Ok(out)
    }

    /// The subset whose names start with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> ParamSet {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub(crate) fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        Self { tensors }
    }
}

impl GradSet {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self {
            tensors: params
                .iter()
                .map(|(k, v)| (k.to_string(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn from_tensors<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = (S, Tensor)>,
        S: Into<String>,
    {
        Self {
            tensors: items.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// All entries concatenated in name order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors
            .values()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors
            .values()
            .all(|t| t.data().iter().all(|v| v.is_finite()))
    }

    /// Applies `f` to every tensor's data, preserving names and shapes.
    pub fn map_data(&self, mut f: impl FnMut(&str, &[f64]) -> Vec<f64>) -> GradSet {
        let tensors = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let data = f(k, t.data());
                debug_assert_eq!(data.len(), t.len());
                (k.clone(), raw(t.shape(), data))
            })
            .collect();
        GradSet { tensors }
    }

    pub fn scaled(&self, factor: f64) -> GradSet {
        self.map_data(|_, d| d.iter().map(|v| v * factor).collect())
    }

    /// Elementwise sum; both sets must share names and shapes.
    pub fn add(&self, other: &GradSet) -> Result<GradSet> {
        self.check_same_layout(other)?;
        Ok(self.map_data(|k, d| {
            let o = other.tensors[k].data();
            d.iter().zip(o).map(|(a, b)| a + b).collect()
        }))
    }

    pub fn check_matches(&self, params: &ParamSet) -> Result<()> {
        if self.tensors.len() != params.len() {
            return Err(Error::invalid(format!(
                "gradient has {} tensors, parameters have {}",
                self.tensors.len(),
                params.len()
            )));
        }
        for (name, p) in params.iter() {
            match self.tensors.get(name) {
                None => {
                    return Err(Error::Parameter {
                        name: name.into(),
                        detail: "missing gradient".into(),
                    })
                }
                Some(g) if g.shape() != p.shape() => {
                    return Err(Error::Parameter {
                        name: name.into(),
                        detail: format!("gradient shape {:?} vs {:?}", g.shape(), p.shape()),
                    })
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    fn check_same_layout(&self, other: &GradSet) -> Result<()> {
        let same = self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((ka, ta), (kb, tb))| ka == kb && ta.shape() == tb.shape());
        if same {
            Ok(())
        } else {
            Err(Error::invalid("gradient sets differ in layout"))
        }
    }
}

/// Euclidean norm over the concatenation of every tensor in `g`.
pub fn global_l2_norm(g: &GradSet) -> f64 {
    g.tensors
        .values()
        .map(Tensor::squared_norm)
        .sum::<f64>()
        .sqrt()
}

// Non-finite values may pass through here so that callers can report them
// with the parameter name attached.
fn raw(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::from_unchecked(shape.to_vec(), data)
}
