use std::collections::HashMap;

use rand::Rng;

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
}

/// Ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<usize> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Invalid(format!("duplicate parameter name `{name}`")));
        }
        let idx = self.params.len();
        self.by_name.insert(name.clone(), idx);
        self.params.push(Parameter { name, value });
        Ok(idx)
    }

    /// Adds a `[rows, cols]` weight drawn from U(-1/sqrt(cols), 1/sqrt(cols)).
    pub fn add_uniform<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) -> Result<usize> {
        let bound = 1.0 / (cols as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, Tensor::new(vec![rows, cols], data)?)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar values.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, idx: usize) -> &Parameter {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Parameter {
        &mut self.params[idx]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.index_of(name).map(|i| &self.params[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Registers every parameter on `tape`, returning the leaf handles in order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| tape.param(i, p.value.clone()))
            .collect()
    }

    /// Collects per-parameter gradients, zero-filled where nothing flowed.
    pub fn collect_grads(&self, grads: &Gradients) -> ParamGrads {
        ParamGrads(
            self.params
                .iter()
                .enumerate()
                .map(|(i, p)| grads.param(i).unwrap_or_else(|| vec![0.0; p.value.len()]))
                .collect(),
        )
    }

    /// All values flattened in parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    /// Inverse of [`ParamSet::flatten`].
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_values() {
            return Err(Error::shape(
                "assign_flat",
                format!("{} values for {} slots", flat.len(), self.num_values()),
            ));
        }
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> ParamGrads {
        ParamGrads(self.params.iter().map(|p| vec![0.0; p.value.len()]).collect())
    }
}

/// Gradients aligned with a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads(pub Vec<Vec<f64>>);

impl ParamGrads {
    pub fn global_norm(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flat_map(|g| g.iter()).all(|v| v.is_finite())
    }

    pub fn scale(&mut self, c: f64) {
        self.0.iter_mut().flat_map(|g| g.iter_mut()).for_each(|v| *v *= c);
    }

    /// Rescales so the global norm is at most `max_norm`. Returns the norm
    /// before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flat_map(|g| g.iter().copied()).collect()
    }
}
