use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major 2-D extent. Vectors are `n x 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub const fn vector(n: usize) -> Self {
        Shape { rows: n, cols: 1 }
    }

    pub const fn matrix(rows: usize, cols: usize) -> Self {
        Shape { rows, cols }
    }

    pub const fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// A named trainable array.
#[derive(Debug, Clone, PartialEq)]
pub struct Value {
    pub data: Vec<f64>,
    pub shape: Shape,
    pub grad: Option<Vec<f64>>,
    pub requires_grad: bool,
}

impl Value {
    pub fn new(data: Vec<f64>, shape: Shape, requires_grad: bool) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "value of {} elements cannot have shape {shape}",
                data.len()
            )));
        }
        Ok(Value {
            data,
            shape,
            grad: None,
            requires_grad,
        })
    }

    pub fn zeros(shape: Shape, requires_grad: bool) -> Self {
        Value {
            data: vec![0.0; shape.len()],
            shape,
            grad: None,
            requires_grad,
        }
    }
}

/// Index of a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named parameters. Order is the serialization order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Value>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Value) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    /// Adds a weight matrix initialized uniformly in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`
    /// where `fan_in` is the column count.
    pub fn add_weight<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = 1.0 / (cols.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.add(name, Value::new(data, Shape::matrix(rows, cols), true)?)
    }

    pub fn add_bias(&mut self, name: impl Into<String>, n: usize) -> Result<ParamId> {
        self.add(name, Value::zeros(Shape::vector(n), true))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Value {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Value {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Value)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Value> {
        self.values.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.data.len()).sum()
    }

    /// Stores `grads` into each parameter's `grad` slot, adding to any
    /// gradient already present.
    pub fn accumulate_grads(&mut self, grads: &ParamGrads) {
        for (value, grad) in self.values.iter_mut().zip(&grads.grads) {
            let Some(grad) = grad else { continue };
            match &mut value.grad {
                Some(existing) => existing.iter_mut().zip(grad).for_each(|(a, b)| *a += b),
                None => value.grad = Some(grad.clone()),
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for v in &mut self.values {
            v.grad = None;
        }
    }
}

/// Gradients of one backward pass, aligned with a [`ParamSet`].
/// Entries are `None` for parameters that do not require gradients or were
/// not reached from the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub grads: Vec<Option<Vec<f64>>>,
}

impl ParamGrads {
    pub fn empty(n: usize) -> Self {
        ParamGrads {
            grads: vec![None; n],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    /// Adds `other` into `self`.
    pub fn add(&mut self, other: &ParamGrads) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            let Some(theirs) = theirs else { continue };
            match mine {
                Some(m) => m.iter_mut().zip(theirs).for_each(|(a, b)| *a += b),
                None => *mine = Some(theirs.clone()),
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= c);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn all_finite(&self) -> bool {
        self.grads
            .iter()
            .flatten()
            .all(|g| g.iter().all(|x| x.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weight_init_is_bounded_and_seeded() {
        let mut a = ParamSet::new();
        let mut b = ParamSet::new();
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let wa = a.add_weight("w", 5, 16, &mut r1).unwrap();
        b.add_weight("w", 5, 16, &mut r2).unwrap();
        assert_eq!(a, b);
        assert!(a.get(wa).data.iter().all(|x| x.abs() <= 0.25));
        let bias = a.add_bias("b", 3).unwrap();
        assert_eq!(a.get(bias).data, vec![0.0; 3]);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamSet::new();
        p.add_bias("b", 1).unwrap();
        assert!(p.add_bias("b", 1).is_err());
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = ParamGrads {
            grads: vec![Some(vec![3.0, 4.0]), None, Some(vec![12.0])],
        };
        let before = g.clip_global_norm(5.0);
        assert_eq!(before, 13.0);
        assert!(g.global_norm() <= 5.0 + 1e-9);

        let mut small = ParamGrads {
            grads: vec![Some(vec![0.3, 0.4])],
        };
        small.clip_global_norm(5.0);
        assert_eq!(small.grads[0].as_deref(), Some(&[0.3, 0.4][..]));
    }
}
