use super::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ordered, named collection of trainable tensors.
///
/// Entries are addressed by the index returned from [`ParamSet::insert`];
/// names exist for checkpoints and diagnostics. Iteration order is insertion
/// order, which keeps optimizer state and checkpoints deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor and returns its index. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<usize> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name '{name}'"
            )));
        }
        self.names.push(name);
        self.shapes.push(value.shape().to_vec());
        self.tensors.push(value);
        Ok(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    /// Replaces entry `idx`; the shape must not change.
    pub fn set(&mut self, idx: usize, value: Tensor) -> Result<()> {
        if value.shape() != self.tensors[idx].shape() {
            return Err(Error::shape("ParamSet::set", self.tensors[idx].shape(), value.shape()));
        }
        self.tensors[idx] = value;
        Ok(())
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Overwrites all entries from a flat buffer produced by [`flatten`](Self::flatten).
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::shape("assign_flat", &[self.num_scalars()], &[flat.len()]));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Rebuilds a set from names, shapes and a flat buffer.
    pub fn from_parts(names: Vec<String>, shapes: Vec<Vec<usize>>, flat: &[f64]) -> Result<Self> {
        if names.len() != shapes.len() {
            return Err(Error::InvalidArgument("names and shapes differ in length".into()));
        }
        let mut set = ParamSet::new();
        let mut off = 0;
        for (name, shape) in names.into_iter().zip(shapes) {
            let n: usize = shape.iter().product();
            let chunk = flat
                .get(off..off + n)
                .ok_or_else(|| Error::InvalidArgument("flat buffer too short".into()))?;
            set.insert(name, Tensor::new(&shape, chunk.to_vec())?)?;
            off += n;
        }
        if off != flat.len() {
            return Err(Error::InvalidArgument("flat buffer too long".into()));
        }
        Ok(set)
    }

    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    /// Records every entry as a differentiable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundParams<'t> {
        BoundParams {
            vars: self.tensors.iter().map(|t| tape.param(t.clone())).collect(),
        }
    }

    /// Records every entry as a constant (no gradient bookkeeping).
    pub fn bind_constant<'t>(&self, tape: &'t Tape) -> BoundParams<'t> {
        BoundParams {
            vars: self.tensors.iter().map(|t| tape.constant(t.clone())).collect(),
        }
    }
}

/// Tape handles for every entry of a [`ParamSet`], in the same order.
#[derive(Clone, Debug)]
pub struct BoundParams<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> BoundParams<'t> {
    pub fn var(&self, idx: usize) -> Var<'t> {
        self.vars[idx]
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Gradients for every entry, zeros where the output does not depend on it.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|&v| grads.get_or_zeros(v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_flatten_round_trip() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::from_rows(&[&[1.0, 2.0]])).unwrap();
        p.insert("b", Tensor::column(&[3.0])).unwrap();
        assert!(p.insert("w", Tensor::scalar(0.0)).is_err());
        assert_eq!(p.num_scalars(), 3);
        let flat = p.flatten();
        let q = ParamSet::from_parts(p.names().to_vec(), p.shapes().to_vec(), &flat).unwrap();
        assert_eq!(p, q);
        assert_eq!(q.by_name("b").unwrap().item(), 3.0);
    }

    #[test]
    fn bound_gradients() {
        let mut p = ParamSet::new();
        let a = p.insert("a", Tensor::scalar(2.0)).unwrap();
        let b = p.insert("b", Tensor::scalar(5.0)).unwrap();
        let tape = Tape::new();
        let vars = p.bind(&tape);
        let y = (vars.var(a) * vars.var(a)).sum();
        let g = vars.gradients(&tape.backward(y).unwrap());
        assert_eq!(g[a].item(), 4.0);
        assert_eq!(g[b].item(), 0.0);
    }
}
