use super::{Gradients, Graph, Scalar, Tensor};
use crate::error::{Error, Result};

/// One named parameter with its gradient buffer and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// Set once a gradient has been written since the last optimizer step.
    pub grad_ready: bool,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

/// Named parameters in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    step: u64,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), step: 0 }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        if self.index(name).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        let shape = value.shape().to_vec();
        self.params.push(Param {
            name: name.to_string(),
            grad: Tensor::zeros(&shape),
            grad_ready: false,
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            value,
        });
        Ok(())
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index(name).map(|i| &self.params[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index(name).map(move |i| &mut self.params[i].value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor<T>> {
        self.index(name).map(|i| &self.params[i].grad)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index(name).is_some()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Number of optimizer steps taken.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub(crate) fn bump_step(&mut self) -> u64 {
        self.step += 1;
        self.step
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn set_grad(&mut self, name: &str, grad: Tensor<T>) -> Result<()> {
        let i = self
            .index(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))?;
        let p = &mut self.params[i];
        if grad.shape() != p.value.shape() {
            return Err(Error::Shape(format!(
                "gradient {:?} for parameter `{name}` of shape {:?}",
                grad.shape(),
                p.value.shape()
            )));
        }
        p.grad = grad;
        p.grad_ready = true;
        Ok(())
    }

    /// Zero every gradient and mark them populated. Parameters that a loss
    /// does not touch then receive a zero update instead of an error.
    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
            p.grad_ready = true;
        }
    }

    /// Add the gradients of every parameter used on `graph`.
    pub fn accumulate(&mut self, graph: &Graph<T>, grads: &Gradients<T>) -> Result<()> {
        for (name, var) in graph.params() {
            let i = self
                .index(name)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))?;
            let p = &mut self.params[i];
            if !p.grad_ready {
                p.grad.fill(T::zero());
                p.grad_ready = true;
            }
            if let Some(g) = grads.get(*var) {
                p.grad.add_assign(g);
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                    grad_ready: p.grad_ready,
                    m: p.m.cast(),
                    v: p.v.cast(),
                })
                .collect(),
            step: self.step,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::<f32>::new();
        s.insert("w", Tensor::zeros(&[2])).unwrap();
        assert!(s.insert("w", Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn grad_shape_checked() {
        let mut s = ParamStore::<f32>::new();
        s.insert("w", Tensor::zeros(&[2])).unwrap();
        assert!(matches!(s.set_grad("w", Tensor::zeros(&[3])), Err(Error::Shape(_))));
    }
}
