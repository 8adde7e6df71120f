//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A `Tensor` is a cheap handle (`Arc`) to an immutable value plus an optional
//! backprop record linking to its parents. Calling an op on tracked inputs
//! extends the graph; `backward()` on a scalar walks it in reverse topological
//! order and accumulates gradients. Leaf data sits behind a lock so optimizers
//! can swap parameter values between steps without rebuilding handles; graph
//! intermediates are never mutated.

mod autograd;
mod gradcheck;
mod ops;

pub use gradcheck::{grad_check, grad_check_params, GradCheckReport};

use std::sync::{Arc, Mutex, RwLock};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub(crate) use autograd::BackOp;

pub struct Tensor<S: Scalar> {
    inner: Arc<Inner<S>>,
}

struct Inner<S: Scalar> {
    shape: Vec<usize>,
    data: RwLock<Arc<Vec<S>>>,
    grad: Mutex<Option<Vec<S>>>,
    requires_grad: bool,
    op: Option<BackOp<S>>,
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<S: Scalar> std::fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field("tracked", &self.is_tracked())
            .finish()
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::shape("tensor shape must have at least one extent"));
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::shape(format!("zero extent in shape {shape:?}")));
    }
    let numel: usize = shape.iter().product();
    if numel != len {
        return Err(Error::shape(format!(
            "shape {shape:?} implies {numel} elements but data has {len}"
        )));
    }
    Ok(())
}

impl<S: Scalar> Tensor<S> {
    fn build(shape: Vec<usize>, data: Vec<S>, requires_grad: bool, op: Option<BackOp<S>>) -> Self {
        Tensor {
            inner: Arc::new(Inner {
                shape,
                data: RwLock::new(Arc::new(data)),
                grad: Mutex::new(None),
                requires_grad,
                op,
            }),
        }
    }

    pub(crate) fn with_op(shape: Vec<usize>, data: Vec<S>, op: Option<BackOp<S>>) -> Self {
        Tensor::build(shape, data, false, op)
    }

    /// Untracked tensor from row-major data.
    pub fn from_vec(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        check_shape(&shape, data.len())?;
        Ok(Tensor::build(shape, data, false, None))
    }

    /// Gradient-tracked leaf.
    pub fn leaf(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        check_shape(&shape, data.len())?;
        Ok(Tensor::build(shape, data, true, None))
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let numel = shape.iter().product();
        Tensor::from_vec(shape, vec![S::zero(); numel])
    }

    pub fn full(shape: Vec<usize>, value: S) -> Result<Self> {
        let numel = shape.iter().product();
        Tensor::from_vec(shape, vec![value; numel])
    }

    pub fn scalar(value: S) -> Self {
        Tensor::build(vec![1], vec![value], false, None)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    /// Snapshot handle to the value. Cheap: clones the `Arc`, not the data.
    pub fn data(&self) -> Arc<Vec<S>> {
        Arc::clone(&self.inner.data.read().unwrap())
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.data().as_ref().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<S> {
        if self.numel() != 1 {
            return Err(Error::shape(format!(
                "item() requires a single-element tensor, got shape {:?}",
                self.shape()
            )));
        }
        Ok(self.data()[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub(crate) fn is_tracked(&self) -> bool {
        self.inner.requires_grad || self.inner.op.is_some()
    }

    pub(crate) fn op(&self) -> Option<&BackOp<S>> {
        self.inner.op.as_ref()
    }

    pub(crate) fn ptr_id(&self) -> usize {
        Arc::as_ptr(&self.inner) as usize
    }

    pub fn grad(&self) -> Option<Vec<S>> {
        self.inner.grad.lock().unwrap().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().unwrap() = None;
    }

    pub(crate) fn accumulate_grad(&self, contrib: &[S]) {
        debug_assert_eq!(contrib.len(), self.numel());
        let mut slot = self.inner.grad.lock().unwrap();
        let grad = slot.get_or_insert_with(|| vec![S::zero(); contrib.len()]);
        for (g, &c) in grad.iter_mut().zip(contrib) {
            *g += c;
        }
    }

    /// Replace the value of a leaf tensor in place. Graph intermediates
    /// refuse; their saved values must stay what the forward pass computed.
    pub fn set_data(&self, data: Vec<S>) -> Result<()> {
        if self.inner.op.is_some() {
            return Err(Error::shape(
                "set_data is only valid on leaf tensors, not graph intermediates",
            ));
        }
        if data.len() != self.numel() {
            return Err(Error::shape(format!(
                "set_data length {} does not match shape {:?}",
                data.len(),
                self.shape()
            )));
        }
        *self.inner.data.write().unwrap() = Arc::new(data);
        Ok(())
    }

    /// Same value, no gradient tracking, no graph link. Shares storage.
    pub fn detach(&self) -> Tensor<S> {
        Tensor {
            inner: Arc::new(Inner {
                shape: self.inner.shape.clone(),
                data: RwLock::new(self.data()),
                grad: Mutex::new(None),
                requires_grad: false,
                op: None,
            }),
        }
    }

    /// Elementwise map producing an untracked tensor (inference utilities).
    pub fn map_detached(&self, f: impl Fn(S) -> S) -> Tensor<S> {
        let data: Vec<S> = self.data().iter().map(|&v| f(v)).collect();
        Tensor::build(self.inner.shape.clone(), data, false, None)
    }
}

/// A named, gradient-tracked tensor: one learnable weight of a model.
#[derive(Debug, Clone)]
pub struct Parameter<S: Scalar> {
    name: String,
    tensor: Tensor<S>,
}

impl<S: Scalar> Parameter<S> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        Ok(Parameter {
            name: name.into(),
            tensor: Tensor::leaf(shape, data)?,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tensor(&self) -> &Tensor<S> {
        &self.tensor
    }

    /// Graph-tracked handle for training, detached copy for inference.
    pub fn view(&self, training: bool) -> Tensor<S> {
        if training {
            self.tensor.clone()
        } else {
            self.tensor.detach()
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    pub fn numel(&self) -> usize {
        self.tensor.numel()
    }

    pub fn data(&self) -> Arc<Vec<S>> {
        self.tensor.data()
    }

    pub fn grad(&self) -> Option<Vec<S>> {
        self.tensor.grad()
    }

    pub fn zero_grad(&self) {
        self.tensor.zero_grad()
    }

    pub fn set_data(&self, data: Vec<S>) -> Result<()> {
        self.tensor.set_data(data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_mismatch_is_error() {
        assert!(Tensor::<f64>::from_vec(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::from_vec(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn product_of_shape_equals_len() {
        let t = Tensor::<f32>::from_vec(vec![2, 3, 4], vec![1.0; 24]).unwrap();
        assert_eq!(t.numel(), 24);
        assert_eq!(t.rank(), 3);
    }

    #[test]
    fn set_data_only_on_leaves() {
        let a = Tensor::<f64>::leaf(vec![2], vec![1.0, 2.0]).unwrap();
        let b = a.add(&a).unwrap();
        assert!(a.set_data(vec![3.0, 4.0]).is_ok());
        assert!(b.set_data(vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn detach_shares_value_but_not_graph() {
        let a = Tensor::<f64>::leaf(vec![2], vec![1.0, 2.0]).unwrap();
        let b = a.add(&a).unwrap();
        let d = b.detach();
        assert_eq!(d.to_vec(), vec![2.0, 4.0]);
        assert!(!d.is_tracked());
    }
}
