//! Dense row-major tensors with reverse-mode differentiation.
//!
//! A [`Tensor`] is an immutable, reference-counted buffer. Operations on
//! tensors that require gradients record a backward closure, forming a graph
//! that [`Tensor::backward`] walks in reverse topological order. Gradients
//! accumulate on every participating tensor until [`Tensor::zero_grad`] is
//! called or the tensor is dropped.

mod conv;
mod gemm;
pub mod gradcheck;
mod norm;
mod ops;
mod resize;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

pub use conv::{conv2d, ConvSpec};
pub use norm::{batch_norm, BatchStats};
pub use ops::{
    add, compensated_sum, concat, elementwise, gelu, index_select, mean, mul, mul_channel, plane_mean, relu,
    scale, sigmoid, split, sub, sum, ElementwiseKind,
};
pub use resize::bilinear_resize;

type GradFn = dyn Fn(&[f64], &[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync;

struct Node {
    id: usize,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    inputs: Vec<Tensor>,
    grad_fn: Option<Box<GradFn>>,
}

/// Dense N-dimensional array of `f64` values.
#[derive(Clone)]
pub struct Tensor(Arc<Node>);

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static NO_GRAD_DEPTH: Cell<usize> = const { Cell::new(0) };
    static MAC_COUNTER: Cell<Option<u64>> = const { Cell::new(None) };
}

/// Run `f` without recording any graph. Tensors produced inside are leaves.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    NO_GRAD_DEPTH.with(|d| d.set(d.get() + 1));
    let out = f();
    NO_GRAD_DEPTH.with(|d| d.set(d.get() - 1));
    out
}

fn grad_enabled() -> bool {
    NO_GRAD_DEPTH.with(|d| d.get() == 0)
}

/// Run `f` while counting the multiply-accumulates performed by every
/// convolution on this thread.
pub fn count_macs<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let prev = MAC_COUNTER.with(|c| c.replace(Some(0)));
    let out = f();
    let macs = MAC_COUNTER.with(|c| c.replace(prev)).unwrap_or(0);
    if let Some(outer) = prev {
        MAC_COUNTER.with(|c| c.set(Some(outer + macs)));
    }
    (out, macs)
}

pub(crate) fn record_macs(n: u64) {
    MAC_COUNTER.with(|c| {
        if let Some(v) = c.get() {
            c.set(Some(v + n));
        }
    });
}

fn validate_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(Error::config(format!(
            "shape {shape:?} must have at least one axis and only positive sizes"
        )));
    }
    let numel: usize = shape.iter().product();
    if numel != len {
        return Err(Error::config(format!(
            "shape {shape:?} holds {numel} values but {len} were supplied"
        )));
    }
    Ok(())
}

impl Tensor {
    fn build(
        data: Vec<f64>,
        shape: Vec<usize>,
        requires_grad: bool,
        inputs: Vec<Tensor>,
        grad_fn: Option<Box<GradFn>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            inputs,
            grad_fn,
        }))
    }

    /// Constant tensor that does not participate in differentiation.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        validate_shape(shape, data.len())?;
        Ok(Self::build(data, shape.to_vec(), false, Vec::new(), None))
    }

    /// Leaf tensor whose gradient is tracked.
    pub fn parameter(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        validate_shape(shape, data.len())?;
        Ok(Self::build(data, shape.to_vec(), true, Vec::new(), None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::new(vec![0.0; n], shape).expect("zeros shape")
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::new(vec![value; n], shape).expect("full shape")
    }

    pub fn scalar(value: f64) -> Self {
        Self::build(vec![value], vec![1], false, Vec::new(), None)
    }

    /// Result of an operation. Records `backward` only when gradients are
    /// enabled and at least one input requires them.
    pub(crate) fn from_op<F>(data: Vec<f64>, shape: Vec<usize>, inputs: &[&Tensor], backward: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync + 'static,
    {
        let needs = grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        if needs {
            let inputs = inputs.iter().map(|t| (*t).clone()).collect();
            Self::build(data, shape, true, inputs, Some(Box::new(backward)))
        } else {
            Self::build(data, shape, false, Vec::new(), None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::usage(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data[0])
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock") = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::build(self.0.data.clone(), self.0.shape.clone(), false, Vec::new(), None)
    }

    /// Same values under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        validate_shape(shape, self.numel())?;
        Ok(Tensor::from_op(
            self.0.data.clone(),
            shape.to_vec(),
            &[self],
            |g, _| vec![Some(g.to_vec())],
        ))
    }

    /// Dimensions as (N, C, H, W), rejecting other ranks.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match *self.shape() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::Usage(format!(
                "{op} expects an NCHW tensor, got shape {:?}",
                self.shape()
            ))),
        }
    }

    /// Reverse-mode differentiation from this one-element tensor.
    ///
    /// Gradients are added to whatever is already stored on each tensor, so
    /// calling this twice without [`Tensor::zero_grad`] doubles them.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<usize, Vec<f64>> = HashMap::new();
        pending.insert(self.0.id, vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = pending.remove(&node.0.id) else {
                continue;
            };
            if let Some(f) = &node.0.grad_fn {
                let input_grads = f(&g, &node.0.data);
                for (input, ig) in node.0.inputs.iter().zip(input_grads) {
                    let Some(ig) = ig else { continue };
                    if !input.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(ig.len(), input.numel());
                    match pending.get_mut(&input.0.id) {
                        Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(input.0.id, ig);
                        }
                    }
                }
            }
            let mut slot = node.0.grad.lock().expect("grad lock");
            match slot.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Nodes reachable from `self` through tensors requiring gradients, with
    /// every node appearing after all of its inputs.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.0.id) {
                continue;
            }
            stack.push((t.clone(), true));
            for input in &t.0.inputs {
                if input.requires_grad() && !visited.contains(&input.0.id) {
                    stack.push((input.clone(), false));
                }
            }
        }
        order
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data().iter().take(6).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}
