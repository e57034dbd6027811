//! Dense double-precision tensors with reverse-mode differentiation.
//!
//! A [`Tensor`] is an immutable, reference-counted buffer. Operations on
//! tensors that require gradients record a node linking the result to its
//! inputs; [`Tensor::backward`] walks those nodes in reverse topological
//! order (see [`GradientTape`]) and accumulates gradients into every leaf
//! created with `requires_grad`.
//!
//! Image tensors use the `N × C × H × W` layout throughout.

mod autograd;
mod conv;
mod norm;
mod ops;

use std::fmt;
use std::sync::{Arc, Mutex};

use rand::Rng;

use crate::error::{Error, Result};

pub use autograd::{is_grad_enabled, kink_signature, no_grad, GradientTape};
pub use conv::{conv2d, conv2d_transpose, conv_output_extent, ConvParams};
pub use norm::{batchnorm2d, BatchNormMode, RunningStats, BN_EPS, BN_MOMENTUM};
pub use ops::{
    abs, add, add_channel, add_scalar, channel_mean, concat_channels, l1_loss, mean, mul,
    mul_channel, neg, recip, relu, scale, slice_channels, sqrt, sub, sum,
};

pub(crate) use autograd::BackwardFn;

pub(crate) struct Node {
    pub(crate) op: &'static str,
    pub(crate) inputs: Vec<Tensor>,
    pub(crate) backward: BackwardFn,
}

struct Inner {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    node: Option<Node>,
}

/// Shared handle to an immutable tensor buffer.
#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

impl Tensor {
    /// Creates a detached tensor, checking that `data` fills `shape`.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} holds {numel} elements, data has {}", data.len()),
            ));
        }
        Ok(Self::leaf(shape.to_vec(), data, false))
    }

    /// Creates a leaf that participates in differentiation.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Ok(Self::new(shape, data)?.requires_grad(true))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self::leaf(shape.to_vec(), vec![value; numel], false)
    }

    pub fn scalar(value: f64) -> Self {
        Self::leaf(Vec::new(), vec![value], false)
    }

    /// Samples every element independently from `U(low, high)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], low: f64, high: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.gen_range(low..high)).collect();
        Self::leaf(shape.to_vec(), data, false)
    }

    /// Samples every element independently from the standard normal.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| StandardNormal.sample(&mut *rng))
            .collect();
        Self::leaf(shape.to_vec(), data, false)
    }

    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Self {
        Tensor(Arc::new(Inner {
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            node: None,
        }))
    }

    /// Builds the result of a differentiable operation. The node is only
    /// recorded when gradients are enabled and some input requires them.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        op: &'static str,
        inputs: &[&Tensor],
        backward: impl Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + Send + Sync + 'static,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len(), "{op}");
        let track = is_grad_enabled() && inputs.iter().any(|t| t.requires_grad_flag());
        if !track {
            return Self::leaf(shape, data, false);
        }
        Tensor(Arc::new(Inner {
            shape,
            data,
            requires_grad: true,
            grad: Mutex::new(None),
            node: Some(Node {
                op,
                inputs: inputs.iter().map(|t| (*t).clone()).collect(),
                backward: Box::new(backward),
            }),
        }))
    }

    /// Returns a new leaf sharing this tensor's values with the given flag.
    pub fn requires_grad(&self, flag: bool) -> Self {
        Self::leaf(self.shape().to_vec(), self.data().to_vec(), flag)
    }

    /// Returns a leaf copy cut off from the tape.
    pub fn detach(&self) -> Self {
        self.requires_grad(false)
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

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn requires_grad_flag(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    pub(crate) fn node(&self) -> Option<&Node> {
        self.0.node.as_ref()
    }

    pub(crate) fn id(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    /// The value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::shape(
                "Tensor::item",
                format!("expected one element, shape is {:?}", self.shape()),
            ));
        }
        Ok(self.0.data[0])
    }

    /// Accumulated gradient, if any backward pass has reached this leaf.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.0.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Back-propagates from this scalar through every recorded operation.
    pub fn backward(&self) -> Result<()> {
        GradientTape::record(self).backward(self)
    }

    /// Extents of an `N × C × H × W` tensor.
    pub fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match *self.shape() {
            [n, c, h, w] => Ok([n, c, h, w]),
            ref s => Err(Error::shape(op, format!("expected a 4-D NCHW tensor, got {s:?}"))),
        }
    }

    /// Reinterprets the buffer under a new shape of equal size. Detached.
    pub fn reshape_detached(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data().to_vec())
    }

    pub fn max_abs(&self) -> f64 {
        self.data().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.shape());
        s.field("requires_grad", &self.requires_grad_flag());
        if let Some(node) = self.node() {
            s.field("op", &node.op);
        }
        if self.numel() <= 16 {
            s.field("data", &self.data());
        }
        s.finish()
    }
}

pub(crate) fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}
