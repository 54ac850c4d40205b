//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! A [`Tensor`] is an immutable value. Tensors that were registered on a
//! [`Tape`] (via [`Tape::watch`]) or computed from such tensors carry a handle
//! to the node that produced them; everything else is a constant. Calling
//! [`grad`] with `create_graph = true` records the backward pass itself, so
//! the returned gradients can be differentiated again.
//!
//! ```
//! use fewshot_core::tensor::{grad, Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.watch(&Tensor::scalar(2.0));
//! let y = x.mul(&x).unwrap().mul(&x).unwrap(); // x^3
//! let dy = grad(&y, &[x.clone()], true).unwrap();
//! let d2y = grad(&dy[0], &[x], false).unwrap();
//! assert_eq!(dy[0].item(), 12.0);
//! assert_eq!(d2y[0].item(), 12.0);
//! ```

mod kernels;
mod loss;
mod ops;
mod tape;

use std::fmt;
use std::sync::Arc;

pub use loss::{mse_loss, softmax_cross_entropy, softmax_cross_entropy_onehot};
pub use tape::{grad, Tape};

pub(crate) use tape::NodeRef;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} values but {actual} were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape {0:?} has a zero-sized dimension")]
    ZeroDim(Vec<usize>),
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("conv2d: {0}")]
    Conv(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("loss is not recorded on any tape")]
    LossNotOnTape,
    #[error("wrt[{0}] is not recorded on the loss's tape")]
    NotOnTape(usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Row-major `f64` tensor, optionally attached to a differentiation tape.
#[derive(Clone)]
pub struct Tensor {
    shape: Arc<[usize]>,
    data: Arc<Vec<f64>>,
    node: Option<NodeRef>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.contains(&0) {
        return Err(TensorError::ZeroDim(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected = check_shape(shape)?;
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected,
                actual: data.len(),
            });
        }
        Ok(Self::from_parts(shape.into(), Arc::new(data), None))
    }

    pub(crate) fn from_parts(shape: Arc<[usize]>, data: Arc<Vec<f64>>, node: Option<NodeRef>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data, node }
    }

    /// Internal constructor for shapes already known to be valid.
    pub(crate) fn raw(shape: &[usize], data: Vec<f64>) -> Self {
        Self::from_parts(shape.into(), Arc::new(data), None)
    }

    pub fn scalar(value: f64) -> Self {
        Self::raw(&[], vec![value])
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Self::raw(shape, vec![value; n]))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 1.0)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Self::raw(shape, (0..n).map(&mut f).collect()))
    }

    pub fn zeros_like(&self) -> Self {
        Self::raw(&self.shape, vec![0.0; self.numel()])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    /// The single value of a one-element tensor.
    ///
    /// Panics if the tensor holds more than one value.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// True when this tensor is recorded on a tape and can receive gradients.
    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Same values, no tape attachment.
    pub fn detach(&self) -> Tensor {
        Self::from_parts(self.shape.clone(), self.data.clone(), None)
    }

    /// Detached copy backed by freshly allocated storage.
    pub fn deep_clone(&self) -> Tensor {
        Self::from_parts(self.shape.clone(), Arc::new(self.data.as_ref().clone()), None)
    }

    /// True when both tensors are backed by the same allocation.
    pub fn shares_storage(&self, other: &Tensor) -> bool {
        Arc::ptr_eq(&self.data, &other.data)
    }

    /// Bitwise equality of shape and values.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub(crate) fn node(&self) -> Option<&NodeRef> {
        self.node.as_ref()
    }

    pub(crate) fn shape_arc(&self) -> &Arc<[usize]> {
        &self.shape
    }

    pub(crate) fn data_arc(&self) -> &Arc<Vec<f64>> {
        &self.data
    }

    /// Index of the largest value in each row of a 2-D tensor.
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        if self.rank() != 2 {
            return Err(TensorError::Rank {
                op: "argmax_rows",
                expected: 2,
                shape: self.shape.to_vec(),
            });
        }
        let cols = self.shape[1];
        Ok(self
            .data
            .chunks(cols)
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

#[cfg(test)]
mod tests;
