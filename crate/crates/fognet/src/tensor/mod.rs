//! Dense tensors and the autodiff tape.
//!
//! [`Tensor`] is a flat buffer plus a shape; ranks 0..=2 cover everything the
//! engine needs (scalars for losses, vectors for biases and attention logits,
//! matrices for node/edge feature blocks). [`Tape`] records every operation
//! applied to tape variables so that [`Tape::backward`] can replay them in
//! reverse and accumulate exact adjoints.
//!
//! Precision is a type parameter: the same code path runs in `f32` for
//! training and `f64` for gradient checking.

mod batchnorm;
pub mod gradcheck;
mod tape;

pub use batchnorm::{BnMode, BnStats};
pub use tape::{Activation, Gradients, Tape, Var};

use rand::Rng;
use std::fmt;
use thiserror::Error;

/// Floating-point scalar the engine runs on. Implemented for `f32`/`f64`.
pub trait Real:
    num_traits::Float + fmt::Debug + fmt::Display + Default + std::iter::Sum + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Casts an `f64` literal into the active precision.
#[inline]
pub fn real<F: Real>(x: f64) -> F {
    F::from(x).expect("finite f64 converts to any Real")
}

/// Errors produced by tensor construction and tape operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op} expects a rank-{expected} input, got shape {shape:?}")]
    RankError {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("data length {len} does not fill shape {shape:?}")]
    ElementCount { len: usize, shape: Vec<usize> },
    #[error("{op}: index {index} out of range ({len} rows)")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("segment id {id} out of range (n_segments = {n})")]
    SegmentOutOfRange { id: usize, n: usize },
    #[error("segment {segment} is empty where a nonempty reduction is required")]
    EmptySegment { segment: usize },
    #[error("cannot normalize a single-row batch in train mode")]
    DegenerateBatch,
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    LossNotScalar { shape: Vec<usize> },
    #[error("variable {id} is not on this tape ({len} nodes)")]
    NotOnTape { id: usize, len: usize },
    #[error("layer needs per-edge state but none was provided")]
    MissingEdgeState,
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },
}

/// Row-major dense tensor of rank 0, 1 or 2.
#[derive(Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    /// Zero-filled tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![F::zero(); shape.iter().product()],
        }
    }

    /// Tensor of the given shape with every element set to `v`.
    pub fn filled(shape: &[usize], v: F) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    /// Builds a tensor from raw parts, checking that the data fills the shape.
    pub fn from_vec(shape: Vec<usize>, data: Vec<F>) -> Result<Self, TensorError> {
        let need: usize = shape.iter().product();
        if data.len() != need {
            return Err(TensorError::ElementCount {
                len: data.len(),
                shape,
            });
        }
        Ok(Tensor { shape, data })
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(v: F) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    /// Rank-1 tensor from a plain vector.
    pub fn vector(data: Vec<F>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Rank-2 tensor from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<F>) -> Result<Self, TensorError> {
        Tensor::from_vec(vec![rows, cols], data)
    }

    /// Samples every element from `U(lo, hi)`.
    pub fn uniform<R: Rng>(rng: &mut R, shape: &[usize], lo: f64, hi: f64) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| real(rng.gen_range(lo..hi))).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
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

    /// Number of rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.rank(), 2, "rows() needs a rank-2 tensor");
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.rank(), 2, "cols() needs a rank-2 tensor");
        self.shape[1]
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// Element of a rank-2 tensor.
    #[inline]
    pub fn at2(&self, r: usize, c: usize) -> F {
        debug_assert_eq!(self.rank(), 2);
        self.data[r * self.shape[1] + c]
    }

    #[inline]
    pub fn set2(&mut self, r: usize, c: usize, v: F) {
        debug_assert_eq!(self.rank(), 2);
        self.data[r * self.shape[1] + c] = v;
    }

    /// The single value of a rank-0 or one-element tensor.
    pub fn item(&self) -> F {
        debug_assert_eq!(self.numel(), 1, "item() needs exactly one element");
        self.data[0]
    }

    /// `self += other * scale`, shapes must already match.
    pub fn add_scaled(&mut self, other: &Tensor<F>, scale: F) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b * scale;
        }
    }

    /// Largest absolute elementwise difference between two tensors.
    pub fn max_abs_diff(&self, other: &Tensor<F>) -> F {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs())
            .fold(F::zero(), F::max)
    }

    /// True if every element is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Lossless-at-precision conversion to `f64` storage.
    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v.to_f64().unwrap()).collect(),
        }
    }

    /// Conversion from `f64` storage into the active precision.
    pub fn from_f64(src: &Tensor<f64>) -> Self {
        Tensor {
            shape: src.shape.clone(),
            data: src.data.iter().map(|v| real(*v)).collect(),
        }
    }
}

impl<F: Real> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.numel() <= 8 {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " [{} values]", self.numel())
        }
    }
}
