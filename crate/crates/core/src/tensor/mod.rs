//! Dense row-major tensors and a tape-based reverse-mode autodiff engine.
//!
//! The engine only carries the operations the mini multi-fiber network and
//! the distillation losses need. There is no broadcasting apart from the
//! per-channel bias/scale/shift adds; every other shape mismatch is an error.

mod conv;
pub mod gradcheck;
mod ops;
mod tape;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;

use num_traits::Float;
use thiserror::Error;

pub use conv::{conv3d_reference, conv_output_extent, Conv3dParams};
pub use ops::log_softmax_rows;
pub use tape::{Tape, Var};

/// Floating element type of a tensor. Implemented for `f32` (training) and
/// `f64` (oracles and gradient checks).
pub trait Real: Float + Default + Debug + Send + Sync + core::iter::Sum + 'static {
    /// Lossy conversion from `f64`.
    fn of(x: f64) -> Self;
    fn to_f64_lossy(self) -> f64;

    /// `c = alpha * a * b + beta * c` on strided matrices (m×k times k×n).
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-overlapping (for `c`)
    /// matrices of the given extents.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn to_f64_lossy(self) -> f64 {
        self
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} values but {actual} were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("zero extent in shape {0:?}")]
    ZeroExtent(Vec<usize>),
    #[error("{op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("{op}: {detail}")]
    Config { op: &'static str, detail: String },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this tape; reset gradients first")]
    BackwardTwice,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}

pub(crate) fn dim_err(op: &'static str, detail: String) -> TensorError {
    TensorError::Dimension { op, detail }
}

const LANES: usize = 8;

/// Sum in eight interleaved lanes, combined pairwise at the end. The order is
/// fixed, so results are reproducible, and the compiler can vectorize it.
pub(crate) fn lane_sum<T: Real>(xs: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    let chunks = xs.chunks_exact(LANES);
    let tail = chunks.remainder();
    for ch in chunks {
        for i in 0..LANES {
            acc[i] = acc[i] + ch[i];
        }
    }
    fold_lanes(acc, tail.iter().fold(T::zero(), |a, &v| a + v))
}

/// `Σ (x - mu)²` with the same lane order as [`lane_sum`].
pub(crate) fn lane_sq_dev<T: Real>(xs: &[T], mu: T) -> T {
    let mut acc = [T::zero(); LANES];
    let chunks = xs.chunks_exact(LANES);
    let tail = chunks.remainder();
    for ch in chunks {
        for i in 0..LANES {
            let d = ch[i] - mu;
            acc[i] = acc[i] + d * d;
        }
    }
    fold_lanes(acc, tail.iter().fold(T::zero(), |a, &v| a + (v - mu) * (v - mu)))
}

/// `Σ a·b` with the same lane order as [`lane_sum`].
pub(crate) fn lane_dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let tail = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .fold(T::zero(), |s, (&x, &y)| s + x * y);
    for (x, y) in ca.zip(cb) {
        for i in 0..LANES {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    fold_lanes(acc, tail)
}

fn fold_lanes<T: Real>(acc: [T; LANES], tail: T) -> T {
    let q = [acc[0] + acc[4], acc[1] + acc[5], acc[2] + acc[6], acc[3] + acc[7]];
    (q[0] + q[2]) + (q[1] + q[3]) + tail
}

/// Row-major dense tensor. `shape.iter().product() == data.len()` always holds.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        if shape.contains(&0) {
            return Err(TensorError::ZeroExtent(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a tensor from `f64` values, converting element-wise.
    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self, TensorError> {
        Self::new(shape, data.iter().map(|&x| T::of(x)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, TensorError> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Element-type conversion through `f64`.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::of(x.to_f64_lossy())).collect(),
        }
    }

    /// Concatenates tensors along axis 1 (channels). All other extents must agree.
    pub fn concat_channels(parts: &[Tensor<T>]) -> Result<Self, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| dim_err("concat_channels", "no tensors".into()))?;
        if first.rank() < 2 {
            return Err(dim_err("concat_channels", "rank must be at least 2".into()));
        }
        let n = first.shape[0];
        let inner: usize = first.shape[2..].iter().product();
        let mut channels = 0;
        for p in parts {
            if p.rank() != first.rank() || p.shape[0] != n || p.shape[2..] != first.shape[2..] {
                return Err(dim_err(
                    "concat_channels",
                    alloc::format!("{:?} vs {:?}", p.shape, first.shape),
                ));
            }
            channels += p.shape[1];
        }
        let mut data = Vec::with_capacity(n * channels * inner);
        for s in 0..n {
            for p in parts {
                let c = p.shape[1];
                data.extend_from_slice(&p.data[s * c * inner..(s + 1) * c * inner]);
            }
        }
        let mut shape = first.shape.clone();
        shape[1] = channels;
        Self::new(shape, data)
    }

    /// Copies channels `[start, start + count)` (axis 1).
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Self, TensorError> {
        if self.rank() < 2 || start + count > self.shape[1] || count == 0 {
            return Err(dim_err(
                "slice_channels",
                alloc::format!("[{start}, {}) of {:?}", start + count, self.shape),
            ));
        }
        let n = self.shape[0];
        let c = self.shape[1];
        let inner: usize = self.shape[2..].iter().product();
        let mut data = Vec::with_capacity(n * count * inner);
        for s in 0..n {
            let base = (s * c + start) * inner;
            data.extend_from_slice(&self.data[base..base + count * inner]);
        }
        let mut shape = self.shape.clone();
        shape[1] = count;
        Self::new(shape, data)
    }

    /// Stacks same-shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self, TensorError> {
        let first = items.first().ok_or_else(|| dim_err("stack", "no tensors".into()))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(dim_err("stack", alloc::format!("{:?} vs {:?}", t.shape, first.shape)));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = Vec::with_capacity(first.rank() + 1);
        shape.push(items.len());
        shape.extend_from_slice(&first.shape);
        Self::new(shape, data)
    }
}
