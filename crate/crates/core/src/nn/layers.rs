//! Layer specifications and the batched kernels behind them.
//!
//! Activations are `batch × features` matrices. Sequence activations store
//! `length × channels` per row, channel-minor, so a convolution window over
//! steps `t..t+k` is the contiguous slice `[t·C, (t+k)·C)` of the row.

use std::fmt;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

/// Numeric type a model can be instantiated with.
pub trait Scalar:
    LinalgScalar + Float + FromPrimitive + ScalarOperand + std::ops::AddAssign + Send + Sync + fmt::Debug + fmt::Display + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Valid (unpadded) convolution, stride 1.
    Conv1d { filters: usize, kernel: usize, activation: Activation },
    /// Non-overlapping pooling; stride equals the pool size, remainder dropped.
    MaxPool1d { pool: usize },
    /// Inverted dropout: training rescales kept units by `1 / (1 - rate)`.
    Dropout { rate: f64 },
    Flatten,
    Dense { units: usize, activation: Activation },
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::MaxPool1d { .. } => "max_pooling1d",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
        }
    }
}

/// Per-example activation shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Seq { len: usize, channels: usize },
    Flat(usize),
}

impl Shape {
    pub fn size(&self) -> usize {
        match *self {
            Shape::Seq { len, channels } => len * channels,
            Shape::Flat(n) => n,
        }
    }

    /// Leading dimension: sequence length, or the flat width.
    pub fn leading(&self) -> usize {
        match *self {
            Shape::Seq { len, .. } => len,
            Shape::Flat(n) => n,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Seq { len, channels } => write!(f, "(None, {len}, {channels})"),
            Shape::Flat(n) => write!(f, "(None, {n})"),
        }
    }
}

pub(crate) fn relu_inplace<T: Scalar>(x: &mut Array2<T>) {
    x.mapv_inplace(|v| if v < T::zero() { T::zero() } else { v });
}

/// Zeroes `grad` wherever the post-ReLU output was not positive.
pub(crate) fn relu_backward<T: Scalar>(grad: &mut Array2<T>, out: &Array2<T>) {
    ndarray::Zip::from(grad).and(out).for_each(|g, &o| {
        if o <= T::zero() {
            *g = T::zero();
        }
    });
}

pub(crate) fn softmax_rows<T: Scalar>(x: &mut Array2<T>) {
    for mut row in x.rows_mut() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

pub(crate) fn add_bias<T: Scalar>(x: &mut Array2<T>, bias: &Array1<T>) {
    for mut row in x.rows_mut() {
        row += bias;
    }
}

/// Unrolls every convolution window into a row: `(batch·out_len) × (kernel·channels)`.
pub(crate) fn im2col<T: Scalar>(x: ArrayView2<T>, channels: usize, kernel: usize, out_len: usize) -> Array2<T> {
    let batch = x.nrows();
    let width = kernel * channels;
    let mut cols = Array2::zeros((batch * out_len, width));
    for b in 0..batch {
        let row = x.row(b);
        for t in 0..out_len {
            cols.row_mut(b * out_len + t).assign(&row.slice(s![t * channels..t * channels + width]));
        }
    }
    cols
}

/// Scatters window gradients back onto the input (inverse of [`im2col`]).
pub(crate) fn col2im<T: Scalar>(dcols: &Array2<T>, batch: usize, in_len: usize, channels: usize, kernel: usize) -> Array2<T> {
    let out_len = in_len + 1 - kernel;
    let width = kernel * channels;
    let mut dx = Array2::zeros((batch, in_len * channels));
    for b in 0..batch {
        let mut row = dx.row_mut(b);
        for t in 0..out_len {
            let mut window = row.slice_mut(s![t * channels..t * channels + width]);
            window += &dcols.row(b * out_len + t);
        }
    }
    dx
}

/// Max pooling; returns the output and, per output element, the input column
/// that won (first maximum on ties).
pub(crate) fn maxpool_forward<T: Scalar>(
    x: ArrayView2<T>,
    in_len: usize,
    channels: usize,
    pool: usize,
) -> (Array2<T>, Vec<u32>) {
    let batch = x.nrows();
    let out_len = in_len / pool;
    let mut out = Array2::zeros((batch, out_len * channels));
    let mut argmax = vec![0u32; batch * out_len * channels];
    for b in 0..batch {
        let row = x.row(b);
        for o in 0..out_len {
            for c in 0..channels {
                let mut best_idx = o * pool * channels + c;
                let mut best = row[best_idx];
                for j in 1..pool {
                    let idx = (o * pool + j) * channels + c;
                    if row[idx] > best {
                        best = row[idx];
                        best_idx = idx;
                    }
                }
                out[(b, o * channels + c)] = best;
                argmax[(b * out_len + o) * channels + c] = best_idx as u32;
            }
        }
    }
    (out, argmax)
}

pub(crate) fn maxpool_backward<T: Scalar>(grad: &Array2<T>, argmax: &[u32], in_width: usize) -> Array2<T> {
    let batch = grad.nrows();
    let out_width = grad.ncols();
    let mut dx = Array2::zeros((batch, in_width));
    for b in 0..batch {
        for o in 0..out_width {
            let idx = argmax[b * out_width + o] as usize;
            dx[(b, idx)] += grad[(b, o)];
        }
    }
    dx
}

pub(crate) fn dropout_mask<T: Scalar>(rows: usize, cols: usize, rate: f64, rng: &mut dyn RngCore) -> Array2<T> {
    let keep_scale = T::from_f64(1.0 / (1.0 - rate)).expect("finite scale");
    Array2::from_shape_simple_fn((rows, cols), || if rng.gen::<f64>() >= rate { keep_scale } else { T::zero() })
}

pub(crate) fn sum_rows<T: Scalar>(x: &Array2<T>) -> Array1<T> {
    x.sum_axis(Axis(0))
}
