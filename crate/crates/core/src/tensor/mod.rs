// Copyright 2026 The IPLT Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Dense row-major `f64` tensors and the forward/backward kernels needed to
//! train small CNNs with mini-batch SGD.
//!
//! Every kernel is a free function over borrowed tensors. Nothing here keeps
//! hidden state, so two calls with identical inputs produce bit-identical
//! outputs.

mod activation;
mod batchnorm;
mod conv;
mod gemm;
mod linear;
mod loss;
mod rng;
mod sgd;

use thiserror::Error;

pub use activation::{maxpool2d_backward, maxpool2d_forward, relu_backward, relu_forward, PoolIndices};
pub use batchnorm::{
    batchnorm_backward, batchnorm_forward_eval, batchnorm_forward_train, BatchNormCache, BN_EPSILON, BN_MOMENTUM,
};
pub use conv::{
    conv2d_backward, conv2d_backward_params, conv2d_forward, conv_output_size, per_filter_forward, ConvGrads,
    ConvParams,
};
pub use linear::{linear_backward, linear_forward, LinearGrads};
pub use loss::softmax_cross_entropy;
pub use rng::{Rng, RngState};
pub use sgd::{sgd_step, sgd_step_rows, SgdConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("shape {0:?} has a zero dimension")]
    ZeroDim(Vec<usize>),
    #[error("{op}: non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("{op}: label {label} at position {index} is outside 0..{classes}")]
    LabelRange {
        op: &'static str,
        label: usize,
        index: usize,
        classes: usize,
    },
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Shape {
        op,
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.contains(&0) {
            return Err(TensorError::ZeroDim(shape));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::DataLength { shape, len: data.len() });
        }
        Ok(Self { shape, data })
    }

    /// Panics if any dimension is zero.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        assert!(
            shape.iter().all(|&d| d > 0),
            "tensor shape {shape:?} has a zero dimension"
        );
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Samples every element from `N(0, std^2)`.
    pub fn randn(shape: &[usize], std: f64, rng: &mut Rng) -> Self {
        let mut t = Self::zeros(shape);
        for v in &mut t.data {
            *v = rng.normal() * std;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, TensorError> {
        if shape.contains(&0) {
            return Err(TensorError::ZeroDim(shape.to_vec()));
        }
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                len: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Number of elements in one slice along the leading axis.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.row_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.row_len();
        &mut self.data[i * n..(i + 1) * n]
    }

    /// Checked mode: fails on the first NaN or infinity.
    pub fn check_finite(&self, op: &'static str) -> Result<(), TensorError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(TensorError::NonFinite { op, index }),
            None => Ok(()),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on mismatched shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn dims4(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize, usize), TensorError> {
    match *t.shape() {
        [b, c, h, w] => Ok((b, c, h, w)),
        ref s => Err(shape_err(op, format!("expected a rank-4 [B,C,H,W] tensor, got {s:?}"))),
    }
}

pub(crate) fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize), TensorError> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        ref s => Err(shape_err(op, format!("expected a rank-2 tensor, got {s:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert_eq!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(TensorError::DataLength {
                shape: vec![2, 3],
                len: 5
            })
        );
        assert_eq!(Tensor::new(vec![2, 0], vec![]), Err(TensorError::ZeroDim(vec![2, 0])));
    }

    #[test]
    fn check_finite_reports_index() {
        let t = Tensor::new(vec![3], vec![1.0, f64::NAN, 2.0]).unwrap();
        assert_eq!(
            t.check_finite("test"),
            Err(TensorError::NonFinite { op: "test", index: 1 })
        );
        assert!(Tensor::zeros(&[4]).check_finite("test").is_ok());
    }

    #[test]
    fn rows_follow_leading_axis() {
        let t = Tensor::new(vec![2, 2, 2], (0..8).map(f64::from).collect()).unwrap();
        assert_eq!(t.row(1), &[4.0, 5.0, 6.0, 7.0]);
        let t = t.reshape(&[4, 2]).unwrap();
        assert_eq!(t.row(3), &[6.0, 7.0]);
    }
}
