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

use super::gemm::{gemm, MatRef};
use super::{dims2, shape_err, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

fn check(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    op: &'static str,
) -> Result<(usize, usize, usize), TensorError> {
    let (b, fin) = dims2(input, op)?;
    let (fout, win) = dims2(weights, op)?;
    if fin != win {
        return Err(shape_err(
            op,
            format!("input has {fin} features but weights expect {win}"),
        ));
    }
    if bias.shape() != [fout] {
        return Err(shape_err(
            op,
            format!("bias shape {:?} does not match {fout} outputs", bias.shape()),
        ));
    }
    Ok((b, fin, fout))
}

/// `y = x W^T + b` with `x: [B, in]`, `W: [out, in]`.
pub fn linear_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor, TensorError> {
    let (b, fin, fout) = check(input, weights, bias, "linear_forward")?;
    let mut out = vec![0.0; b * fout];
    gemm(
        MatRef::row_major(input.data(), b, fin),
        MatRef::transposed(weights.data(), fout, fin),
        0.0,
        &mut out,
    );
    for row in out.chunks_exact_mut(fout) {
        for (v, bias) in row.iter_mut().zip(bias.data()) {
            *v += bias;
        }
    }
    Tensor::new(vec![b, fout], out)
}

pub fn linear_backward(input: &Tensor, weights: &Tensor, grad_out: &Tensor) -> Result<LinearGrads, TensorError> {
    const OP: &str = "linear_backward";
    let (b, fin) = dims2(input, OP)?;
    let (fout, win) = dims2(weights, OP)?;
    if fin != win {
        return Err(shape_err(
            OP,
            format!("input has {fin} features but weights expect {win}"),
        ));
    }
    if grad_out.shape() != [b, fout] {
        return Err(shape_err(
            OP,
            format!("grad_out shape {:?}, expected [{b}, {fout}]", grad_out.shape()),
        ));
    }
    let mut gx = vec![0.0; b * fin];
    gemm(
        MatRef::row_major(grad_out.data(), b, fout),
        MatRef::row_major(weights.data(), fout, fin),
        0.0,
        &mut gx,
    );
    let mut gw = vec![0.0; fout * fin];
    gemm(
        MatRef::transposed(grad_out.data(), b, fout),
        MatRef::row_major(input.data(), b, fin),
        0.0,
        &mut gw,
    );
    let mut gb = vec![0.0; fout];
    for row in grad_out.data().chunks_exact(fout) {
        for (acc, g) in gb.iter_mut().zip(row) {
            *acc += g;
        }
    }
    Ok(LinearGrads {
        input: Tensor::new(vec![b, fin], gx)?,
        weights: Tensor::new(vec![fout, fin], gw)?,
        bias: Tensor::new(vec![fout], gb)?,
    })
}
