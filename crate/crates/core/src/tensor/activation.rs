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

use super::{dims4, shape_err, Tensor, TensorError};

pub fn relu_forward(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        *v = v.max(0.0);
    }
    out
}

/// Passes gradient where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor, TensorError> {
    if input.shape() != grad_out.shape() {
        return Err(shape_err(
            "relu_backward",
            format!("input {:?} vs grad_out {:?}", input.shape(), grad_out.shape()),
        ));
    }
    let mut g = grad_out.clone();
    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *gv = 0.0;
        }
    }
    Ok(g)
}

/// Flat input offset of the winning element for each pooled output.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndices {
    pub input_shape: Vec<usize>,
    pub argmax: Vec<usize>,
}

/// Max pooling without padding; the first maximum in row-major window order
/// wins ties.
pub fn maxpool2d_forward(input: &Tensor, window: usize, stride: usize) -> Result<(Tensor, PoolIndices), TensorError> {
    const OP: &str = "maxpool2d_forward";
    let (b, c, h, w) = dims4(input, OP)?;
    if window == 0 || stride == 0 {
        return Err(shape_err(OP, "window and stride must be positive"));
    }
    if h < window || w < window {
        return Err(shape_err(OP, format!("window {window} larger than {h}x{w} input")));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = vec![0.0; b * c * oh * ow];
    let mut argmax = vec![0usize; b * c * oh * ow];
    let x = input.data();
    let mut o = 0;
    for plane in x.chunks_exact(h * w) {
        let base = o / (oh * ow) * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let start = oy * stride * w + ox * stride;
                let (mut best, mut best_v) = (start, plane[start]);
                for ky in 0..window {
                    let row = start + ky * w;
                    for (kx, &v) in plane[row..row + window].iter().enumerate() {
                        // Random data would mispredict about half of these
                        // comparisons as branches.
                        let take = v > best_v;
                        best_v = std::hint::select_unpredictable(take, v, best_v);
                        best = std::hint::select_unpredictable(take, row + kx, best);
                    }
                }
                out[o] = best_v;
                argmax[o] = base + best;
                o += 1;
            }
        }
    }
    Ok((
        Tensor::new(vec![b, c, oh, ow], out)?,
        PoolIndices {
            input_shape: input.shape().to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool2d_backward(grad_out: &Tensor, indices: &PoolIndices) -> Result<Tensor, TensorError> {
    if grad_out.len() != indices.argmax.len() {
        return Err(shape_err(
            "maxpool2d_backward",
            format!(
                "grad_out has {} elements but forward produced {}",
                grad_out.len(),
                indices.argmax.len()
            ),
        ));
    }
    let mut g = Tensor::zeros(&indices.input_shape);
    let gd = g.data_mut();
    for (&idx, &v) in indices.argmax.iter().zip(grad_out.data()) {
        gd[idx] += v;
    }
    Ok(g)
}
