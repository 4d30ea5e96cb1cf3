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

//! Per-channel batch normalization over `[B, C, H, W]` or `[B, C]` inputs.
//!
//! Training mode normalizes with the biased batch variance. Running
//! statistics are updated by the caller as
//! `running = (1 - BN_MOMENTUM) * running + BN_MOMENTUM * batch`, where the
//! batch variance fed into the running average is the unbiased estimate
//! `var * n / (n - 1)`.

use super::{shape_err, Tensor, TensorError};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    shape: Vec<usize>,
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    gamma: Vec<f64>,
    /// Per-channel batch mean.
    pub mean: Vec<f64>,
    /// Per-channel biased batch variance.
    pub var: Vec<f64>,
}

impl BatchNormCache {
    /// Elements per channel in the batch.
    pub fn count(&self) -> usize {
        self.shape.iter().product::<usize>() / self.shape[1]
    }

    /// Unbiased variance estimate for the running-statistics update.
    pub fn unbiased_var(&self, channel: usize) -> f64 {
        let n = self.count();
        if n > 1 {
            self.var[channel] * n as f64 / (n - 1) as f64
        } else {
            self.var[channel]
        }
    }
}

/// `(batch, channels, spatial)` for rank-2 or rank-4 inputs.
fn layout(input: &Tensor, channels: usize, op: &'static str) -> Result<(usize, usize, usize), TensorError> {
    let (b, c, s) = match *input.shape() {
        [b, c] => (b, c, 1),
        [b, c, h, w] => (b, c, h * w),
        ref s => return Err(shape_err(op, format!("expected [B,C] or [B,C,H,W], got {s:?}"))),
    };
    if c != channels {
        return Err(shape_err(
            op,
            format!("input has {c} channels but parameters have {channels}"),
        ));
    }
    Ok((b, c, s))
}

fn check_params(op: &'static str, params: &[&Tensor]) -> Result<usize, TensorError> {
    let c = params[0].len();
    for p in params {
        if p.shape() != [c] {
            return Err(shape_err(
                op,
                format!("parameter shape {:?}, expected [{c}]", p.shape()),
            ));
        }
    }
    Ok(c)
}

pub fn batchnorm_forward_train(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
) -> Result<(Tensor, BatchNormCache), TensorError> {
    const OP: &str = "batchnorm_forward_train";
    let channels = check_params(OP, &[gamma, beta])?;
    let (b, c, s) = layout(input, channels, OP)?;
    let n = (b * s) as f64;
    let x = input.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut sum = 0.0;
        for bi in 0..b {
            sum += x[(bi * c + ch) * s..(bi * c + ch + 1) * s].iter().sum::<f64>();
        }
        let m = sum / n;
        let mut sq = 0.0;
        for bi in 0..b {
            sq += x[(bi * c + ch) * s..(bi * c + ch + 1) * s]
                .iter()
                .map(|v| (v - m) * (v - m))
                .sum::<f64>();
        }
        mean[ch] = m;
        var[ch] = sq / n;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
    let mut x_hat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for bi in 0..b {
        for ch in 0..c {
            let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
            for i in (bi * c + ch) * s..(bi * c + ch + 1) * s {
                let xh = (x[i] - mean[ch]) * inv_std[ch];
                x_hat[i] = xh;
                out[i] = g * xh + bt;
            }
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), out)?,
        BatchNormCache {
            shape: input.shape().to_vec(),
            x_hat,
            inv_std,
            gamma: gamma.data().to_vec(),
            mean,
            var,
        },
    ))
}

pub fn batchnorm_forward_eval(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
) -> Result<Tensor, TensorError> {
    const OP: &str = "batchnorm_forward_eval";
    let channels = check_params(OP, &[gamma, beta, running_mean, running_var])?;
    let (b, c, s) = layout(input, channels, OP)?;
    let mut out = input.clone();
    let od = out.data_mut();
    for ch in 0..c {
        let inv = 1.0 / (running_var.data()[ch] + BN_EPSILON).sqrt();
        let scale = gamma.data()[ch] * inv;
        let shift = beta.data()[ch] - running_mean.data()[ch] * scale;
        for bi in 0..b {
            for v in &mut od[(bi * c + ch) * s..(bi * c + ch + 1) * s] {
                *v = *v * scale + shift;
            }
        }
    }
    Ok(out)
}

/// Returns `(grad_input, grad_gamma, grad_beta)` for a training-mode forward.
pub fn batchnorm_backward(cache: &BatchNormCache, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor), TensorError> {
    const OP: &str = "batchnorm_backward";
    if grad_out.shape() != cache.shape.as_slice() {
        return Err(shape_err(
            OP,
            format!("grad_out {:?} vs forward {:?}", grad_out.shape(), cache.shape),
        ));
    }
    let b = cache.shape[0];
    let c = cache.shape[1];
    let s = cache.count() / b;
    let n = (b * s) as f64;
    let dy = grad_out.data();
    let mut d_gamma = vec![0.0; c];
    let mut d_beta = vec![0.0; c];
    for bi in 0..b {
        for ch in 0..c {
            let span = (bi * c + ch) * s..(bi * c + ch + 1) * s;
            for (&g, &xh) in dy[span.clone()].iter().zip(&cache.x_hat[span]) {
                d_beta[ch] += g;
                d_gamma[ch] += g * xh;
            }
        }
    }
    let mut dx = vec![0.0; dy.len()];
    for bi in 0..b {
        for ch in 0..c {
            let k = cache.gamma[ch] * cache.inv_std[ch] / n;
            for i in (bi * c + ch) * s..(bi * c + ch + 1) * s {
                dx[i] = k * (n * dy[i] - d_beta[ch] - cache.x_hat[i] * d_gamma[ch]);
            }
        }
    }
    Ok((
        Tensor::new(cache.shape.clone(), dx)?,
        Tensor::new(vec![c], d_gamma)?,
        Tensor::new(vec![c], d_beta)?,
    ))
}
