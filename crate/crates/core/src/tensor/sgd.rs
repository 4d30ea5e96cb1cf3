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

//! SGD with momentum and L2 weight decay:
//!
//! ```text
//! v <- momentum * v + grad + weight_decay * param
//! param <- param - lr * v
//! ```

use super::{shape_err, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Reject non-finite gradients before touching the parameters.
    pub checked: bool,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            checked: true,
        }
    }
}

fn check_shapes(param: &Tensor, grad: &Tensor, velocity: &Tensor) -> Result<(), TensorError> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return Err(shape_err(
            "sgd_step",
            format!(
                "param {:?}, grad {:?}, velocity {:?}",
                param.shape(),
                grad.shape(),
                velocity.shape()
            ),
        ));
    }
    Ok(())
}

#[inline]
fn update(p: &mut [f64], g: &[f64], v: &mut [f64], cfg: &SgdConfig) {
    for ((p, g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
        *v = cfg.momentum * *v + g + cfg.weight_decay * *p;
        *p -= cfg.lr * *v;
    }
}

pub fn sgd_step(param: &mut Tensor, grad: &Tensor, velocity: &mut Tensor, cfg: &SgdConfig) -> Result<(), TensorError> {
    check_shapes(param, grad, velocity)?;
    if cfg.checked {
        grad.check_finite("sgd_step")?;
    }
    update(param.data_mut(), grad.data(), velocity.data_mut(), cfg);
    Ok(())
}

/// Like [`sgd_step`] but only slices along the leading axis with
/// `active[row] == true` are touched. Frozen rows keep their parameter and
/// velocity bits unchanged.
pub fn sgd_step_rows(
    param: &mut Tensor,
    grad: &Tensor,
    velocity: &mut Tensor,
    cfg: &SgdConfig,
    active: &[bool],
) -> Result<(), TensorError> {
    check_shapes(param, grad, velocity)?;
    if param.rank() == 0 || active.len() != param.dim(0) {
        return Err(shape_err(
            "sgd_step",
            format!("row mask of length {} for parameter {:?}", active.len(), param.shape()),
        ));
    }
    if cfg.checked {
        grad.check_finite("sgd_step")?;
    }
    let n = param.row_len();
    let (p, g, v) = (param.data_mut(), grad.data(), velocity.data_mut());
    for (row, _) in active.iter().enumerate().filter(|(_, &a)| a) {
        let r = row * n..(row + 1) * n;
        update(&mut p[r.clone()], &g[r.clone()], &mut v[r], cfg);
    }
    Ok(())
}
