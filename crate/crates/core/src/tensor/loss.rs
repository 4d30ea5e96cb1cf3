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

use super::{dims2, shape_err, Tensor, TensorError};

/// Mean softmax cross-entropy over the batch and its gradient with respect to
/// the logits, `(softmax - onehot) / B`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor), TensorError> {
    const OP: &str = "softmax_cross_entropy";
    let (b, classes) = dims2(logits, OP)?;
    if labels.len() != b {
        return Err(shape_err(OP, format!("{} labels for a batch of {b}", labels.len())));
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(TensorError::LabelRange {
            op: OP,
            label,
            index,
            classes,
        });
    }
    let mut grad = vec![0.0; b * classes];
    let mut total = 0.0;
    for (i, (row, &label)) in logits.data().chunks_exact(classes).zip(labels).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[label];
        let g = &mut grad[i * classes..(i + 1) * classes];
        for (gv, v) in g.iter_mut().zip(row) {
            *gv = (v - log_z).exp() / b as f64;
        }
        g[label] -= 1.0 / b as f64;
    }
    Ok((total / b as f64, Tensor::new(vec![b, classes], grad)?))
}
