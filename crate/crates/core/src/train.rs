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

//! Mini-batch SGD epochs and evaluation.
//!
//! Each epoch visits the training set in an order drawn from the run's data
//! generator (one Fisher-Yates shuffle of `0..N` per epoch). The last batch
//! may be smaller than the configured size.

use crate::data::Dataset;
use crate::model::{ModelError, ModelGraph, Optimizer};
use crate::tensor::{Rng, SgdConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Base learning rate, momentum and weight decay.
    pub sgd: SgdConfig,
    /// Evaluate on the test set every this many epochs; 0 evaluates only
    /// after the final epoch.
    pub eval_every: u32,
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            sgd: SgdConfig::default(),
            eval_every: 1,
            eval_batch: 500,
        }
    }
}

/// Step decay: the base rate until half the budget, x0.1 from then, x0.01
/// from three quarters on. `epoch` counts from 0.
pub fn lr_at(base: f64, epoch: u32, total: u32) -> f64 {
    let (e, t) = (u64::from(epoch), u64::from(total));
    if 4 * e >= 3 * t {
        base * 0.01
    } else if 2 * e >= t {
        base * 0.1
    } else {
        base
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// Sample-weighted mean training loss.
    pub loss: f64,
    pub samples: usize,
}

pub fn train_epoch(
    model: &mut ModelGraph,
    data: &Dataset,
    batch_size: usize,
    optimizer: &mut Optimizer,
    lr: f64,
    rng: &mut Rng,
) -> Result<EpochStats, ModelError> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut order: Vec<usize> = (0..data.len()).collect();
    rng.shuffle(&mut order);
    let mut total = 0.0;
    for chunk in order.chunks(batch_size) {
        let (x, y) = data.batch(chunk);
        total += model.backward_and_step(&x, &y, optimizer, lr)? * chunk.len() as f64;
    }
    Ok(EpochStats {
        loss: if data.is_empty() {
            0.0
        } else {
            total / data.len() as f64
        },
        samples: data.len(),
    })
}

/// Fraction of correctly classified samples (argmax, first index on ties).
pub fn evaluate(model: &ModelGraph, data: &Dataset, batch_size: usize) -> Result<f64, ModelError> {
    assert!(batch_size > 0, "batch size must be positive");
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size) {
        let (x, y) = data.batch(chunk);
        let logits = model.forward_eval(&x)?;
        for (b, &label) in y.iter().enumerate() {
            let row = logits.row(b);
            let pred = row
                .iter()
                .enumerate()
                .fold(0, |best, (j, &v)| if v > row[best] { j } else { best });
            correct += usize::from(pred == label);
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
