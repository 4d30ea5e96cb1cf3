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

//! Forward and backward passes with soft masking.
//!
//! A pruned filter's output map is forced to zero right after its conv and
//! again after every BatchNorm that normalizes that channel, so downstream
//! layers see exactly what they would see if the channel did not exist. The
//! same positions receive zero gradient on the way back, and the optimizer
//! skips pruned filters, their biases, and their BatchNorm entries entirely.
//! BatchNorm running statistics of pruned channels are never updated.

use super::{Layer, ModelError, ModelGraph, Origin};
use crate::tensor::{
    batchnorm_backward, batchnorm_forward_eval, batchnorm_forward_train, conv2d_backward, conv2d_backward_params,
    conv2d_forward, linear_backward, linear_forward, maxpool2d_backward, maxpool2d_forward, relu_backward,
    relu_forward, sgd_step, sgd_step_rows, softmax_cross_entropy, BatchNormCache, PoolIndices, SgdConfig, Tensor,
    BN_MOMENTUM,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running-stat updates.
    Train,
    /// Running statistics, no state change.
    Eval,
}

#[derive(Debug, Clone)]
enum Cache {
    Conv { input: Tensor },
    BatchNorm(BatchNormCache),
    Relu { input: Tensor },
    MaxPool(PoolIndices),
    Flatten { shape: Vec<usize> },
    Linear { input: Tensor },
}

/// Activations saved by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    caches: Vec<Cache>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamGrads {
    Conv { weights: Tensor, bias: Tensor },
    BatchNorm { gamma: Tensor, beta: Tensor },
    Linear { weights: Tensor, bias: Tensor },
}

/// Per-layer list of features (axis 1) that must read as zero.
fn dead_features(model: &ModelGraph, origins: &[Origin]) -> Vec<Vec<usize>> {
    let mask = model.mask();
    model
        .layers
        .iter()
        .enumerate()
        .map(|(i, layer)| match layer {
            Layer::Conv(_) => mask.pruned(i),
            Layer::BatchNorm(_) => {
                let origin = ModelGraph::input_origin(origins, i);
                origin.conv().map_or_else(Vec::new, |c| origin.expand(&mask.pruned(c)))
            }
            _ => Vec::new(),
        })
        .collect()
}

/// Zeroes the listed axis-1 features of a `[B, F, ...]` tensor.
fn zero_features(t: &mut Tensor, features: &[usize]) {
    if features.is_empty() {
        return;
    }
    let b = t.dim(0);
    let f = t.dim(1);
    let inner: usize = t.shape().iter().skip(2).product();
    let d = t.data_mut();
    for bi in 0..b {
        for &c in features {
            let start = (bi * f + c) * inner;
            d[start..start + inner].fill(0.0);
        }
    }
}

fn alive_rows(len: usize, dead: &[usize]) -> Vec<bool> {
    let mut rows = vec![true; len];
    for &d in dead {
        rows[d] = false;
    }
    rows
}

impl ModelGraph {
    fn check_batch(&self, batch: &Tensor) -> Result<(), ModelError> {
        let s = batch.shape();
        if s.len() != 4 || s[1..] != self.input_shape {
            return Err(ModelError::Input {
                expected: self.input_shape,
                got: s.to_vec(),
            });
        }
        Ok(())
    }

    pub fn forward(&mut self, batch: &Tensor, mode: Mode) -> Result<Tensor, ModelError> {
        match mode {
            Mode::Eval => self.forward_eval(batch),
            Mode::Train => self.forward_train(batch).map(|(out, _)| out),
        }
    }

    /// Eval-mode forward; the model is not modified.
    pub fn forward_eval(&self, batch: &Tensor) -> Result<Tensor, ModelError> {
        self.check_batch(batch)?;
        let origins = self.origins()?;
        let dead = dead_features(self, &origins);
        let mut x = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let at = |e: crate::tensor::TensorError| ModelError::Shape {
                layer: i,
                detail: e.to_string(),
            };
            x = match layer {
                Layer::Conv(p) => conv2d_forward(&x, p).map_err(at)?,
                Layer::BatchNorm(bn) => {
                    batchnorm_forward_eval(&x, &bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var).map_err(at)?
                }
                Layer::Relu => relu_forward(&x),
                Layer::MaxPool { window, stride } => maxpool2d_forward(&x, *window, *stride).map_err(at)?.0,
                Layer::Flatten => {
                    let b = x.dim(0);
                    let f = x.len() / b;
                    x.reshape(&[b, f]).map_err(at)?
                }
                Layer::Linear(l) => linear_forward(&x, &l.weights, &l.bias).map_err(at)?,
            };
            zero_features(&mut x, &dead[i]);
        }
        Ok(x)
    }

    /// Training-mode forward: batch statistics, running-stat updates for
    /// alive channels, and a tape for [`ModelGraph::backward`].
    pub fn forward_train(&mut self, batch: &Tensor) -> Result<(Tensor, Tape), ModelError> {
        self.check_batch(batch)?;
        let origins = self.origins()?;
        let dead = dead_features(self, &origins);
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let at = |e: crate::tensor::TensorError| ModelError::Shape {
                layer: i,
                detail: e.to_string(),
            };
            let (y, cache) = match layer {
                Layer::Conv(p) => (conv2d_forward(&x, p).map_err(at)?, Cache::Conv { input: x }),
                Layer::BatchNorm(bn) => {
                    let (y, cache) = batchnorm_forward_train(&x, &bn.gamma, &bn.beta).map_err(at)?;
                    let alive = alive_rows(bn.channels(), &dead[i]);
                    let rm = bn.running_mean.data_mut();
                    for (ch, _) in alive.iter().enumerate().filter(|(_, &a)| a) {
                        rm[ch] = (1.0 - BN_MOMENTUM) * rm[ch] + BN_MOMENTUM * cache.mean[ch];
                    }
                    let rv = bn.running_var.data_mut();
                    for (ch, _) in alive.iter().enumerate().filter(|(_, &a)| a) {
                        rv[ch] = (1.0 - BN_MOMENTUM) * rv[ch] + BN_MOMENTUM * cache.unbiased_var(ch);
                    }
                    (y, Cache::BatchNorm(cache))
                }
                Layer::Relu => (relu_forward(&x), Cache::Relu { input: x }),
                Layer::MaxPool { window, stride } => {
                    let (y, idx) = maxpool2d_forward(&x, *window, *stride).map_err(at)?;
                    (y, Cache::MaxPool(idx))
                }
                Layer::Flatten => {
                    let shape = x.shape().to_vec();
                    let b = shape[0];
                    let f = x.len() / b;
                    (x.reshape(&[b, f]).map_err(at)?, Cache::Flatten { shape })
                }
                Layer::Linear(l) => (
                    linear_forward(&x, &l.weights, &l.bias).map_err(at)?,
                    Cache::Linear { input: x },
                ),
            };
            x = y;
            zero_features(&mut x, &dead[i]);
            caches.push(cache);
        }
        Ok((x, Tape { caches }))
    }

    /// Parameter gradients for every layer (`None` for parameter-free
    /// layers), given the gradient of the loss with respect to the output.
    pub fn backward(&self, tape: &Tape, grad_output: &Tensor) -> Result<Vec<Option<ParamGrads>>, ModelError> {
        if tape.caches.len() != self.layers.len() {
            return Err(ModelError::Mask(format!(
                "tape has {} entries for {} layers",
                tape.caches.len(),
                self.layers.len()
            )));
        }
        let origins = self.origins()?;
        let dead = dead_features(self, &origins);
        let mut grads: Vec<Option<ParamGrads>> = vec![None; self.layers.len()];
        let mut g = grad_output.clone();
        for i in (0..self.layers.len()).rev() {
            let at = |e: crate::tensor::TensorError| ModelError::Shape {
                layer: i,
                detail: e.to_string(),
            };
            zero_features(&mut g, &dead[i]);
            g = match (&self.layers[i], &tape.caches[i]) {
                (Layer::Conv(p), Cache::Conv { input }) => {
                    if i == 0 {
                        let (weights, bias) = conv2d_backward_params(input, p, &g).map_err(at)?;
                        grads[i] = Some(ParamGrads::Conv { weights, bias });
                        break;
                    }
                    let cg = conv2d_backward(input, p, &g).map_err(at)?;
                    grads[i] = Some(ParamGrads::Conv {
                        weights: cg.weights,
                        bias: cg.bias,
                    });
                    cg.input
                }
                (Layer::BatchNorm(_), Cache::BatchNorm(cache)) => {
                    let (gi, gamma, beta) = batchnorm_backward(cache, &g).map_err(at)?;
                    grads[i] = Some(ParamGrads::BatchNorm { gamma, beta });
                    gi
                }
                (Layer::Relu, Cache::Relu { input }) => relu_backward(input, &g).map_err(at)?,
                (Layer::MaxPool { .. }, Cache::MaxPool(idx)) => maxpool2d_backward(&g, idx).map_err(at)?,
                (Layer::Flatten, Cache::Flatten { shape }) => g.reshape(shape).map_err(at)?,
                (Layer::Linear(l), Cache::Linear { input }) => {
                    let lg = linear_backward(input, &l.weights, &g).map_err(at)?;
                    grads[i] = Some(ParamGrads::Linear {
                        weights: lg.weights,
                        bias: lg.bias,
                    });
                    lg.input
                }
                _ => {
                    return Err(ModelError::Shape {
                        layer: i,
                        detail: "tape entry does not match layer kind".into(),
                    })
                }
            };
        }
        Ok(grads)
    }

    /// Train-mode forward, softmax cross-entropy, backward and one optimizer
    /// step at learning rate `lr`. Returns the mean batch loss.
    pub fn backward_and_step(
        &mut self,
        batch: &Tensor,
        labels: &[usize],
        optimizer: &mut Optimizer,
        lr: f64,
    ) -> Result<f64, ModelError> {
        let (logits, tape) = self.forward_train(batch)?;
        let (loss, grad) = softmax_cross_entropy(&logits, labels)?;
        let grads = self.backward(&tape, &grad)?;
        optimizer.step(self, &grads, lr)?;
        Ok(loss)
    }
}

/// SGD state: one velocity per learnable tensor, created on first use.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub config: SgdConfig,
    velocity: Vec<Vec<Tensor>>,
}

impl Optimizer {
    pub fn new(config: SgdConfig) -> Self {
        Self {
            config,
            velocity: Vec::new(),
        }
    }

    /// Drops all momentum, e.g. after the model was rebuilt.
    pub fn reset(&mut self) {
        self.velocity.clear();
    }

    fn ensure_state(&mut self, model: &ModelGraph) {
        let matches = self.velocity.len() == model.layers.len()
            && self.velocity.iter().zip(&model.layers).all(|(v, l)| {
                let learnable = learnable_shapes(l);
                v.len() == learnable.len() && v.iter().zip(&learnable).all(|(t, s)| t.shape() == s.as_slice())
            });
        if !matches {
            self.velocity = model
                .layers
                .iter()
                .map(|l| learnable_shapes(l).iter().map(|s| Tensor::zeros(s)).collect())
                .collect();
        }
    }

    pub fn step(&mut self, model: &mut ModelGraph, grads: &[Option<ParamGrads>], lr: f64) -> Result<(), ModelError> {
        if grads.len() != model.layers.len() {
            return Err(ModelError::Mask(format!(
                "{} gradient entries for {} layers",
                grads.len(),
                model.layers.len()
            )));
        }
        self.ensure_state(model);
        let cfg = SgdConfig { lr, ..self.config };
        let origins = model.origins()?;
        let dead = dead_features(model, &origins);
        for (i, (layer, grad)) in model.layers.iter_mut().zip(grads).enumerate() {
            let Some(grad) = grad else { continue };
            let vel = &mut self.velocity[i];
            let at = |e: crate::tensor::TensorError| ModelError::Shape {
                layer: i,
                detail: e.to_string(),
            };
            match (layer, grad) {
                (Layer::Conv(p), ParamGrads::Conv { weights, bias }) => {
                    let rows = alive_rows(p.out_channels(), &dead[i]);
                    sgd_step_rows(&mut p.weights, weights, &mut vel[0], &cfg, &rows).map_err(at)?;
                    sgd_step_rows(&mut p.bias, bias, &mut vel[1], &cfg, &rows).map_err(at)?;
                }
                (Layer::BatchNorm(bn), ParamGrads::BatchNorm { gamma, beta }) => {
                    let rows = alive_rows(bn.channels(), &dead[i]);
                    sgd_step_rows(&mut bn.gamma, gamma, &mut vel[0], &cfg, &rows).map_err(at)?;
                    sgd_step_rows(&mut bn.beta, beta, &mut vel[1], &cfg, &rows).map_err(at)?;
                }
                (Layer::Linear(l), ParamGrads::Linear { weights, bias }) => {
                    sgd_step(&mut l.weights, weights, &mut vel[0], &cfg).map_err(at)?;
                    sgd_step(&mut l.bias, bias, &mut vel[1], &cfg).map_err(at)?;
                }
                _ => {
                    return Err(ModelError::Shape {
                        layer: i,
                        detail: "gradient kind does not match layer".into(),
                    })
                }
            }
        }
        Ok(())
    }
}

fn learnable_shapes(layer: &Layer) -> Vec<Vec<usize>> {
    match layer {
        Layer::Conv(p) => vec![p.weights.shape().to_vec(), p.bias.shape().to_vec()],
        Layer::BatchNorm(bn) => vec![bn.gamma.shape().to_vec(), bn.beta.shape().to_vec()],
        Layer::Linear(l) => vec![l.weights.shape().to_vec(), l.bias.shape().to_vec()],
        _ => Vec::new(),
    }
}
