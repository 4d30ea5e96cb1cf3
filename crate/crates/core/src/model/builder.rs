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

use super::{BatchNorm, Layer, Linear, ModelError, ModelGraph};
use crate::tensor::{conv_output_size, ConvParams, Rng, Tensor};

#[derive(Debug, Clone)]
enum Pending {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm,
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    Flatten,
    Linear {
        out: usize,
    },
}

/// Declares a network by output sizes only; input channel and feature counts
/// are inferred while building.
///
/// Weights use He-normal initialization (`std = sqrt(2 / fan_in)`) drawn
/// from `Rng::with_stream(seed, 0)` in layer order. Biases start at zero,
/// BatchNorm at `gamma = 1, beta = 0, mean = 0, var = 1`.
#[derive(Debug, Clone)]
pub struct ModelBuilder {
    name: String,
    input_shape: [usize; 3],
    pending: Vec<Pending>,
}

impl ModelBuilder {
    pub fn new(name: impl Into<String>, input_shape: [usize; 3]) -> Self {
        Self {
            name: name.into(),
            input_shape,
            pending: Vec::new(),
        }
    }

    pub fn conv(mut self, filters: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        self.pending.push(Pending::Conv {
            filters,
            kernel,
            stride,
            padding,
        });
        self
    }

    pub fn batch_norm(mut self) -> Self {
        self.pending.push(Pending::BatchNorm);
        self
    }

    pub fn relu(mut self) -> Self {
        self.pending.push(Pending::Relu);
        self
    }

    pub fn max_pool(mut self, window: usize, stride: usize) -> Self {
        self.pending.push(Pending::MaxPool { window, stride });
        self
    }

    pub fn flatten(mut self) -> Self {
        self.pending.push(Pending::Flatten);
        self
    }

    pub fn linear(mut self, out: usize) -> Self {
        self.pending.push(Pending::Linear { out });
        self
    }

    pub fn build(self, seed: u64) -> Result<ModelGraph, ModelError> {
        let mut rng = Rng::with_stream(seed, 0);
        let mut shape = self.input_shape.to_vec();
        let mut layers = Vec::with_capacity(self.pending.len());
        for (i, p) in self.pending.into_iter().enumerate() {
            let err = |detail: String| ModelError::Shape { layer: i, detail };
            let layer = match p {
                Pending::Conv {
                    filters,
                    kernel,
                    stride,
                    padding,
                } => {
                    let [c, h, w] = shape[..] else {
                        return Err(err(format!("conv needs a [C,H,W] input, got {shape:?}")));
                    };
                    if filters == 0 || kernel == 0 {
                        return Err(err("conv needs at least one filter and K >= 1".into()));
                    }
                    let fan_in = (c * kernel * kernel) as f64;
                    let weights = Tensor::randn(&[filters, c, kernel, kernel], (2.0 / fan_in).sqrt(), &mut rng);
                    let oh = conv_output_size(h, kernel, stride, padding);
                    let ow = conv_output_size(w, kernel, stride, padding);
                    let (Some(oh), Some(ow)) = (oh, ow) else {
                        return Err(err(format!("kernel {kernel} does not fit {h}x{w}")));
                    };
                    shape = vec![filters, oh, ow];
                    Layer::Conv(ConvParams::new(weights, Tensor::zeros(&[filters]), stride, padding)?)
                }
                Pending::BatchNorm => Layer::BatchNorm(BatchNorm::new(shape[0])),
                Pending::Relu => Layer::Relu,
                Pending::MaxPool { window, stride } => {
                    let [c, h, w] = shape[..] else {
                        return Err(err(format!("maxpool needs a [C,H,W] input, got {shape:?}")));
                    };
                    if window == 0 || stride == 0 || h < window || w < window {
                        return Err(err(format!("maxpool w{window} s{stride} on {h}x{w}")));
                    }
                    shape = vec![c, (h - window) / stride + 1, (w - window) / stride + 1];
                    Layer::MaxPool { window, stride }
                }
                Pending::Flatten => {
                    shape = vec![shape.iter().product()];
                    Layer::Flatten
                }
                Pending::Linear { out } => {
                    let [fin] = shape[..] else {
                        return Err(err(format!("fc needs a flat input, got {shape:?}")));
                    };
                    if out == 0 {
                        return Err(err("fc needs at least one output".into()));
                    }
                    let weights = Tensor::randn(&[out, fin], (2.0 / fin as f64).sqrt(), &mut rng);
                    shape = vec![out];
                    Layer::Linear(Linear {
                        weights,
                        bias: Tensor::zeros(&[out]),
                    })
                }
            };
            layers.push(layer);
        }
        ModelGraph::new(self.name, self.input_shape, layers, seed)
    }
}

/// Built-in architectures.
pub mod presets {
    use super::ModelBuilder;
    use crate::model::{ModelError, ModelGraph};

    pub const MNIST_CNN: &str = "mnist-cnn";
    pub const TOY_CNN: &str = "toy-cnn";

    /// conv(16,K=3)-BN-ReLU-pool, conv(32,K=3)-BN-ReLU-pool, flatten,
    /// FC(128)-ReLU, FC(10) on 1x28x28 inputs. Convs use padding 1.
    pub fn mnist_cnn(seed: u64) -> Result<ModelGraph, ModelError> {
        ModelBuilder::new(MNIST_CNN, [1, 28, 28])
            .conv(16, 3, 1, 1)
            .batch_norm()
            .relu()
            .max_pool(2, 2)
            .conv(32, 3, 1, 1)
            .batch_norm()
            .relu()
            .max_pool(2, 2)
            .flatten()
            .linear(128)
            .relu()
            .linear(10)
            .build(seed)
    }

    /// Small two-conv net for synthetic data and fast tests: conv(8)-BN-ReLU-
    /// pool, conv(16)-BN-ReLU-pool, flatten, FC(classes).
    pub fn toy_cnn(input_shape: [usize; 3], classes: usize, seed: u64) -> Result<ModelGraph, ModelError> {
        ModelBuilder::new(TOY_CNN, input_shape)
            .conv(8, 3, 1, 1)
            .batch_norm()
            .relu()
            .max_pool(2, 2)
            .conv(16, 3, 1, 1)
            .batch_norm()
            .relu()
            .max_pool(2, 2)
            .flatten()
            .linear(classes)
            .build(seed)
    }
}
