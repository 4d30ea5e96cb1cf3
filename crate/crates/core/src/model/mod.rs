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

//! Sequential CNNs with explicit channel bookkeeping.
//!
//! A [`ModelGraph`] is an ordered list of [`Layer`]s plus a [`PruneMask`]
//! over the filters of every convolution. Layers are addressed by their
//! position in the list; conv layer `i`'s filter count must equal the input
//! channel count of the next conv (or, after a flatten, define the column
//! groups of the next fully-connected layer).
//!
//! Flatten is channel-major: channel `c` of a `[C, H, W]` map occupies the
//! flat features `c*H*W .. (c+1)*H*W`.

mod builder;
pub mod checkpoint;
mod exec;
mod mask;
mod surgery;

use std::fmt;

use thiserror::Error;

use crate::tensor::{ConvParams, Tensor, TensorError};

pub use builder::{presets, ModelBuilder};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use exec::{Mode, Optimizer, ParamGrads, Tape};
pub use mask::PruneMask;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("layer {layer}: {detail}")]
    Shape { layer: usize, detail: String },
    #[error("batch shape {got:?} does not match model input [B, {expected:?}]")]
    Input { expected: [usize; 3], got: Vec<usize> },
    #[error("layer {layer} is not a convolution")]
    NotConv { layer: usize },
    #[error("layer {layer}: filter {filter} out of range for {count} filters")]
    FilterIndex { layer: usize, filter: usize, count: usize },
    #[error("layer {layer}: removing every filter would collapse the layer")]
    LayerCollapse { layer: usize },
    #[error("mask does not match model: {0}")]
    Mask(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::filled(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[out, in]`
    pub weights: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl Linear {
    pub fn in_features(&self) -> usize {
        self.weights.dim(1)
    }

    pub fn out_features(&self) -> usize {
        self.weights.dim(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvParams),
    BatchNorm(BatchNorm),
    Relu,
    MaxPool { window: usize, stride: usize },
    Flatten,
    Linear(Linear),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    BatchNorm,
    Relu,
    MaxPool,
    Flatten,
    FullyConnected,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerKind::Conv => "conv",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool => "maxpool",
            LayerKind::Flatten => "flatten",
            LayerKind::FullyConnected => "fc",
        })
    }
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv(_) => LayerKind::Conv,
            Layer::BatchNorm(_) => LayerKind::BatchNorm,
            Layer::Relu => LayerKind::Relu,
            Layer::MaxPool { .. } => LayerKind::MaxPool,
            Layer::Flatten => LayerKind::Flatten,
            Layer::Linear(_) => LayerKind::FullyConnected,
        }
    }

    /// Every stored tensor, learnable or not, in serialization order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv(p) => vec![&p.weights, &p.bias],
            Layer::BatchNorm(bn) => vec![&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var],
            Layer::Linear(l) => vec![&l.weights, &l.bias],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// One-line architecture descriptor, e.g. `conv 1->16 k3 s1 p1`.
    pub fn describe(&self) -> String {
        match self {
            Layer::Conv(p) => format!(
                "conv {}->{} k{} s{} p{}",
                p.in_channels(),
                p.out_channels(),
                p.kernel(),
                p.stride,
                p.padding
            ),
            Layer::BatchNorm(bn) => format!("batchnorm {}", bn.channels()),
            Layer::Relu => "relu".to_string(),
            Layer::MaxPool { window, stride } => format!("maxpool w{window} s{stride}"),
            Layer::Flatten => "flatten".to_string(),
            Layer::Linear(l) => format!("fc {}->{}", l.in_features(), l.out_features()),
        }
    }
}

/// Where the leading feature axis of a layer's output comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Origin {
    Input,
    /// Channels are the filters of this conv layer.
    Conv(usize),
    /// Flattened features; channel `c` of `conv` spans `spatial` features.
    Flattened {
        conv: usize,
        spatial: usize,
    },
    /// Features of a fully-connected layer.
    Dense,
}

impl Origin {
    pub(crate) fn conv(self) -> Option<usize> {
        match self {
            Origin::Conv(c) | Origin::Flattened { conv: c, .. } => Some(c),
            _ => None,
        }
    }

    /// Feature indices along axis 1 that belong to the given conv channels.
    pub(crate) fn expand(self, channels: &[usize]) -> Vec<usize> {
        match self {
            Origin::Conv(_) => channels.to_vec(),
            Origin::Flattened { spatial, .. } => {
                channels.iter().flat_map(|&c| c * spatial..(c + 1) * spatial).collect()
            }
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub name: String,
    /// `[channels, height, width]`
    pub input_shape: [usize; 3],
    pub layers: Vec<Layer>,
    /// Seed the parameters were initialized from.
    pub seed: u64,
    /// Completed training epochs.
    pub epoch: u32,
    mask: PruneMask,
}

impl ModelGraph {
    /// Validates shapes through every layer and starts with every filter
    /// alive.
    pub fn new(
        name: impl Into<String>,
        input_shape: [usize; 3],
        layers: Vec<Layer>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let mask = PruneMask::all_alive(&layers);
        let model = Self {
            name: name.into(),
            input_shape,
            layers,
            seed,
            epoch: 0,
            mask,
        };
        model.infer_shapes()?;
        Ok(model)
    }

    pub fn mask(&self) -> &PruneMask {
        &self.mask
    }

    pub(crate) fn mask_mut(&mut self) -> &mut PruneMask {
        &mut self.mask
    }

    /// Replaces the mask after checking it covers exactly the conv layers
    /// with matching lengths.
    pub fn set_mask(&mut self, mask: PruneMask) -> Result<(), ModelError> {
        mask.validate(&self.layers)?;
        self.mask = mask;
        Ok(())
    }

    pub fn conv(&self, layer: usize) -> Result<&ConvParams, ModelError> {
        match self.layers.get(layer) {
            Some(Layer::Conv(p)) => Ok(p),
            _ => Err(ModelError::NotConv { layer }),
        }
    }

    /// Layer indices of every convolution, in order.
    pub fn conv_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Conv(_)))
            .map(|(i, _)| i)
            .collect()
    }

    /// Output shape (without batch) of every layer. An empty model yields an
    /// empty list.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>, ModelError> {
        let mut shape = self.input_shape.to_vec();
        if shape.contains(&0) {
            return Err(ModelError::Shape {
                layer: 0,
                detail: format!("input shape {shape:?} has a zero dimension"),
            });
        }
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let err = |detail: String| ModelError::Shape { layer: i, detail };
            shape = match layer {
                Layer::Conv(p) => {
                    let [c, h, w] = shape[..] else {
                        return Err(err(format!("conv needs a [C,H,W] input, got {shape:?}")));
                    };
                    if c != p.in_channels() {
                        return Err(err(format!("conv expects {} input channels, got {c}", p.in_channels())));
                    }
                    let (oh, ow) = p
                        .output_hw(h, w)
                        .ok_or_else(|| err(format!("kernel {} does not fit {h}x{w}", p.kernel())))?;
                    vec![p.out_channels(), oh, ow]
                }
                Layer::BatchNorm(bn) => {
                    if shape.is_empty() || shape[0] != bn.channels() {
                        return Err(err(format!(
                            "batchnorm over {} channels, input {shape:?}",
                            bn.channels()
                        )));
                    }
                    for t in [&bn.beta, &bn.running_mean, &bn.running_var] {
                        if t.len() != bn.channels() {
                            return Err(err("batchnorm parameter lengths disagree".into()));
                        }
                    }
                    shape
                }
                Layer::Relu => shape,
                Layer::MaxPool { window, stride } => {
                    let [c, h, w] = shape[..] else {
                        return Err(err(format!("maxpool needs a [C,H,W] input, got {shape:?}")));
                    };
                    if *window == 0 || *stride == 0 || h < *window || w < *window {
                        return Err(err(format!("maxpool w{window} s{stride} on {h}x{w}")));
                    }
                    vec![c, (h - window) / stride + 1, (w - window) / stride + 1]
                }
                Layer::Flatten => vec![shape.iter().product()],
                Layer::Linear(l) => {
                    if shape != [l.in_features()] {
                        return Err(err(format!("fc expects [{}] features, got {shape:?}", l.in_features())));
                    }
                    if l.bias.shape() != [l.out_features()] {
                        return Err(err("fc bias length disagrees with weights".into()));
                    }
                    vec![l.out_features()]
                }
            };
            out.push(shape.clone());
        }
        Ok(out)
    }

    /// Feature origin of every layer's output. Assumes valid shapes.
    pub(crate) fn origins(&self) -> Result<Vec<Origin>, ModelError> {
        let shapes = self.infer_shapes()?;
        let mut cur = Origin::Input;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match layer {
                Layer::Conv(_) => Origin::Conv(i),
                Layer::Linear(_) => Origin::Dense,
                Layer::Flatten => match cur {
                    Origin::Conv(c) => {
                        let input = if i == 0 {
                            self.input_shape.to_vec()
                        } else {
                            shapes[i - 1].clone()
                        };
                        Origin::Flattened {
                            conv: c,
                            spatial: input.iter().skip(1).product(),
                        }
                    }
                    other => other,
                },
                _ => cur,
            };
            out.push(cur);
        }
        Ok(out)
    }

    pub(crate) fn input_origin(origins: &[Origin], layer: usize) -> Origin {
        if layer == 0 {
            Origin::Input
        } else {
            origins[layer - 1]
        }
    }

    /// Stored parameter count per layer and in total. BatchNorm counts its
    /// running statistics.
    pub fn count_parameters(&self) -> ParamCount {
        let per_layer: Vec<usize> = self.layers.iter().map(Layer::param_count).collect();
        ParamCount {
            total: per_layer.iter().sum(),
            per_layer,
        }
    }

    /// Human-readable architecture, one layer per line.
    pub fn describe(&self) -> String {
        let [c, h, w] = self.input_shape;
        let mut s = format!("model {} input {c}x{h}x{w}\n", self.name);
        for (i, layer) in self.layers.iter().enumerate() {
            s.push_str(&format!("{i:>3} {}\n", layer.describe()));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub per_layer: Vec<usize>,
    pub total: usize,
}
