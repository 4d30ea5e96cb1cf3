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

//! Physical removal of conv filters.
//!
//! Removing filter `j` of conv layer `i` deletes, in one consistent step:
//! row `j` of the conv weights and bias, entry `j` of every BatchNorm that
//! normalizes those channels, input slice `j` of the next conv, or the
//! `H*W` columns of channel `j` in the next fully-connected layer when a
//! flatten sits in between. Surviving filters keep their relative order.

use std::collections::BTreeSet;

use super::{Layer, ModelError, ModelGraph, Origin};
use crate::tensor::{ConvParams, Tensor};

/// Keeps the listed indices along `axis`, in order.
fn select_axis(t: &Tensor, axis: usize, keep: &[usize]) -> Tensor {
    let shape = t.shape();
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let n = shape[axis];
    let mut data = Vec::with_capacity(outer * keep.len() * inner);
    for o in 0..outer {
        for &k in keep {
            let start = (o * n + k) * inner;
            data.extend_from_slice(&t.data()[start..start + inner]);
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape[axis] = keep.len();
    Tensor::new(new_shape, data).expect("selection preserves shape invariants")
}

fn survivors(count: usize, removed: &BTreeSet<usize>) -> Vec<usize> {
    (0..count).filter(|j| !removed.contains(j)).collect()
}

impl ModelGraph {
    /// Returns a new model without the given filters of conv layer `layer`.
    /// The mask of that layer shrinks accordingly; other layers keep theirs.
    pub fn remove_output_channels(&self, layer: usize, filters: &BTreeSet<usize>) -> Result<ModelGraph, ModelError> {
        let count = self.conv(layer)?.out_channels();
        if let Some(&bad) = filters.iter().find(|&&f| f >= count) {
            return Err(ModelError::FilterIndex {
                layer,
                filter: bad,
                count,
            });
        }
        if filters.len() == count {
            return Err(ModelError::LayerCollapse { layer });
        }
        if filters.is_empty() {
            return Ok(self.clone());
        }
        let keep = survivors(count, filters);
        let origins = self.origins()?;
        let mut layers = self.layers.clone();

        let Layer::Conv(p) = &layers[layer] else { unreachable!() };
        layers[layer] = Layer::Conv(ConvParams::new(
            select_axis(&p.weights, 0, &keep),
            select_axis(&p.bias, 0, &keep),
            p.stride,
            p.padding,
        )?);

        for (i, consumer) in layers.iter_mut().enumerate().skip(layer + 1) {
            let origin = ModelGraph::input_origin(&origins, i);
            if origin.conv() != Some(layer) {
                break;
            }
            match consumer {
                Layer::BatchNorm(bn) => {
                    let features = origin.expand(&keep);
                    for t in [&mut bn.gamma, &mut bn.beta, &mut bn.running_mean, &mut bn.running_var] {
                        *t = select_axis(t, 0, &features);
                    }
                }
                Layer::Conv(next) => {
                    *next = ConvParams::new(
                        select_axis(&next.weights, 1, &keep),
                        next.bias.clone(),
                        next.stride,
                        next.padding,
                    )?;
                    break;
                }
                Layer::Linear(l) => {
                    let Origin::Flattened { .. } = origin else {
                        return Err(ModelError::Shape {
                            layer: i,
                            detail: "fc consumes an unflattened conv output".into(),
                        });
                    };
                    l.weights = select_axis(&l.weights, 1, &origin.expand(&keep));
                    break;
                }
                _ => {}
            }
        }

        let mut mask = self.mask().clone();
        let flags = mask.get(layer).expect("conv layer has a mask");
        let flags = keep.iter().map(|&j| flags[j]).collect();
        mask.replace(layer, flags);

        let mut out = ModelGraph::new(self.name.clone(), self.input_shape, layers, self.seed)?;
        out.epoch = self.epoch;
        out.set_mask(mask)?;
        Ok(out)
    }

    /// Physically removes every masked filter. The result has an all-alive
    /// mask and computes the same function as the masked model.
    pub fn rebuild(&self) -> Result<ModelGraph, ModelError> {
        let mut out = self.clone();
        for layer in self.conv_layers() {
            let removed: BTreeSet<usize> = self.mask().pruned(layer).into_iter().collect();
            out = out.remove_output_channels(layer, &removed)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelBuilder;
    use crate::tensor::Rng;

    fn toy() -> ModelGraph {
        ModelBuilder::new("toy", [2, 8, 8])
            .conv(5, 3, 1, 1)
            .batch_norm()
            .relu()
            .max_pool(2, 2)
            .conv(4, 3, 1, 1)
            .batch_norm()
            .relu()
            .max_pool(2, 2)
            .flatten()
            .linear(3)
            .build(11)
            .unwrap()
    }

    #[test]
    fn removal_shrinks_consumers() {
        let m = toy();
        let out = m.remove_output_channels(0, &BTreeSet::from([1, 3])).unwrap();
        assert_eq!(out.conv(0).unwrap().out_channels(), 3);
        assert_eq!(out.conv(4).unwrap().in_channels(), 3);
        let out = out.remove_output_channels(4, &BTreeSet::from([0])).unwrap();
        let Layer::Linear(l) = &out.layers[9] else { panic!() };
        assert_eq!(l.in_features(), 3 * 4);
        // Survivor order is kept: new filter 0 is old filter 1.
        assert_eq!(out.conv(4).unwrap().filter(0).len(), 3 * 9);
        let Layer::Linear(old) = &m.layers[9] else { panic!() };
        assert_eq!(&l.weights.row(0)[..4], &old.weights.row(0)[4..8]);
    }

    #[test]
    fn removal_errors() {
        let m = toy();
        assert_eq!(
            m.remove_output_channels(1, &BTreeSet::new()).unwrap_err(),
            ModelError::NotConv { layer: 1 }
        );
        assert_eq!(
            m.remove_output_channels(0, &BTreeSet::from([5])).unwrap_err(),
            ModelError::FilterIndex {
                layer: 0,
                filter: 5,
                count: 5
            }
        );
        assert_eq!(
            m.remove_output_channels(4, &(0..4).collect()).unwrap_err(),
            ModelError::LayerCollapse { layer: 4 }
        );
    }

    #[test]
    fn rebuild_matches_masked_forward() {
        let mut m = toy();
        m.mask_mut().kill(0, 0);
        m.mask_mut().kill(0, 4);
        m.mask_mut().kill(4, 2);
        let mut rng = Rng::new(8);
        let x = Tensor::randn(&[3, 2, 8, 8], 1.0, &mut rng);
        let masked = m.forward_eval(&x).unwrap();
        let rebuilt = m.rebuild().unwrap();
        assert!(rebuilt.mask().is_all_alive());
        assert_eq!(rebuilt.conv(0).unwrap().out_channels(), 3);
        assert_eq!(rebuilt.conv(4).unwrap().out_channels(), 3);
        let y = rebuilt.forward_eval(&x).unwrap();
        assert!(masked.max_abs_diff(&y) < 1e-9);
    }
}
