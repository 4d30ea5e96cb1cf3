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

use std::collections::BTreeMap;

use super::{Layer, ModelError};

/// Alive flags for the filters of every conv layer, keyed by layer index.
/// `false` means pruned.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PruneMask {
    layers: BTreeMap<usize, Vec<bool>>,
}

impl PruneMask {
    pub(crate) fn all_alive(layers: &[Layer]) -> Self {
        let layers = layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match l {
                Layer::Conv(p) => Some((i, vec![true; p.out_channels()])),
                _ => None,
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: BTreeMap<usize, Vec<bool>>) -> Self {
        Self { layers }
    }

    pub(crate) fn validate(&self, layers: &[Layer]) -> Result<(), ModelError> {
        let expected = Self::all_alive(layers);
        if expected.layers.len() != self.layers.len() {
            return Err(ModelError::Mask(format!(
                "{} masked layers for {} conv layers",
                self.layers.len(),
                expected.layers.len()
            )));
        }
        for ((li, a), (lj, b)) in expected.layers.iter().zip(&self.layers) {
            if li != lj || a.len() != b.len() {
                return Err(ModelError::Mask(format!(
                    "layer {lj} has {} flags, expected layer {li} with {}",
                    b.len(),
                    a.len()
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, layer: usize) -> Option<&[bool]> {
        self.layers.get(&layer).map(Vec::as_slice)
    }

    pub fn is_alive(&self, layer: usize, filter: usize) -> bool {
        self.get(layer).is_some_and(|m| m.get(filter).copied().unwrap_or(false))
    }

    pub fn alive_count(&self, layer: usize) -> usize {
        self.get(layer).map_or(0, |m| m.iter().filter(|&&a| a).count())
    }

    pub fn pruned_count(&self, layer: usize) -> usize {
        self.get(layer).map_or(0, |m| m.iter().filter(|&&a| !a).count())
    }

    /// Pruned filter indices of one layer, ascending.
    pub fn pruned(&self, layer: usize) -> Vec<usize> {
        self.get(layer).map_or_else(Vec::new, |m| {
            m.iter().enumerate().filter(|(_, &a)| !a).map(|(j, _)| j).collect()
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[bool])> {
        self.layers.iter().map(|(&i, m)| (i, m.as_slice()))
    }

    pub fn is_all_alive(&self) -> bool {
        self.layers.values().all(|m| m.iter().all(|&a| a))
    }

    pub fn total_filters(&self) -> usize {
        self.layers.values().map(Vec::len).sum()
    }

    pub fn total_pruned(&self) -> usize {
        self.layers.keys().map(|&l| self.pruned_count(l)).sum()
    }

    pub(crate) fn kill(&mut self, layer: usize, filter: usize) {
        if let Some(m) = self.layers.get_mut(&layer) {
            m[filter] = false;
        }
    }

    pub(crate) fn replace(&mut self, layer: usize, flags: Vec<bool>) {
        self.layers.insert(layer, flags);
    }
}
