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

//! Filter scoring, selection and the pruning schedules.
//!
//! Filters are scored by the Lp norm of their weights (bias excluded) at the
//! moment of a prune event. Target ratios are cumulative fractions of each
//! layer's original filter count, converted to counts with `floor`. Ranking
//! is ascending by norm; equal norms go to the lower layer index, then the
//! lower filter index.

mod log;
mod run;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::metrics::MetricsError;
use crate::model::{ModelError, ModelGraph};

pub use log::{EventKind, LogRow, RunLog, RUN_LOG_HEADER};
pub use run::{iplt_run, traditional_run, RunData, RunOutput, TraditionalPlan, REBUILD_TOLERANCE};

/// Absorbs representation error in `ratio * count` (e.g. `0.7 * 10`) before
/// flooring.
const QUOTA_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PruneError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("filter {filter} of layer {layer} is already pruned or selected twice")]
    AlreadyPruned { layer: usize, filter: usize },
    #[error("{}", collapse_message(*.layer, *.target, *.epoch))]
    LayerCollapse {
        layer: usize,
        target: f64,
        epoch: Option<u32>,
    },
    #[error("rebuilt model deviates from masked model by {max_diff:e} at epoch {epoch}")]
    RebuildMismatch { epoch: u32, max_diff: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn collapse_message(layer: usize, target: f64, epoch: Option<u32>) -> String {
    let at = epoch.map_or_else(String::new, |e| format!(" at epoch {e}"));
    format!("layer collapse: target {target} would prune every filter of layer {layer}{at} (use min_filters to guard)")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComparisonMode {
    /// Quota and ranking within each conv layer.
    IntraLayer,
    /// One ranking and one quota across all conv layers.
    Global,
}

impl fmt::Display for ComparisonMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ComparisonMode::IntraLayer => "intra",
            ComparisonMode::Global => "global",
        })
    }
}

impl FromStr for ComparisonMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "intra" | "intra-layer" | "intra_layer" => Ok(ComparisonMode::IntraLayer),
            "global" => Ok(ComparisonMode::Global),
            _ => Err(format!("unknown mode '{s}' (expected global or intra)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneSchedule {
    /// Epochs between prune events.
    pub k: u32,
    /// Strictly increasing cumulative targets in `(0, 1)`.
    pub ratios: Vec<f64>,
    pub mode: ComparisonMode,
    /// Norm order, `> 0`.
    pub norm_p: f64,
    /// Never leave a layer with fewer alive filters than this; 0 disables
    /// the guard, letting a global selection fail with `LayerCollapse`.
    pub min_filters: usize,
}

impl PruneSchedule {
    pub fn new(k: u32, ratios: Vec<f64>, mode: ComparisonMode) -> Self {
        Self {
            k,
            ratios,
            mode,
            norm_p: 2.0,
            min_filters: 0,
        }
    }

    pub fn validate(&self) -> Result<(), PruneError> {
        if self.k == 0 {
            return Err(PruneError::Schedule("k must be at least 1".into()));
        }
        validate_ratios(&self.ratios)?;
        if !(self.norm_p.is_finite() && self.norm_p > 0.0) {
            return Err(PruneError::Schedule(format!("norm p {} must be positive", self.norm_p)));
        }
        Ok(())
    }

    /// `(epoch, target)` of every prune event: epoch `k*t` gets `ratios[t-1]`.
    pub fn events(&self) -> Vec<(u32, f64)> {
        self.ratios
            .iter()
            .enumerate()
            .map(|(t, &r)| (self.k * (t as u32 + 1), r))
            .collect()
    }

    /// Whether a prune event happens at the end of `epoch` (1-based).
    pub fn is_event(&self, epoch: u32) -> bool {
        epoch > 0 && epoch.is_multiple_of(self.k) && u64::from(epoch) <= u64::from(self.k) * self.ratios.len() as u64
    }
}

pub(crate) fn validate_ratios(ratios: &[f64]) -> Result<(), PruneError> {
    for (i, &r) in ratios.iter().enumerate() {
        if !(r.is_finite() && r > 0.0 && r < 1.0) {
            return Err(PruneError::Schedule(format!(
                "ratio {r} at position {i} is outside (0, 1)"
            )));
        }
        if i > 0 && r <= ratios[i - 1] {
            return Err(PruneError::Schedule(format!(
                "ratios must be strictly increasing, {} then {r}",
                ratios[i - 1]
            )));
        }
    }
    Ok(())
}

/// `(sum |w|^p)^(1/p)` over every weight of one filter.
pub fn filter_norm(filter: &[f64], p: f64) -> f64 {
    if p == 2.0 {
        filter.iter().map(|w| w * w).sum::<f64>().sqrt()
    } else if p == 1.0 {
        filter.iter().map(|w| w.abs()).sum()
    } else {
        filter.iter().map(|w| w.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// Norm of every filter of every conv layer, pruned or not.
pub fn filter_norms(model: &ModelGraph, p: f64) -> BTreeMap<usize, Vec<f64>> {
    model
        .conv_layers()
        .into_iter()
        .map(|i| {
            let conv = model.conv(i).expect("conv layer");
            (
                i,
                (0..conv.out_channels())
                    .map(|j| filter_norm(conv.filter(j), p))
                    .collect(),
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pick {
    pub layer: usize,
    pub filter: usize,
    pub norm: f64,
}

/// Filters chosen at one prune event, in ranking order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Selection {
    pub picks: Vec<Pick>,
}

impl Selection {
    pub fn is_empty(&self) -> bool {
        self.picks.is_empty()
    }

    pub fn len(&self) -> usize {
        self.picks.len()
    }

    /// `(layer, filter)` pairs, sorted.
    pub fn pairs(&self) -> BTreeSet<(usize, usize)> {
        self.picks.iter().map(|p| (p.layer, p.filter)).collect()
    }
}

fn quota(ratio: f64, count: usize) -> usize {
    ((ratio * count as f64 + QUOTA_EPSILON).floor() as usize).min(count)
}

fn rank(a: &Pick, b: &Pick) -> std::cmp::Ordering {
    a.norm
        .total_cmp(&b.norm)
        .then(a.layer.cmp(&b.layer))
        .then(a.filter.cmp(&b.filter))
}

/// Chooses the alive filters to prune so that the pruned count reaches
/// `target` (of all filters in global mode, of each layer in intra-layer
/// mode). A target at or below the current ratio selects nothing.
pub fn select_filters(model: &ModelGraph, schedule: &PruneSchedule, target: f64) -> Result<Selection, PruneError> {
    if !(target.is_finite() && (0.0..1.0).contains(&target)) {
        return Err(PruneError::Schedule(format!("target {target} is outside [0, 1)")));
    }
    let mask = model.mask();
    let norms = filter_norms(model, schedule.norm_p);
    let alive_picks = |layer: usize| -> Vec<Pick> {
        norms[&layer]
            .iter()
            .enumerate()
            .filter(|&(j, _)| mask.is_alive(layer, j))
            .map(|(j, &norm)| Pick { layer, filter: j, norm })
            .collect()
    };
    let guard = schedule.min_filters;
    let mut picks = Vec::new();
    match schedule.mode {
        ComparisonMode::IntraLayer => {
            for &layer in norms.keys() {
                let total = mask.get(layer).map_or(0, <[bool]>::len);
                let alive = mask.alive_count(layer);
                let mut need = quota(target, total).saturating_sub(mask.pruned_count(layer));
                if guard > 0 {
                    need = need.min(alive.saturating_sub(guard));
                } else if need >= alive && need > 0 {
                    return Err(PruneError::LayerCollapse {
                        layer,
                        target,
                        epoch: None,
                    });
                }
                let mut cands = alive_picks(layer);
                cands.sort_by(rank);
                picks.extend(cands.into_iter().take(need));
            }
        }
        ComparisonMode::Global => {
            let need = quota(target, mask.total_filters()).saturating_sub(mask.total_pruned());
            let mut cands: Vec<Pick> = norms.keys().flat_map(|&l| alive_picks(l)).collect();
            cands.sort_by(rank);
            let mut alive: BTreeMap<usize, usize> = norms.keys().map(|&l| (l, mask.alive_count(l))).collect();
            for c in cands {
                if picks.len() == need {
                    break;
                }
                let left = alive[&c.layer];
                if guard > 0 && left <= guard {
                    continue;
                }
                alive.insert(c.layer, left - 1);
                picks.push(c);
            }
            if guard == 0 {
                if let Some((&layer, _)) = alive.iter().find(|&(_, &n)| n == 0) {
                    return Err(PruneError::LayerCollapse {
                        layer,
                        target,
                        epoch: None,
                    });
                }
            }
        }
    }
    picks.sort_by(rank);
    Ok(Selection { picks })
}

/// Marks the selected filters as pruned. Fails without changing the mask if
/// a filter is already pruned, selected twice, out of range, or if a layer
/// would lose all its filters.
pub fn apply_mask(model: &mut ModelGraph, selection: &Selection) -> Result<(), PruneError> {
    let mut seen = BTreeSet::new();
    let mut removed: BTreeMap<usize, usize> = BTreeMap::new();
    for p in &selection.picks {
        let count = model.conv(p.layer)?.out_channels();
        if p.filter >= count {
            return Err(ModelError::FilterIndex {
                layer: p.layer,
                filter: p.filter,
                count,
            }
            .into());
        }
        if !model.mask().is_alive(p.layer, p.filter) || !seen.insert((p.layer, p.filter)) {
            return Err(PruneError::AlreadyPruned {
                layer: p.layer,
                filter: p.filter,
            });
        }
        *removed.entry(p.layer).or_default() += 1;
    }
    for (&layer, &n) in &removed {
        if n >= model.mask().alive_count(layer) {
            return Err(ModelError::LayerCollapse { layer }.into());
        }
    }
    for p in &selection.picks {
        model.mask_mut().kill(p.layer, p.filter);
    }
    Ok(())
}
