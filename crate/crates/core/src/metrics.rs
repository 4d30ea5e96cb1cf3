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

//! Pruning accounting: filter and parameter pruning ratios, MACs, model size
//! and the per-layer report.
//!
//! Every count is computed from the mask, so a soft-masked model and its
//! rebuilt counterpart give the same numbers. Report rows cover conv and
//! fully-connected layers; a BatchNorm's four per-channel vectors are charged
//! to the row of the layer that feeds it. Parameters of a layer shrink both
//! when its own filters are pruned and when the layer before it loses output
//! channels, and that shrinkage is charged to the layer that loses the
//! weights.
//!
//! MAC convention: one multiply-accumulate per weight use in conv and
//! fully-connected layers. BatchNorm, ReLU, pooling and bias additions are
//! not counted. FLOPs are reported as `2 x MACs`.

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::checkpoint::{encode, Checkpoint};
use crate::model::{Layer, ModelError, ModelGraph, Origin};
use crate::tensor::Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("layer {layer}: {detail}")]
    LayerMismatch { layer: usize, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Mask-aware cost of one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub layer: usize,
    /// Alive filters (conv), output features (fc), alive channels (BN), 0
    /// otherwise.
    pub units: usize,
    pub params: usize,
    pub macs: u64,
}

/// Alive count of the features entering `layer`.
fn alive_inputs(model: &ModelGraph, origins: &[Origin], shapes: &[Vec<usize>], layer: usize) -> usize {
    let mask = model.mask();
    let full = if layer == 0 {
        model.input_shape[0]
    } else {
        shapes[layer - 1][0]
    };
    match ModelGraph::input_origin(origins, layer) {
        Origin::Conv(c) => full - mask.pruned_count(c),
        Origin::Flattened { conv, spatial } => full - mask.pruned_count(conv) * spatial,
        Origin::Input | Origin::Dense => full,
    }
}

/// Mask-aware parameter and MAC count of every layer. On a model with an
/// all-alive mask this is the plain structural count.
pub fn layer_costs(model: &ModelGraph) -> Result<Vec<LayerCost>, MetricsError> {
    let shapes = model.infer_shapes()?;
    let origins = model.origins()?;
    let mask = model.mask();
    let mut out = Vec::with_capacity(model.layers.len());
    for (i, layer) in model.layers.iter().enumerate() {
        let inputs = alive_inputs(model, &origins, &shapes, i);
        let cost = match layer {
            Layer::Conv(p) => {
                let alive = mask.alive_count(i);
                let k2 = p.kernel() * p.kernel();
                let hw = (shapes[i][1] * shapes[i][2]) as u64;
                LayerCost {
                    layer: i,
                    units: alive,
                    params: alive * inputs * k2 + alive,
                    macs: (alive * inputs * k2) as u64 * hw,
                }
            }
            Layer::BatchNorm(_) => LayerCost {
                layer: i,
                units: inputs,
                params: 4 * inputs,
                macs: 0,
            },
            Layer::Linear(l) => LayerCost {
                layer: i,
                units: l.out_features(),
                params: l.out_features() * inputs + l.out_features(),
                macs: (l.out_features() * inputs) as u64,
            },
            _ => LayerCost {
                layer: i,
                units: 0,
                params: 0,
                macs: 0,
            },
        };
        out.push(cost);
    }
    Ok(out)
}

/// Per-layer MACs of one sample, from tensor shapes alone (the mask is
/// ignored, i.e. this is the cost of actually running the stored model).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopCount {
    pub per_layer: Vec<u64>,
    pub macs: u64,
}

impl FlopCount {
    pub fn flops(&self) -> u64 {
        2 * self.macs
    }
}

pub fn compute_flops(model: &ModelGraph) -> Result<FlopCount, MetricsError> {
    let shapes = model.infer_shapes()?;
    let per_layer: Vec<u64> = model
        .layers
        .iter()
        .enumerate()
        .map(|(i, layer)| match layer {
            Layer::Conv(p) => {
                (p.out_channels() * p.in_channels() * p.kernel() * p.kernel()) as u64
                    * (shapes[i][1] * shapes[i][2]) as u64
            }
            Layer::Linear(l) => (l.out_features() * l.in_features()) as u64,
            _ => 0,
        })
        .collect();
    Ok(FlopCount {
        macs: per_layer.iter().sum(),
        per_layer,
    })
}

/// Mask-aware MACs of one sample: what the rebuilt model would cost.
pub fn effective_flops(model: &ModelGraph) -> Result<FlopCount, MetricsError> {
    let per_layer: Vec<u64> = layer_costs(model)?.iter().map(|c| c.macs).collect();
    Ok(FlopCount {
        macs: per_layer.iter().sum(),
        per_layer,
    })
}

/// Short row name: `conv1`, `conv2`, ..., `fc1`, ... by kind ordinal.
fn row_names(model: &ModelGraph) -> Vec<Option<String>> {
    let (mut convs, mut fcs) = (0, 0);
    model
        .layers
        .iter()
        .map(|l| match l {
            Layer::Conv(_) => {
                convs += 1;
                Some(format!("conv{convs}"))
            }
            Layer::Linear(_) => {
                fcs += 1;
                Some(format!("fc{fcs}"))
            }
            _ => None,
        })
        .collect()
}

/// Checks that two models have the same layer kinds and the same original
/// filter counts, so one can be read as a pruned version of the other.
fn check_aligned(before: &ModelGraph, after: &ModelGraph) -> Result<(), MetricsError> {
    if before.layers.len() != after.layers.len() {
        return Err(MetricsError::LayerMismatch {
            layer: before.layers.len().min(after.layers.len()),
            detail: format!("{} layers before, {} after", before.layers.len(), after.layers.len()),
        });
    }
    for (i, (a, b)) in before.layers.iter().zip(&after.layers).enumerate() {
        if a.kind() != b.kind() {
            return Err(MetricsError::LayerMismatch {
                layer: i,
                detail: format!("{} before, {} after", a.kind(), b.kind()),
            });
        }
        if let (Layer::Conv(_), Layer::Conv(_)) = (a, b) {
            let (ab, aa) = (before.mask().alive_count(i), after.mask().alive_count(i));
            if aa > ab {
                return Err(MetricsError::LayerMismatch {
                    layer: i,
                    detail: format!("{aa} alive filters after but {ab} before"),
                });
            }
        }
        if let (Layer::Linear(x), Layer::Linear(y)) = (a, b) {
            if x.out_features() != y.out_features() {
                return Err(MetricsError::LayerMismatch {
                    layer: i,
                    detail: "fc output size changed".into(),
                });
            }
        }
    }
    Ok(())
}

/// Filter counts of every conv layer and their totals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterRatios {
    /// `(layer, pruned, total)`
    pub per_layer: Vec<(usize, usize, usize)>,
    pub pruned: usize,
    pub total: usize,
}

impl FilterRatios {
    pub fn fpr_all(&self) -> f64 {
        ratio(self.pruned, self.total)
    }

    pub fn fpr(&self, layer: usize) -> Option<f64> {
        self.per_layer
            .iter()
            .find(|r| r.0 == layer)
            .map(|&(_, p, t)| ratio(p, t))
    }
}

fn ratio(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64
    }
}

/// Pruned filters per conv layer of `after` relative to the alive filters of
/// `before`. `after` may be masked or rebuilt.
pub fn compute_fpr(before: &ModelGraph, after: &ModelGraph) -> Result<FilterRatios, MetricsError> {
    check_aligned(before, after)?;
    let per_layer: Vec<_> = before
        .conv_layers()
        .into_iter()
        .map(|i| {
            let total = before.mask().alive_count(i);
            (i, total - after.mask().alive_count(i), total)
        })
        .collect();
    Ok(FilterRatios {
        pruned: per_layer.iter().map(|r| r.1).sum(),
        total: per_layer.iter().map(|r| r.2).sum(),
        per_layer,
    })
}

/// Parameter counts per report row (conv or fc, BatchNorm folded in) and in
/// total, before and after.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamRatios {
    /// `(row layer, before, after)`
    pub per_layer: Vec<(usize, usize, usize)>,
    pub before: usize,
    pub after: usize,
}

impl ParamRatios {
    pub fn ppr_all(&self) -> f64 {
        1.0 - ratio(self.after, self.before)
    }
}

/// Groups layer costs into report rows `(layer, params, macs)`: one row per
/// conv or fc layer, other parameter-bearing layers added to the row before
/// them (or given their own row if none precedes them).
fn grouped(model: &ModelGraph, costs: &[LayerCost]) -> Vec<(usize, usize, u64)> {
    let mut rows: Vec<(usize, usize, u64)> = Vec::new();
    for c in costs {
        let is_row = matches!(model.layers[c.layer], Layer::Conv(_) | Layer::Linear(_));
        match rows.last_mut() {
            Some(r) if !is_row => {
                r.1 += c.params;
                r.2 += c.macs;
            }
            _ if is_row || c.params > 0 => rows.push((c.layer, c.params, c.macs)),
            _ => {}
        }
    }
    rows
}

pub fn compute_ppr(before: &ModelGraph, after: &ModelGraph) -> Result<ParamRatios, MetricsError> {
    check_aligned(before, after)?;
    let b = grouped(before, &layer_costs(before)?);
    let a = grouped(after, &layer_costs(after)?);
    if a.len() != b.len() {
        return Err(MetricsError::LayerMismatch {
            layer: 0,
            detail: "report rows differ".into(),
        });
    }
    let per_layer: Vec<_> = b.iter().zip(&a).map(|(x, y)| (x.0, x.1, y.1)).collect();
    Ok(ParamRatios {
        before: per_layer.iter().map(|r| r.1).sum(),
        after: per_layer.iter().map(|r| r.2).sum(),
        per_layer,
    })
}

/// Serialized checkpoint size of the model with masked filters removed.
pub fn model_size_bytes(model: &ModelGraph) -> Result<usize, MetricsError> {
    let rebuilt = model.rebuild()?;
    Ok(encode(&Checkpoint {
        model: rebuilt,
        rng: Rng::new(0).state(),
    })
    .len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub layer: usize,
    pub name: String,
    pub filters_before: usize,
    pub filters_after: usize,
    pub params_before: usize,
    pub params_after: usize,
    pub macs_before: u64,
    pub macs_after: u64,
}

impl ReportRow {
    pub fn fpr(&self) -> f64 {
        ratio(self.filters_before - self.filters_after, self.filters_before)
    }

    pub fn ppr(&self) -> f64 {
        1.0 - ratio(self.params_after, self.params_before)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneReport {
    pub model: String,
    pub rows: Vec<ReportRow>,
    /// Conv filters only.
    pub filters_before: usize,
    pub filters_after: usize,
    pub params_before: usize,
    pub params_after: usize,
    pub macs_before: u64,
    pub macs_after: u64,
    pub size_bytes_before: usize,
    pub size_bytes_after: usize,
}

impl PruneReport {
    pub fn build(before: &ModelGraph, after: &ModelGraph) -> Result<Self, MetricsError> {
        let fpr = compute_fpr(before, after)?;
        let ppr = compute_ppr(before, after)?;
        let cb = grouped(before, &layer_costs(before)?);
        let ca = grouped(after, &layer_costs(after)?);
        let names = row_names(before);
        let rows = ppr
            .per_layer
            .iter()
            .zip(cb.iter().zip(&ca))
            .map(|(&(layer, pb, pa), (b, a))| {
                let (fb, fa) = match &before.layers[layer] {
                    Layer::Conv(_) => (before.mask().alive_count(layer), after.mask().alive_count(layer)),
                    Layer::Linear(l) => (l.out_features(), l.out_features()),
                    _ => (0, 0),
                };
                ReportRow {
                    layer,
                    name: names[layer].clone().unwrap_or_else(|| format!("layer{layer}")),
                    filters_before: fb,
                    filters_after: fa,
                    params_before: pb,
                    params_after: pa,
                    macs_before: b.2,
                    macs_after: a.2,
                }
            })
            .collect::<Vec<_>>();
        Ok(Self {
            model: before.name.clone(),
            filters_before: fpr.total,
            filters_after: fpr.total - fpr.pruned,
            params_before: ppr.before,
            params_after: ppr.after,
            macs_before: rows.iter().map(|r| r.macs_before).sum(),
            macs_after: rows.iter().map(|r| r.macs_after).sum(),
            size_bytes_before: model_size_bytes(before)?,
            size_bytes_after: model_size_bytes(after)?,
            rows,
        })
    }

    pub fn fpr_all(&self) -> f64 {
        ratio(self.filters_before - self.filters_after, self.filters_before)
    }

    pub fn ppr_all(&self) -> f64 {
        1.0 - ratio(self.params_after, self.params_before)
    }

    pub fn pruned_flops_fraction(&self) -> f64 {
        if self.macs_before == 0 {
            0.0
        } else {
            1.0 - self.macs_after as f64 / self.macs_before as f64
        }
    }
}

/// Fraction as a percentage with three decimals, e.g. `3.125`.
pub fn pct(x: f64) -> String {
    format!("{:.3}", 100.0 * x)
}

pub const REPORT_CSV_HEADER: &str =
    "layer,name,filters_before,filters_after,fpr_pct,params_before,params_after,ppr_pct,macs_before,macs_after";

/// Fixed-width text table. An empty model yields only the header lines.
pub fn render_text(report: &PruneReport) -> String {
    let mut s = String::new();
    writeln!(s, "# prune report: {}", report.model).unwrap();
    writeln!(s, "# MACs count conv and fc multiply-accumulates; FLOPs = 2 x MACs").unwrap();
    writeln!(
        s,
        "{:<8} {:>7} {:>7} {:>8} {:>10} {:>10} {:>8} {:>12} {:>12}",
        "layer", "filters", "after", "FPR(%)", "params", "after", "PPR(%)", "MACs", "after"
    )
    .unwrap();
    if report.rows.is_empty() {
        return s;
    }
    for r in &report.rows {
        writeln!(
            s,
            "{:<8} {:>7} {:>7} {:>8} {:>10} {:>10} {:>8} {:>12} {:>12}",
            r.name,
            r.filters_before,
            r.filters_after,
            pct(r.fpr()),
            r.params_before,
            r.params_after,
            pct(r.ppr()),
            r.macs_before,
            r.macs_after
        )
        .unwrap();
    }
    writeln!(
        s,
        "{:<8} {:>7} {:>7} {:>8} {:>10} {:>10} {:>8} {:>12} {:>12}",
        "total",
        report.filters_before,
        report.filters_after,
        pct(report.fpr_all()),
        report.params_before,
        report.params_after,
        pct(report.ppr_all()),
        report.macs_before,
        report.macs_after
    )
    .unwrap();
    writeln!(s, "FLOPs before: {}", 2 * report.macs_before).unwrap();
    writeln!(s, "FLOPs after: {}", 2 * report.macs_after).unwrap();
    writeln!(s, "pruned FLOPs(%): {}", pct(report.pruned_flops_fraction())).unwrap();
    writeln!(s, "model size bytes before: {}", report.size_bytes_before).unwrap();
    writeln!(s, "model size bytes after: {}", report.size_bytes_after).unwrap();
    s
}

/// CSV with one row per layer and a closing `total` row.
pub fn render_csv(report: &PruneReport) -> String {
    let mut s = format!("{REPORT_CSV_HEADER}\n");
    if report.rows.is_empty() {
        return s;
    }
    for r in &report.rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.layer,
            r.name,
            r.filters_before,
            r.filters_after,
            pct(r.fpr()),
            r.params_before,
            r.params_after,
            pct(r.ppr()),
            r.macs_before,
            r.macs_after
        )
        .unwrap();
    }
    writeln!(
        s,
        ",total,{},{},{},{},{},{},{},{}",
        report.filters_before,
        report.filters_after,
        pct(report.fpr_all()),
        report.params_before,
        report.params_after,
        pct(report.ppr_all()),
        report.macs_before,
        report.macs_after
    )
    .unwrap();
    s
}

/// One line of the method comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub fpr_all: f64,
    pub ppr_all: f64,
    pub accuracy: f64,
    pub train_macs: u64,
}

pub fn render_comparison(rows: &[ComparisonRow]) -> String {
    let mut s = format!(
        "{:<24} {:>8} {:>8} {:>12} {:>16}\n",
        "Model", "FPR(%)", "PPR(%)", "Accuracy(%)", "TrainMACs"
    );
    for r in rows {
        writeln!(
            s,
            "{:<24} {:>8} {:>8} {:>12} {:>16}",
            r.label,
            pct(r.fpr_all),
            pct(r.ppr_all),
            pct(r.accuracy),
            r.train_macs
        )
        .unwrap();
    }
    s
}
