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

//! Independent reference implementations shared by the integration tests
//! and the acceptance suite. None of them call the code paths they check.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use iplt_core::model::{Layer, ModelBuilder, ModelGraph, PruneMask};
use iplt_core::pruner::ComparisonMode;
use iplt_core::tensor::{
    batchnorm_backward, batchnorm_forward_train, conv2d_backward, conv2d_forward, linear_backward, linear_forward,
    maxpool2d_backward, maxpool2d_forward, relu_backward, relu_forward, softmax_cross_entropy, ConvParams, Rng, Tensor,
};

// ---------------------------------------------------------------- models

/// A random small conv net: 1 to 3 conv blocks (optional BatchNorm and
/// pooling), then one or two fully connected layers.
pub fn random_model(rng: &mut Rng) -> ModelGraph {
    let c = 1 + rng.below(3);
    let hw = 6 + rng.below(7);
    let mut b = ModelBuilder::new("random", [c, hw, hw]);
    let mut size = hw;
    let blocks = 1 + rng.below(3);
    for _ in 0..blocks {
        let k = if rng.below(2) == 0 { 1 } else { 3 };
        let pad = if k == 3 { rng.below(2) } else { 0 };
        if size + 2 * pad < k {
            break;
        }
        b = b.conv(2 + rng.below(7), k, 1, pad);
        size = size + 2 * pad - k + 1;
        if rng.below(3) > 0 {
            b = b.batch_norm();
        }
        b = b.relu();
        if size >= 4 && rng.below(2) == 0 {
            b = b.max_pool(2, 2);
            size /= 2;
        }
    }
    b = b.flatten();
    if rng.below(2) == 0 {
        b = b.linear(3 + rng.below(6)).relu();
    }
    b.linear(2 + rng.below(4))
        .build(rng.next_u64())
        .expect("random model builds")
}

/// A mask that prunes a random subset of every conv layer, keeping at least
/// one filter alive per layer.
pub fn random_mask(model: &ModelGraph, rng: &mut Rng) -> PruneMask {
    let mut layers = BTreeMap::new();
    for i in model.conv_layers() {
        let n = model.conv(i).unwrap().out_channels();
        let keep = rng.below(n);
        let mut alive: Vec<bool> = (0..n).map(|_| rng.below(3) > 0).collect();
        alive[keep] = true;
        layers.insert(i, alive);
    }
    PruneMask::from_layers(layers)
}

// ------------------------------------------------------------- selection

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleOutcome {
    Picks(BTreeSet<(usize, usize)>),
    Collapse(usize),
}

fn lp_norm(w: &[f64], p: f64) -> f64 {
    w.iter().map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p)
}

/// Sort-everything reference selector: rank alive filters by (norm, layer,
/// filter) and take them greedily until the pruned count reaches the
/// target quota.
pub fn oracle_select(
    model: &ModelGraph,
    mode: ComparisonMode,
    p: f64,
    target: f64,
    min_filters: usize,
) -> OracleOutcome {
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    let mut alive: BTreeMap<usize, usize> = BTreeMap::new();
    let mut total: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, layer) in model.layers.iter().enumerate() {
        let Layer::Conv(c) = layer else { continue };
        let o = c.weights.dim(0);
        let per = c.weights.len() / o;
        total.insert(i, o);
        alive.insert(i, 0);
        for j in 0..o {
            if model.mask().is_alive(i, j) {
                *alive.get_mut(&i).unwrap() += 1;
                cands.push((lp_norm(&c.weights.data()[j * per..(j + 1) * per], p), i, j));
            }
        }
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let quota = |n: usize| ((target * n as f64 + 1e-9).floor() as usize).min(n);
    let mut picks = BTreeSet::new();
    match mode {
        ComparisonMode::Global => {
            let all: usize = total.values().sum();
            let pruned = all - alive.values().sum::<usize>();
            let need = quota(all).saturating_sub(pruned);
            let mut left = alive.clone();
            for &(_, l, f) in &cands {
                if picks.len() == need {
                    break;
                }
                if min_filters > 0 && left[&l] <= min_filters {
                    continue;
                }
                *left.get_mut(&l).unwrap() -= 1;
                picks.insert((l, f));
            }
            if min_filters == 0 {
                if let Some((&l, _)) = left.iter().find(|(_, &n)| n == 0) {
                    return OracleOutcome::Collapse(l);
                }
            }
        }
        ComparisonMode::IntraLayer => {
            for (&l, &o) in &total {
                let a = alive[&l];
                let mut need = quota(o).saturating_sub(o - a);
                if min_filters > 0 {
                    need = need.min(a.saturating_sub(min_filters));
                } else if need > 0 && need >= a {
                    return OracleOutcome::Collapse(l);
                }
                picks.extend(cands.iter().filter(|c| c.1 == l).take(need).map(|c| (c.1, c.2)));
            }
        }
    }
    OracleOutcome::Picks(picks)
}

// ------------------------------------------------------------ convolution

/// Direct seven-loop cross-correlation with zero padding.
pub fn naive_conv(input: &Tensor, p: &ConvParams) -> Tensor {
    let s = input.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let ws = p.weights.shape();
    let (o, k) = (ws[0], ws[2]);
    let oh = (h + 2 * p.padding - k) / p.stride + 1;
    let ow = (w + 2 * p.padding - k) / p.stride + 1;
    let mut out = vec![0.0; b * o * oh * ow];
    for bi in 0..b {
        for f in 0..o {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = p.bias.data()[f];
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * p.stride + ky) as isize - p.padding as isize;
                                let ix = (x * p.stride + kx) as isize - p.padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let v = input.data()[((bi * c + ci) * h + iy as usize) * w + ix as usize];
                                acc += v * p.weights.data()[((f * c + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[((bi * o + f) * oh + y) * ow + x] = acc;
                }
            }
        }
    }
    Tensor::new(vec![b, o, oh, ow], out).unwrap()
}

// ------------------------------------------------------ gradient checking

pub const FD_STEP: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|)`, with differences below 1e-9 counted as exact
/// so that zero gradients do not divide by zero.
pub fn rel_err(a: f64, n: f64) -> f64 {
    let d = (a - n).abs();
    if d < 1e-9 {
        0.0
    } else {
        d / a.abs().max(n.abs())
    }
}

/// Largest relative error between `analytic` and central differences of
/// `f` around `x`.
pub fn fd_max_err(f: &dyn Fn(&Tensor) -> f64, x: &Tensor, analytic: &Tensor) -> f64 {
    assert_eq!(x.shape(), analytic.shape());
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let v = x.data()[i];
        probe.data_mut()[i] = v + FD_STEP;
        let up = f(&probe);
        probe.data_mut()[i] = v - FD_STEP;
        let down = f(&probe);
        probe.data_mut()[i] = v;
        worst = worst.max(rel_err(analytic.data()[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

/// `sum(out * r)`: a scalar whose gradient with respect to `out` is `r`.
fn project(out: &Tensor, r: &Tensor) -> f64 {
    out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

pub fn randn(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

pub fn grad_check_conv(rng: &mut Rng) -> f64 {
    let (b, c, o) = (1 + rng.below(2), 1 + rng.below(3), 1 + rng.below(3));
    let k = 1 + rng.below(3);
    let stride = 1 + rng.below(2);
    let pad = rng.below(2);
    let hw = k + rng.below(4);
    let x = randn(&[b, c, hw, hw], rng);
    let p = ConvParams::new(randn(&[o, c, k, k], rng), randn(&[o], rng), stride, pad).unwrap();
    let out = conv2d_forward(&x, &p).unwrap();
    let r = randn(out.shape(), rng);
    let g = conv2d_backward(&x, &p, &r).unwrap();
    let e_in = fd_max_err(&|t| project(&conv2d_forward(t, &p).unwrap(), &r), &x, &g.input);
    let e_w = fd_max_err(
        &|t| {
            let q = ConvParams::new(t.clone(), p.bias.clone(), stride, pad).unwrap();
            project(&conv2d_forward(&x, &q).unwrap(), &r)
        },
        &p.weights,
        &g.weights,
    );
    let e_b = fd_max_err(
        &|t| {
            let q = ConvParams::new(p.weights.clone(), t.clone(), stride, pad).unwrap();
            project(&conv2d_forward(&x, &q).unwrap(), &r)
        },
        &p.bias,
        &g.bias,
    );
    e_in.max(e_w).max(e_b)
}

pub fn grad_check_linear(rng: &mut Rng) -> f64 {
    let (b, fin, fout) = (1 + rng.below(4), 1 + rng.below(6), 1 + rng.below(5));
    let x = randn(&[b, fin], rng);
    let w = randn(&[fout, fin], rng);
    let bias = randn(&[fout], rng);
    let r = randn(&[b, fout], rng);
    let g = linear_backward(&x, &w, &r).unwrap();
    let e_in = fd_max_err(&|t| project(&linear_forward(t, &w, &bias).unwrap(), &r), &x, &g.input);
    let e_w = fd_max_err(&|t| project(&linear_forward(&x, t, &bias).unwrap(), &r), &w, &g.weights);
    let e_b = fd_max_err(&|t| project(&linear_forward(&x, &w, t).unwrap(), &r), &bias, &g.bias);
    e_in.max(e_w).max(e_b)
}

pub fn grad_check_batchnorm(rng: &mut Rng) -> f64 {
    let (b, c, hw) = (2 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3));
    let x = randn(&[b, c, hw, hw], rng);
    let gamma = randn(&[c], rng);
    let beta = randn(&[c], rng);
    let r = randn(x.shape(), rng);
    let (_, cache) = batchnorm_forward_train(&x, &gamma, &beta).unwrap();
    let (gi, gg, gb) = batchnorm_backward(&cache, &r).unwrap();
    let f = |x: &Tensor, g: &Tensor, bt: &Tensor| project(&batchnorm_forward_train(x, g, bt).unwrap().0, &r);
    let e_in = fd_max_err(&|t| f(t, &gamma, &beta), &x, &gi);
    let e_g = fd_max_err(&|t| f(&x, t, &beta), &gamma, &gg);
    let e_b = fd_max_err(&|t| f(&x, &gamma, t), &beta, &gb);
    e_in.max(e_g).max(e_b)
}

pub fn grad_check_relu(rng: &mut Rng) -> f64 {
    let n = 1 + rng.below(20);
    // Keep every input away from the kink at zero.
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let v = rng.normal();
            if v.abs() < 1e-2 {
                0.5
            } else {
                v
            }
        })
        .collect();
    let x = Tensor::new(vec![1, n], data).unwrap();
    let r = randn(&[1, n], rng);
    let g = relu_backward(&x, &r).unwrap();
    fd_max_err(&|t| project(&relu_forward(t), &r), &x, &g)
}

pub fn grad_check_maxpool(rng: &mut Rng) -> f64 {
    let (b, c) = (1 + rng.below(2), 1 + rng.below(2));
    let window = 1 + rng.below(3);
    let stride = 1 + rng.below(2);
    let hw = window + rng.below(4);
    let len = b * c * hw * hw;
    // Distinct values spaced far beyond the finite-difference step.
    let mut vals: Vec<f64> = (0..len).map(|i| i as f64 * 0.01).collect();
    rng.shuffle(&mut vals);
    let x = Tensor::new(vec![b, c, hw, hw], vals).unwrap();
    let (out, idx) = maxpool2d_forward(&x, window, stride).unwrap();
    let r = randn(out.shape(), rng);
    let g = maxpool2d_backward(&r, &idx).unwrap();
    fd_max_err(
        &|t| project(&maxpool2d_forward(t, window, stride).unwrap().0, &r),
        &x,
        &g,
    )
}

pub fn grad_check_softmax_ce(rng: &mut Rng) -> f64 {
    let (b, classes) = (1 + rng.below(4), 2 + rng.below(6));
    let x = Tensor::randn(&[b, classes], 3.0, rng);
    let labels: Vec<usize> = (0..b).map(|_| rng.below(classes)).collect();
    let (_, g) = softmax_cross_entropy(&x, &labels).unwrap();
    fd_max_err(&|t| softmax_cross_entropy(t, &labels).unwrap().0, &x, &g)
}

/// A gradient check returning its largest relative error.
pub type GradCheck = fn(&mut Rng) -> f64;

pub const GRAD_OPS: [(&str, GradCheck); 6] = [
    ("conv2d", grad_check_conv),
    ("linear", grad_check_linear),
    ("batchnorm", grad_check_batchnorm),
    ("relu", grad_check_relu),
    ("maxpool2d", grad_check_maxpool),
    ("softmax_cross_entropy", grad_check_softmax_ce),
];

// -------------------------------------------------------------- counting

/// Parameter and MAC totals of a stored model, walking tensor shapes
/// directly. Every conv and fc multiply-accumulate is counted once per
/// output element.
pub fn structural_counts(model: &ModelGraph) -> (usize, u64) {
    let [_, mut h, mut w] = model.input_shape;
    let mut params = 0usize;
    let mut macs = 0u64;
    for layer in &model.layers {
        match layer {
            Layer::Conv(p) => {
                let s = p.weights.shape();
                let (o, k) = (s[0], s[2]);
                h = (h + 2 * p.padding - k) / p.stride + 1;
                w = (w + 2 * p.padding - k) / p.stride + 1;
                params += o * s[1] * k * k + o;
                macs += (o * s[1] * k * k * h * w) as u64;
            }
            Layer::BatchNorm(bn) => params += 4 * bn.gamma.len(),
            Layer::MaxPool { window, stride } => {
                h = (h - window) / stride + 1;
                w = (w - window) / stride + 1;
            }
            Layer::Linear(l) => {
                let s = l.weights.shape();
                params += s[0] * s[1] + s[0];
                macs += (s[0] * s[1]) as u64;
            }
            Layer::Relu | Layer::Flatten => {}
        }
    }
    (params, macs)
}

/// Pruned conv filters and conv filters in total, read off the mask.
pub fn mask_counts(model: &ModelGraph) -> (usize, usize) {
    let mut pruned = 0;
    let mut total = 0;
    for (_, flags) in model.mask().iter() {
        total += flags.len();
        pruned += flags.iter().filter(|a| !**a).count();
    }
    (pruned, total)
}
