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

//! Analytic gradients of every differentiable op against central finite
//! differences, plus one end-to-end check through a whole model.

mod common;

use common::{random_model, rel_err, FD_STEP, GRAD_OPS};
use iplt_core::model::{Layer, ParamGrads};
use iplt_core::tensor::{softmax_cross_entropy, Rng, Tensor};

const CASES: u64 = 100;
const TOLERANCE: f64 = 1e-4;

#[test]
fn every_op_matches_finite_differences() {
    for (name, check) in GRAD_OPS {
        let mut worst = 0.0f64;
        for case in 0..CASES {
            let mut rng = Rng::with_stream(case, 20);
            let err = check(&mut rng);
            assert!(err <= TOLERANCE, "{name} case {case}: relative error {err:e}");
            worst = worst.max(err);
        }
        eprintln!("{name}: worst relative error {worst:e}");
    }
}

fn param(layer: &Layer, which: usize) -> Tensor {
    match (layer, which) {
        (Layer::Conv(p), 0) => p.weights.clone(),
        (Layer::Conv(p), _) => p.bias.clone(),
        (Layer::BatchNorm(b), 0) => b.gamma.clone(),
        (Layer::BatchNorm(b), _) => b.beta.clone(),
        (Layer::Linear(l), 0) => l.weights.clone(),
        (Layer::Linear(l), _) => l.bias.clone(),
        _ => unreachable!(),
    }
}

fn set_param(layer: &mut Layer, which: usize, t: Tensor) {
    match (layer, which) {
        (Layer::Conv(p), 0) => p.weights = t,
        (Layer::Conv(p), _) => p.bias = t,
        (Layer::BatchNorm(b), 0) => b.gamma = t,
        (Layer::BatchNorm(b), _) => b.beta = t,
        (Layer::Linear(l), 0) => l.weights = t,
        (Layer::Linear(l), _) => l.bias = t,
        _ => unreachable!(),
    }
}

fn analytic(g: &ParamGrads, which: usize) -> Tensor {
    match (g, which) {
        (ParamGrads::Conv { weights, .. }, 0) | (ParamGrads::Linear { weights, .. }, 0) => weights.clone(),
        (ParamGrads::Conv { bias, .. }, _) | (ParamGrads::Linear { bias, .. }, _) => bias.clone(),
        (ParamGrads::BatchNorm { gamma, .. }, 0) => gamma.clone(),
        (ParamGrads::BatchNorm { beta, .. }, _) => beta.clone(),
    }
}

/// Entries whose two difference quotients (steps h and h/2) disagree sit
/// within h of a ReLU or pooling kink and are skipped; they must stay rare.
const MAX_KINK_FRACTION: f64 = 0.02;

/// `(worst relative error over smooth entries, smooth entries, kinked entries)`.
fn check_smooth_entries(f: &dyn Fn(&Tensor) -> f64, x: &Tensor, analytic: &Tensor) -> (f64, usize, usize) {
    let mut probe = x.clone();
    let mut quotient = |i: usize, h: f64| {
        let v = x.data()[i];
        probe.data_mut()[i] = v + h;
        let up = f(&probe);
        probe.data_mut()[i] = v - h;
        let down = f(&probe);
        probe.data_mut()[i] = v;
        (up - down) / (2.0 * h)
    };
    let (mut worst, mut smooth, mut kinked) = (0.0f64, 0, 0);
    for i in 0..x.len() {
        let coarse = quotient(i, FD_STEP);
        let fine = quotient(i, FD_STEP / 2.0);
        if rel_err(coarse, fine) > 1e-6 {
            kinked += 1;
            continue;
        }
        smooth += 1;
        worst = worst.max(rel_err(analytic.data()[i], fine));
    }
    (worst, smooth, kinked)
}

#[test]
fn model_backward_matches_finite_differences() {
    let (mut smooth, mut kinked) = (0, 0);
    for case in 0..20 {
        let mut rng = Rng::with_stream(case, 21);
        let mut model = random_model(&mut rng);
        for layer in &mut model.layers {
            match layer {
                Layer::Conv(p) => p.bias = Tensor::randn(p.bias.shape(), 0.5, &mut rng),
                Layer::BatchNorm(b) => b.beta = Tensor::randn(b.beta.shape(), 0.5, &mut rng),
                Layer::Linear(l) => l.bias = Tensor::randn(l.bias.shape(), 0.5, &mut rng),
                _ => {}
            }
        }
        let [c, h, w] = model.input_shape;
        let x = Tensor::randn(&[3, c, h, w], 1.0, &mut rng);
        let classes = model.infer_shapes().unwrap().last().unwrap()[0];
        let labels: Vec<usize> = (0..3).map(|_| rng.below(classes)).collect();
        let loss = |m: &iplt_core::model::ModelGraph| {
            let mut m = m.clone();
            let (logits, _) = m.forward_train(&x).unwrap();
            softmax_cross_entropy(&logits, &labels).unwrap().0
        };
        let mut m = model.clone();
        let (logits, tape) = m.forward_train(&x).unwrap();
        let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
        let grads = model.backward(&tape, &g).unwrap();
        for (i, grad) in grads.iter().enumerate() {
            let Some(grad) = grad else { continue };
            for which in 0..2 {
                let (err, s, k) = check_smooth_entries(
                    &|t| {
                        let mut probe = model.clone();
                        set_param(&mut probe.layers[i], which, t.clone());
                        loss(&probe)
                    },
                    &param(&model.layers[i], which),
                    &analytic(grad, which),
                );
                assert!(err <= TOLERANCE, "case {case} layer {i} tensor {which}: {err:e}");
                smooth += s;
                kinked += k;
            }
        }
    }
    let fraction = kinked as f64 / (smooth + kinked) as f64;
    eprintln!("model check: {smooth} smooth entries, {kinked} skipped at kinks");
    assert!(
        fraction <= MAX_KINK_FRACTION,
        "{kinked} of {} entries at kinks",
        smooth + kinked
    );
}
