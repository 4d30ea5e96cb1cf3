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

//! The two pruning flows.
//!
//! Both share one epoch loop. After the updates of epoch `e` (1-based) the
//! loop records a `train` row, then runs the prune events scheduled for `e`,
//! then rebuilds if `e` is the rebuild epoch. A rebuild swaps in the
//! physically smaller model after checking that it reproduces the masked
//! model on random inputs, and starts a fresh optimizer because the momentum
//! buffers no longer match the parameter shapes.
//!
//! * IPLT prunes at epochs `k, 2k, ..., k*n` and rebuilds right after the
//!   last event, so the remaining epochs train the smaller model.
//! * The traditional flow pretrains for `P` epochs, prunes at `P, P+R, ...,
//!   P+(n-1)R` with `R` retraining epochs after each step, keeps the masks
//!   soft throughout and rebuilds after the final epoch `P+nR`.
//!
//! The learning-rate schedule spans the whole run in both flows. The data
//! order comes from stream 1 of the model seed; the rebuild check draws its
//! inputs from stream 2.

use crate::data::Dataset;
use crate::metrics::{compute_flops, compute_fpr, compute_ppr};
use crate::model::{ModelGraph, Optimizer};
use crate::tensor::{Rng, RngState, Tensor};
use crate::train::{evaluate, lr_at, train_epoch, TrainConfig};

use super::{
    apply_mask, select_filters, validate_ratios, ComparisonMode, EventKind, LogRow, PruneError, PruneSchedule, RunLog,
};

/// Largest absolute output difference tolerated between a masked model and
/// its rebuild.
pub const REBUILD_TOLERANCE: f64 = 1e-9;
const REBUILD_CHECK_INPUTS: usize = 20;

#[derive(Debug, Clone, Copy)]
pub struct RunData<'a> {
    pub train: &'a Dataset,
    pub test: Option<&'a Dataset>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// The model as it was before the first epoch.
    pub initial: ModelGraph,
    /// Final model; rebuilt whenever any prune event happened.
    pub model: ModelGraph,
    pub log: RunLog,
    /// Data-order generator position after the last epoch.
    pub rng: RngState,
    pub train_macs: u64,
}

/// Traditional pretrain, prune, retrain plan.
#[derive(Debug, Clone, PartialEq)]
pub struct TraditionalPlan {
    pub pretrain_epochs: u32,
    pub retrain_epochs: u32,
    pub ratios: Vec<f64>,
    pub mode: ComparisonMode,
    pub norm_p: f64,
    pub min_filters: usize,
}

impl TraditionalPlan {
    pub fn total_epochs(&self) -> u32 {
        self.pretrain_epochs + self.retrain_epochs * self.ratios.len() as u32
    }

    pub fn events(&self) -> Vec<(u32, f64)> {
        self.ratios
            .iter()
            .enumerate()
            .map(|(t, &r)| (self.pretrain_epochs + t as u32 * self.retrain_epochs, r))
            .collect()
    }

    fn schedule(&self) -> PruneSchedule {
        PruneSchedule {
            k: 1,
            ratios: self.ratios.clone(),
            mode: self.mode,
            norm_p: self.norm_p,
            min_filters: self.min_filters,
        }
    }
}

/// Incremental pruning: prune early on the schedule, rebuild, keep training.
pub fn iplt_run(
    model: ModelGraph,
    schedule: &PruneSchedule,
    epochs: u32,
    cfg: &TrainConfig,
    data: RunData<'_>,
) -> Result<RunOutput, PruneError> {
    schedule.validate()?;
    let events = schedule.events();
    if let Some(&(last, _)) = events.last() {
        if last > epochs {
            return Err(PruneError::Schedule(format!(
                "last prune event at epoch {last} is beyond the {epochs}-epoch budget"
            )));
        }
    }
    let rebuild_at = events.last().map(|e| e.0);
    run_loop(model, schedule, &events, rebuild_at, epochs, cfg, data)
}

/// Pretrain, then prune to each ratio with retraining in between.
pub fn traditional_run(
    model: ModelGraph,
    plan: &TraditionalPlan,
    cfg: &TrainConfig,
    data: RunData<'_>,
) -> Result<RunOutput, PruneError> {
    validate_ratios(&plan.ratios)?;
    let schedule = plan.schedule();
    schedule.validate()?;
    if plan.pretrain_epochs == 0 || (plan.retrain_epochs == 0 && !plan.ratios.is_empty()) {
        return Err(PruneError::Schedule(
            "pretrain and retrain epochs must be at least 1".into(),
        ));
    }
    let events = plan.events();
    let epochs = plan.total_epochs();
    let rebuild_at = (!events.is_empty()).then_some(epochs);
    run_loop(model, &schedule, &events, rebuild_at, epochs, cfg, data)
}

fn run_loop(
    mut model: ModelGraph,
    schedule: &PruneSchedule,
    events: &[(u32, f64)],
    rebuild_at: Option<u32>,
    epochs: u32,
    cfg: &TrainConfig,
    data: RunData<'_>,
) -> Result<RunOutput, PruneError> {
    let initial = model.clone();
    let mut rng = Rng::with_stream(model.seed, 1);
    let mut opt = Optimizer::new(cfg.sgd);
    let mut macs = 0u64;
    let mut log = RunLog::default();
    let ratios = |m: &ModelGraph| -> Result<(f64, f64), PruneError> {
        Ok((compute_fpr(&initial, m)?.fpr_all(), compute_ppr(&initial, m)?.ppr_all()))
    };

    for epoch in 1..=epochs {
        let lr = lr_at(cfg.sgd.lr, epoch - 1, epochs);
        let stats = train_epoch(&mut model, data.train, cfg.batch_size, &mut opt, lr, &mut rng)?;
        macs += 3 * stats.samples as u64 * compute_flops(&model)?.macs;
        model.epoch = epoch;
        let due = epoch == epochs || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0);
        let test_acc = match data.test {
            Some(test) if due => Some(evaluate(&model, test, cfg.eval_batch)?),
            _ => None,
        };
        let (fpr_all, ppr_all) = ratios(&model)?;
        let base = LogRow {
            epoch,
            kind: EventKind::Train,
            layer: None,
            filter: None,
            norm: None,
            fpr_all,
            ppr_all,
            train_loss: Some(stats.loss),
            test_acc,
            cum_train_macs: macs,
        };
        log.push(base.clone());

        for &(_, target) in events.iter().filter(|e| e.0 == epoch) {
            let selection = select_filters(&model, schedule, target).map_err(|e| match e {
                PruneError::LayerCollapse { layer, target, .. } => PruneError::LayerCollapse {
                    layer,
                    target,
                    epoch: Some(epoch),
                },
                other => other,
            })?;
            apply_mask(&mut model, &selection)?;
            let (fpr_all, ppr_all) = ratios(&model)?;
            let row = LogRow {
                kind: EventKind::Prune,
                fpr_all,
                ppr_all,
                train_loss: None,
                test_acc: None,
                ..base.clone()
            };
            if selection.is_empty() {
                log.push(row.clone());
            }
            for p in &selection.picks {
                log.push(LogRow {
                    layer: Some(p.layer),
                    filter: Some(p.filter),
                    norm: Some(p.norm),
                    ..row.clone()
                });
            }
        }

        if rebuild_at == Some(epoch) {
            model = rebuild_checked(&model, epoch)?;
            opt.reset();
            let (fpr_all, ppr_all) = ratios(&model)?;
            log.push(LogRow {
                kind: EventKind::Rebuild,
                fpr_all,
                ppr_all,
                train_loss: None,
                test_acc: None,
                ..base
            });
        }
    }
    Ok(RunOutput {
        initial,
        model,
        log,
        rng: rng.state(),
        train_macs: macs,
    })
}

/// Rebuilds and verifies eval-mode equivalence on random inputs.
fn rebuild_checked(model: &ModelGraph, epoch: u32) -> Result<ModelGraph, PruneError> {
    let rebuilt = model.rebuild()?;
    let mut rng = Rng::with_stream(model.seed, 2);
    let [c, h, w] = model.input_shape;
    let x = Tensor::randn(&[REBUILD_CHECK_INPUTS, c, h, w], 1.0, &mut rng);
    let max_diff = model.forward_eval(&x)?.max_abs_diff(&rebuilt.forward_eval(&x)?);
    if max_diff.is_nan() || max_diff > REBUILD_TOLERANCE {
        return Err(PruneError::RebuildMismatch { epoch, max_diff });
    }
    Ok(rebuilt)
}
