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

//! Experiment commands behind the `iplt` binary.
//!
//! `train`, `iplt` and `traditional` write the same files into the output
//! directory:
//!
//! | file | content |
//! |------|---------|
//! | `initial.ckpt` | the seeded model before training |
//! | `model.ckpt` | the final (rebuilt) model and the data-order generator state |
//! | `run_log.csv` | one row per epoch and per prune event |
//! | `report.txt`, `report.csv` | per-layer filter, parameter and MAC accounting |
//! | `config.txt` | the resolved configuration |
//!
//! `train` is `iplt` with an empty ratio list. `traditional` derives its
//! epoch budget from `pretrain_epochs + len(ratios) * retrain_epochs` and
//! ignores `epochs`.

mod config;

pub use config::{mnist_schedule_ratios, parse_config_text, parse_ratios, ConfigError, DatasetKind, Preset, RunConfig};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::{load_mnist_dir, make_synthetic, DataError, Dataset, Split, SyntheticSpec, MNIST_CLASSES};
use crate::metrics::{render_comparison, render_csv, render_text, ComparisonRow, MetricsError, PruneReport};
use crate::model::{load_checkpoint, presets, save_checkpoint, Checkpoint, CheckpointError, ModelError, ModelGraph};
use crate::pruner::{iplt_run, traditional_run, PruneError, RunData, RunLog, RunOutput};
use crate::tensor::Rng;
use crate::train::evaluate;

/// Generator stream that orders the training data.
const DATA_STREAM: u64 = 1;
const TRAIN_DATA_STREAM: u64 = 10;
const TEST_DATA_STREAM: u64 = 11;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {detail}", path.display())]
    RunLog { path: PathBuf, detail: String },
}

impl HarnessError {
    /// Stable code printed as `error[CODE]: message`.
    pub fn code(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "E_CONFIG",
            HarnessError::Data(_) => "E_DATA",
            HarnessError::Checkpoint(_) => "E_CHECKPOINT",
            HarnessError::Prune(PruneError::LayerCollapse { .. }) => "E_COLLAPSE",
            HarnessError::Prune(PruneError::Schedule(_)) => "E_SCHEDULE",
            HarnessError::Prune(PruneError::RebuildMismatch { .. }) => "E_REBUILD",
            HarnessError::Prune(_) => "E_PRUNE",
            HarnessError::Model(_) => "E_MODEL",
            HarnessError::Metrics(_) => "E_METRICS",
            HarnessError::Io { .. } => "E_IO",
            HarnessError::RunLog { .. } => "E_LOG",
        }
    }

    /// `error[CODE]: message` on one line.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error[{}]: {msg}", self.code())
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Train,
    Iplt,
    Traditional,
}

/// Everything a finished run wrote, kept in memory.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out: PathBuf,
    pub run: RunOutput,
    pub report: PruneReport,
}

impl RunSummary {
    pub fn accuracy(&self) -> Option<f64> {
        self.run.log.final_accuracy()
    }

    /// One-line outcome for the terminal.
    pub fn headline(&self) -> String {
        let acc = self.accuracy().map_or_else(|| "n/a".into(), |a| format!("{a:.4}"));
        format!(
            "wrote {}: test_acc {acc} fpr_all {:.6} ppr_all {:.6} train_macs {}",
            self.out.display(),
            self.report.fpr_all(),
            self.report.ppr_all(),
            self.run.train_macs
        )
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(io_err(path))
}

/// One split of the configured dataset, cut to its subset size.
pub fn load_split(cfg: &RunConfig, split: Split) -> Result<Dataset> {
    let data = match cfg.dataset {
        DatasetKind::Mnist => load_mnist_dir(&cfg.mnist_dir, split)?,
        DatasetKind::Synthetic => {
            let (samples, stream) = match split {
                Split::Train => (cfg.synthetic_samples, TRAIN_DATA_STREAM),
                Split::Test => (cfg.synthetic_test_samples, TEST_DATA_STREAM),
            };
            let shape = [1, cfg.synthetic_size, cfg.synthetic_size];
            let spec = SyntheticSpec {
                noise: cfg.synthetic_noise,
                ..SyntheticSpec::new(samples, cfg.synthetic_classes, shape, cfg.seed.wrapping_add(stream))
            };
            make_synthetic(&spec, split)?
        }
    };
    let n = match split {
        Split::Train => cfg.train_subset,
        Split::Test => cfg.test_subset,
    };
    Ok(if n == 0 || n >= data.len() { data } else { data.take(n) })
}

/// Training and test sets named by the configuration.
pub fn load_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    Ok((load_split(cfg, Split::Train)?, load_split(cfg, Split::Test)?))
}

/// The seeded, untrained model for a dataset.
pub fn build_model(cfg: &RunConfig, data: &Dataset) -> Result<ModelGraph> {
    let shape = data.sample_shape();
    match cfg.preset {
        Preset::MnistCnn => {
            if shape != [1, 28, 28] || data.classes != MNIST_CLASSES {
                return Err(ConfigError::Invalid {
                    field: "preset",
                    reason: format!(
                        "mnist-cnn needs 1x28x28 inputs and {MNIST_CLASSES} classes, data has {shape:?} and {}",
                        data.classes
                    ),
                }
                .into());
            }
            Ok(presets::mnist_cnn(cfg.seed)?)
        }
        Preset::ToyCnn => Ok(presets::toy_cnn(shape, data.classes, cfg.seed)?),
    }
}

/// Runs a method on loaded data and writes its outputs to `cfg.out`.
pub fn execute(method: Method, cfg: &RunConfig, train: &Dataset, test: &Dataset) -> Result<RunSummary> {
    cfg.validate()?;
    let model = build_model(cfg, train)?;
    let initial_rng = Rng::with_stream(cfg.seed, DATA_STREAM).state();
    let tc = cfg.train_config();
    let data = RunData {
        train,
        test: Some(test),
    };
    let run = match method {
        Method::Train => {
            let mut schedule = cfg.schedule();
            schedule.ratios.clear();
            iplt_run(model, &schedule, cfg.epochs, &tc, data)?
        }
        Method::Iplt => iplt_run(model, &cfg.schedule(), cfg.epochs, &tc, data)?,
        Method::Traditional => traditional_run(model, &cfg.traditional_plan(), &tc, data)?,
    };
    let report = PruneReport::build(&run.initial, &run.model)?;

    let out = cfg.out.clone();
    std::fs::create_dir_all(&out).map_err(io_err(&out))?;
    let initial = Checkpoint {
        model: run.initial.clone(),
        rng: initial_rng,
    };
    save_checkpoint(&out.join("initial.ckpt"), &initial)?;
    let last = Checkpoint {
        model: run.model.clone(),
        rng: run.rng,
    };
    save_checkpoint(&out.join("model.ckpt"), &last)?;
    write_file(&out.join("run_log.csv"), run.log.to_csv().as_bytes())?;
    write_file(&out.join("report.txt"), render_text(&report).as_bytes())?;
    write_file(&out.join("report.csv"), render_csv(&report).as_bytes())?;
    write_file(&out.join("config.txt"), cfg.to_text().as_bytes())?;
    Ok(RunSummary { out, run, report })
}

fn run_method(method: Method, cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let (train, test) = load_data(cfg)?;
    execute(method, cfg, &train, &test)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<RunSummary> {
    run_method(Method::Train, cfg)
}

pub fn cmd_iplt(cfg: &RunConfig) -> Result<RunSummary> {
    run_method(Method::Iplt, cfg)
}

pub fn cmd_traditional(cfg: &RunConfig) -> Result<RunSummary> {
    run_method(Method::Traditional, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub accuracy: f64,
    pub samples: usize,
}

/// Test accuracy of a stored model on the configured test set.
pub fn cmd_eval(checkpoint: &Path, cfg: &RunConfig) -> Result<EvalSummary> {
    let ckpt = load_checkpoint(checkpoint)?;
    cfg.validate()?;
    let test = load_split(cfg, Split::Test)?;
    let accuracy = evaluate(&ckpt.model, &test, cfg.train_config().eval_batch)?;
    Ok(EvalSummary {
        accuracy,
        samples: test.len(),
    })
}

/// A finished run read back from its output directory.
#[derive(Debug, Clone)]
pub struct StoredRun {
    pub dir: PathBuf,
    pub report: PruneReport,
    pub log: RunLog,
}

impl StoredRun {
    pub fn load(dir: &Path) -> Result<Self> {
        let initial = load_checkpoint(&dir.join("initial.ckpt"))?;
        let last = load_checkpoint(&dir.join("model.ckpt"))?;
        let report = PruneReport::build(&initial.model, &last.model)?;
        let path = dir.join("run_log.csv");
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let log = RunLog::parse(&text).map_err(|detail| HarnessError::RunLog { path, detail })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            report,
            log,
        })
    }

    pub fn label(&self) -> String {
        self.dir
            .file_name()
            .map_or_else(|| self.dir.display().to_string(), |n| n.to_string_lossy().into_owned())
    }

    pub fn comparison_row(&self) -> ComparisonRow {
        ComparisonRow {
            label: self.label(),
            fpr_all: self.report.fpr_all(),
            ppr_all: self.report.ppr_all(),
            accuracy: self.log.final_accuracy().unwrap_or(f64::NAN),
            train_macs: self.log.last().map_or(0, |r| r.cum_train_macs),
        }
    }
}

/// Per-run reports followed by a comparison table across the runs.
pub fn cmd_report(dirs: &[PathBuf]) -> Result<String> {
    let runs = dirs.iter().map(|d| StoredRun::load(d)).collect::<Result<Vec<_>>>()?;
    let mut out = String::new();
    for run in &runs {
        out.push_str(&format!("## {}\n", run.label()));
        out.push_str(&render_text(&run.report));
        out.push('\n');
    }
    let rows: Vec<ComparisonRow> = runs.iter().map(StoredRun::comparison_row).collect();
    out.push_str(&render_comparison(&rows));
    Ok(out)
}
