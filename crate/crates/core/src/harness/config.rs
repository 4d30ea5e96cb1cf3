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

//! Run configuration.
//!
//! A configuration is built from `key=value` pairs applied in order over the
//! defaults, so later pairs win: the harness feeds the config file first and
//! command-line flags after it. Keys accept `-` or `_`. The config file
//! allows blank lines and `#` comments.
//!
//! `mnist_schedule=true` is applied before every other key and selects the
//! mnist-cnn preset on MNIST with `k=2` and ratios `0.1,...,0.7`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::pruner::{validate_ratios, ComparisonMode, PruneSchedule, TraditionalPlan};
use crate::tensor::SgdConfig;
use crate::train::TrainConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {detail}")]
    Syntax { line: usize, detail: String },
    #[error("unknown field '{0}'")]
    UnknownField(String),
    #[error("field '{field}': cannot parse '{value}': {reason}")]
    Value {
        field: String,
        value: String,
        reason: String,
    },
    #[error("field '{field}': {reason}")]
    Invalid { field: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    MnistCnn,
    ToyCnn,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::MnistCnn => crate::model::presets::MNIST_CNN,
            Preset::ToyCnn => crate::model::presets::TOY_CNN,
        }
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mnist-cnn" => Ok(Preset::MnistCnn),
            "toy-cnn" => Ok(Preset::ToyCnn),
            _ => Err("expected mnist-cnn or toy-cnn".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Synthetic,
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mnist" => Ok(DatasetKind::Mnist),
            "synthetic" => Ok(DatasetKind::Synthetic),
            _ => Err("expected mnist or synthetic".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub preset: Preset,
    /// Epoch budget of `train` and `iplt`.
    pub epochs: u32,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub eval_every: u32,
    pub k: u32,
    pub ratios: Vec<f64>,
    pub mode: ComparisonMode,
    pub norm_p: f64,
    pub min_filters: usize,
    pub pretrain_epochs: u32,
    pub retrain_epochs: u32,
    pub dataset: DatasetKind,
    pub mnist_dir: PathBuf,
    /// 0 keeps every sample.
    pub train_subset: usize,
    pub test_subset: usize,
    pub synthetic_samples: usize,
    pub synthetic_test_samples: usize,
    pub synthetic_classes: usize,
    pub synthetic_size: usize,
    pub synthetic_noise: f64,
    pub out: PathBuf,
}

pub fn mnist_schedule_ratios() -> Vec<f64> {
    (1..=7).map(|i| f64::from(i) / 10.0).collect()
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            preset: Preset::MnistCnn,
            epochs: 20,
            batch_size: 64,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            eval_every: 1,
            k: 2,
            ratios: mnist_schedule_ratios(),
            mode: ComparisonMode::Global,
            norm_p: 2.0,
            min_filters: 0,
            pretrain_epochs: 10,
            retrain_epochs: 2,
            dataset: DatasetKind::Mnist,
            mnist_dir: PathBuf::from("data/mnist"),
            train_subset: 0,
            test_subset: 0,
            synthetic_samples: 512,
            synthetic_test_samples: 256,
            synthetic_classes: 4,
            synthetic_size: 12,
            synthetic_noise: 0.1,
            out: PathBuf::from("runs/latest"),
        }
    }
}

/// Parses `key=value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                line: i + 1,
                detail: format!("expected key=value, got '{line}'"),
            });
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line: i + 1,
                detail: "empty key".into(),
            });
        }
        pairs.push((key.to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

fn parse<T: FromStr>(field: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        field: field.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn parse_bool(field: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" | "" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(ConfigError::Value {
            field: field.to_string(),
            value: value.to_string(),
            reason: "expected true or false".into(),
        }),
    }
}

/// Comma-separated fractions (`0.1`) or percentages (`10%`).
pub fn parse_ratios(field: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| match s.strip_suffix('%') {
            Some(p) => parse::<f64>(field, p.trim()).map(|v| v / 100.0),
            None => parse::<f64>(field, s),
        })
        .collect()
}

impl RunConfig {
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let norm = |k: &str| k.trim().replace('-', "_");
        for (k, v) in pairs {
            if norm(k) == "mnist_schedule" && parse_bool("mnist_schedule", v)? {
                cfg.preset = Preset::MnistCnn;
                cfg.dataset = DatasetKind::Mnist;
                cfg.k = 2;
                cfg.ratios = mnist_schedule_ratios();
            }
        }
        for (k, v) in pairs {
            cfg.set(&norm(k), v.trim())?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "mnist_schedule" => {}
            "seed" => self.seed = parse(key, v)?,
            "preset" => self.preset = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "k" => self.k = parse(key, v)?,
            "ratios" => self.ratios = parse_ratios(key, v)?,
            "mode" => self.mode = parse(key, v)?,
            "norm_p" => self.norm_p = parse(key, v)?,
            "min_filters" => self.min_filters = parse(key, v)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, v)?,
            "retrain_epochs" => self.retrain_epochs = parse(key, v)?,
            "dataset" => self.dataset = parse(key, v)?,
            "mnist_dir" => self.mnist_dir = PathBuf::from(v),
            "train_subset" => self.train_subset = parse(key, v)?,
            "test_subset" => self.test_subset = parse(key, v)?,
            "synthetic_samples" => self.synthetic_samples = parse(key, v)?,
            "synthetic_test_samples" => self.synthetic_test_samples = parse(key, v)?,
            "synthetic_classes" => self.synthetic_classes = parse(key, v)?,
            "synthetic_size" => self.synthetic_size = parse(key, v)?,
            "synthetic_noise" => self.synthetic_noise = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            _ => return Err(ConfigError::UnknownField(key.to_string())),
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Vec<(String, String)>, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Syntax {
            line: 0,
            detail: format!("{}: {e}", path.display()),
        })?;
        parse_config_text(&text)
    }

    /// Checks every field that does not depend on the chosen command.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field: &'static str, reason: String| Err(ConfigError::Invalid { field, reason });
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr", format!("{} must be positive", self.lr));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return bad("momentum", format!("{} must be in [0, 1)", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay", format!("{} must be >= 0", self.weight_decay));
        }
        if self.k == 0 {
            return bad("k", "must be at least 1".into());
        }
        if let Err(e) = validate_ratios(&self.ratios) {
            return bad("ratios", e.to_string());
        }
        if !(self.norm_p.is_finite() && self.norm_p > 0.0) {
            return bad("norm_p", format!("{} must be positive", self.norm_p));
        }
        match self.dataset {
            DatasetKind::Mnist => {
                for name in [
                    "train-images-idx3-ubyte",
                    "train-labels-idx1-ubyte",
                    "t10k-images-idx3-ubyte",
                    "t10k-labels-idx1-ubyte",
                ] {
                    let p = self.mnist_dir.join(name);
                    if !p.is_file() {
                        return bad("mnist_dir", format!("{} does not exist", p.display()));
                    }
                }
            }
            DatasetKind::Synthetic => {
                if self.synthetic_samples == 0 {
                    return bad("synthetic_samples", "must be at least 1".into());
                }
                if self.synthetic_test_samples == 0 {
                    return bad("synthetic_test_samples", "must be at least 1".into());
                }
                if self.synthetic_classes < 2 {
                    return bad("synthetic_classes", "must be at least 2".into());
                }
                if self.synthetic_size < 4 {
                    return bad("synthetic_size", "must be at least 4".into());
                }
                if !(self.synthetic_noise.is_finite() && self.synthetic_noise >= 0.0) {
                    return bad("synthetic_noise", "must be >= 0".into());
                }
            }
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            sgd: SgdConfig {
                lr: self.lr,
                momentum: self.momentum,
                weight_decay: self.weight_decay,
                checked: true,
            },
            eval_every: self.eval_every,
            eval_batch: 256,
        }
    }

    pub fn schedule(&self) -> PruneSchedule {
        PruneSchedule {
            k: self.k,
            ratios: self.ratios.clone(),
            mode: self.mode,
            norm_p: self.norm_p,
            min_filters: self.min_filters,
        }
    }

    pub fn traditional_plan(&self) -> TraditionalPlan {
        TraditionalPlan {
            pretrain_epochs: self.pretrain_epochs,
            retrain_epochs: self.retrain_epochs,
            ratios: self.ratios.clone(),
            mode: self.mode,
            norm_p: self.norm_p,
            min_filters: self.min_filters,
        }
    }

    /// Canonical `key=value` listing of every field; parsing it back gives
    /// the same configuration.
    pub fn to_text(&self) -> String {
        let preset = match self.preset {
            Preset::MnistCnn => "mnist-cnn",
            Preset::ToyCnn => "toy-cnn",
        };
        let dataset = match self.dataset {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Synthetic => "synthetic",
        };
        let ratios: Vec<String> = self.ratios.iter().map(|r| r.to_string()).collect();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").unwrap();
        kv("seed", self.seed.to_string());
        kv("preset", preset.into());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("lr", self.lr.to_string());
        kv("momentum", self.momentum.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv("k", self.k.to_string());
        kv("ratios", ratios.join(","));
        kv("mode", self.mode.to_string());
        kv("norm_p", self.norm_p.to_string());
        kv("min_filters", self.min_filters.to_string());
        kv("pretrain_epochs", self.pretrain_epochs.to_string());
        kv("retrain_epochs", self.retrain_epochs.to_string());
        kv("dataset", dataset.into());
        kv("mnist_dir", self.mnist_dir.display().to_string());
        kv("train_subset", self.train_subset.to_string());
        kv("test_subset", self.test_subset.to_string());
        kv("synthetic_samples", self.synthetic_samples.to_string());
        kv("synthetic_test_samples", self.synthetic_test_samples.to_string());
        kv("synthetic_classes", self.synthetic_classes.to_string());
        kv("synthetic_size", self.synthetic_size.to_string());
        kv("synthetic_noise", self.synthetic_noise.to_string());
        kv("out", self.out.display().to_string());
        s
    }
}
