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

//! Append-only run log.
//!
//! One `train` row per epoch, one `prune` row per selected filter (a single
//! row with empty layer/filter/norm when an event selects nothing) and one
//! `rebuild` row when masked filters are physically removed. Ratios are
//! fractions with six decimals, norms carry nine decimals, empty cells mean
//! "not applicable". `cum_train_macs` is the running training cost, counted
//! as three forward passes (forward, input gradient, weight gradient) per
//! training sample over the model as stored.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

pub const RUN_LOG_HEADER: &str =
    "epoch,event_type,layer,filter,norm,fpr_all,ppr_all,train_loss,test_acc,cum_train_macs";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Train,
    Prune,
    Rebuild,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Train => "train",
            EventKind::Prune => "prune",
            EventKind::Rebuild => "rebuild",
        })
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(EventKind::Train),
            "prune" => Ok(EventKind::Prune),
            "rebuild" => Ok(EventKind::Rebuild),
            _ => Err(format!("unknown event type '{s}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub epoch: u32,
    pub kind: EventKind,
    pub layer: Option<usize>,
    pub filter: Option<usize>,
    pub norm: Option<f64>,
    pub fpr_all: f64,
    pub ppr_all: f64,
    pub train_loss: Option<f64>,
    pub test_acc: Option<f64>,
    pub cum_train_macs: u64,
}

fn opt<T>(v: Option<T>, f: impl Fn(T) -> String) -> String {
    v.map(f).unwrap_or_default()
}

impl fmt::Display for LogRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{:.6},{:.6},{},{},{}",
            self.epoch,
            self.kind,
            opt(self.layer, |v| v.to_string()),
            opt(self.filter, |v| v.to_string()),
            opt(self.norm, |v| format!("{v:.9}")),
            self.fpr_all,
            self.ppr_all,
            opt(self.train_loss, |v| format!("{v:.6}")),
            opt(self.test_acc, |v| format!("{v:.6}")),
            self.cum_train_macs
        )
    }
}

fn cell<T: FromStr>(s: &str, name: &str) -> Result<Option<T>, String> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| format!("bad {name} '{s}'"))
}

fn required<T: FromStr>(s: &str, name: &str) -> Result<T, String> {
    cell(s, name)?.ok_or_else(|| format!("missing {name}"))
}

impl FromStr for LogRow {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(format!("expected 10 columns, got {}", f.len()));
        }
        Ok(LogRow {
            epoch: required(f[0], "epoch")?,
            kind: f[1].parse()?,
            layer: cell(f[2], "layer")?,
            filter: cell(f[3], "filter")?,
            norm: cell(f[4], "norm")?,
            fpr_all: required(f[5], "fpr_all")?,
            ppr_all: required(f[6], "ppr_all")?,
            train_loss: cell(f[7], "train_loss")?,
            test_acc: cell(f[8], "test_acc")?,
            cum_train_macs: required(f[9], "cum_train_macs")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub rows: Vec<LogRow>,
}

impl RunLog {
    pub fn push(&mut self, row: LogRow) {
        self.rows.push(row);
    }

    /// Epochs at which prune events happened, in order, without repeats.
    pub fn prune_epochs(&self) -> Vec<u32> {
        let mut out: Vec<u32> = Vec::new();
        for r in self.rows.iter().filter(|r| r.kind == EventKind::Prune) {
            if out.last() != Some(&r.epoch) {
                out.push(r.epoch);
            }
        }
        out
    }

    pub fn last(&self) -> Option<&LogRow> {
        self.rows.last()
    }

    /// Latest recorded test accuracy.
    pub fn final_accuracy(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.test_acc)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{RUN_LOG_HEADER}\n");
        for r in &self.rows {
            writeln!(s, "{r}").unwrap();
        }
        s
    }

    /// Reads a log written by [`RunLog::to_csv`]. Values come back rounded
    /// to the printed precision.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        if lines.next() != Some(RUN_LOG_HEADER) {
            return Err("missing run log header".into());
        }
        let rows = lines
            .enumerate()
            .map(|(i, l)| l.parse().map_err(|e| format!("row {}: {e}", i + 1)))
            .collect::<Result<_, String>>()?;
        Ok(Self { rows })
    }
}
