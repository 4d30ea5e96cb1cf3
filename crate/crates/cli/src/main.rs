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

//! `iplt` command-line runner.
//!
//! Every failure prints exactly one line, `error[CODE]: message`, to stderr
//! and exits with status 1 (2 for usage errors).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use iplt_core::harness::{self, ConfigError, HarnessError, RunConfig};

#[derive(Parser)]
#[command(
    name = "iplt",
    version,
    about = "Structured filter pruning experiments on small CNNs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a baseline model without pruning.
    Train(RunArgs),
    /// Prune on the schedule during early training, rebuild, keep training.
    Iplt(RunArgs),
    /// Pretrain, then prune and retrain at each ratio.
    Traditional(RunArgs),
    /// Test accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Reports for finished runs and a comparison table.
    Report {
        /// Run output directories.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also write the output to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Flags mirror the configuration keys and override the config file.
#[derive(Args)]
struct RunArgs {
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// MNIST with k=2 and ratios 10%..70%.
    #[arg(long)]
    mnist_schedule: bool,
    #[arg(long)]
    seed: Option<String>,
    /// mnist-cnn or toy-cnn.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    momentum: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    eval_every: Option<String>,
    #[arg(long)]
    k: Option<String>,
    /// Comma-separated fractions or percentages, e.g. 0.1,0.2 or 10%,20%.
    #[arg(long, allow_hyphen_values = true)]
    ratios: Option<String>,
    /// global or intra.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    norm_p: Option<String>,
    /// Never leave a layer with this many alive filters or fewer.
    #[arg(long)]
    min_filters: Option<String>,
    #[arg(long)]
    pretrain_epochs: Option<String>,
    #[arg(long)]
    retrain_epochs: Option<String>,
    /// mnist or synthetic.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    mnist_dir: Option<String>,
    #[arg(long)]
    train_subset: Option<String>,
    #[arg(long)]
    test_subset: Option<String>,
    #[arg(long)]
    synthetic_samples: Option<String>,
    #[arg(long)]
    synthetic_test_samples: Option<String>,
    #[arg(long)]
    synthetic_classes: Option<String>,
    #[arg(long)]
    synthetic_size: Option<String>,
    #[arg(long)]
    synthetic_noise: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
}

impl RunArgs {
    fn flag_pairs(&self) -> Vec<(String, String)> {
        let fields = [
            ("seed", &self.seed),
            ("preset", &self.preset),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("lr", &self.lr),
            ("momentum", &self.momentum),
            ("weight_decay", &self.weight_decay),
            ("eval_every", &self.eval_every),
            ("k", &self.k),
            ("ratios", &self.ratios),
            ("mode", &self.mode),
            ("norm_p", &self.norm_p),
            ("min_filters", &self.min_filters),
            ("pretrain_epochs", &self.pretrain_epochs),
            ("retrain_epochs", &self.retrain_epochs),
            ("dataset", &self.dataset),
            ("mnist_dir", &self.mnist_dir),
            ("train_subset", &self.train_subset),
            ("test_subset", &self.test_subset),
            ("synthetic_samples", &self.synthetic_samples),
            ("synthetic_test_samples", &self.synthetic_test_samples),
            ("synthetic_classes", &self.synthetic_classes),
            ("synthetic_size", &self.synthetic_size),
            ("synthetic_noise", &self.synthetic_noise),
            ("out", &self.out),
        ];
        let mut pairs: Vec<(String, String)> = fields
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect();
        if self.mnist_schedule {
            pairs.push(("mnist_schedule".into(), "true".into()));
        }
        pairs
    }

    fn resolve(&self) -> Result<RunConfig, HarnessError> {
        let mut pairs = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
                    path: path.clone(),
                    source,
                })?;
                harness::parse_config_text(&text).map_err(|e| match e {
                    ConfigError::Syntax { line, detail } => ConfigError::Syntax {
                        line,
                        detail: format!("{}: {detail}", path.display()),
                    },
                    other => other,
                })?
            }
            None => Vec::new(),
        };
        pairs.extend(self.flag_pairs());
        Ok(RunConfig::from_pairs(&pairs)?)
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train(args) => println!("{}", harness::cmd_train(&args.resolve()?)?.headline()),
        Command::Iplt(args) => println!("{}", harness::cmd_iplt(&args.resolve()?)?.headline()),
        Command::Traditional(args) => println!("{}", harness::cmd_traditional(&args.resolve()?)?.headline()),
        Command::Eval { checkpoint, run } => {
            let s = harness::cmd_eval(&checkpoint, &run.resolve()?)?;
            println!("accuracy {:.6} on {} samples", s.accuracy, s.samples);
        }
        Command::Report { runs, out } => {
            let text = harness::cmd_report(&runs)?;
            if let Some(path) = out {
                std::fs::write(&path, &text).map_err(|source| HarnessError::Io { path, source })?;
            }
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            let first = first.strip_prefix("error: ").unwrap_or(first);
            eprintln!("error[E_USAGE]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::FAILURE
        }
    }
}
