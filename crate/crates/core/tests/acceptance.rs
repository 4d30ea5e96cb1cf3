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

//! Acceptance suite: one `PASS`/`FAIL` line per criterion.
//!
//! C6 and C7 train the mnist-cnn preset on MNIST (`IPLT_MNIST_DIR`, default
//! `data/mnist`) and take about an hour on one core; their run directories
//! are kept under `target/acceptance`. `IPLT_ACCEPT_SKIP_MNIST=1` skips
//! them and reports both as failed.

mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::{mask_counts, oracle_select, random_mask, random_model, structural_counts, OracleOutcome, GRAD_OPS};
use iplt_core::data::{make_synthetic, Dataset, Split, SyntheticSpec};
use iplt_core::harness::{cmd_report, execute, load_split, Method, RunConfig, RunSummary, StoredRun};
use iplt_core::metrics::{compute_flops, compute_fpr, compute_ppr, effective_flops, render_comparison, PruneReport};
use iplt_core::model::{Layer, ModelBuilder};
use iplt_core::pruner::{iplt_run, select_filters, ComparisonMode, PruneError, PruneSchedule, RunData};
use iplt_core::tensor::{Rng, Tensor};
use iplt_core::train::TrainConfig;

/// Training samples used from the 60k MNIST training set.
const MNIST_TRAIN_SUBSET: usize = 30_000;
const MNIST_EPOCHS: u32 = 20;
const MNIST_K: u32 = 2;

type Outcome = Result<String, String>;

struct Report {
    failed: usize,
}

impl Report {
    fn record(&mut self, id: &str, title: &str, started: Instant, outcome: Outcome) {
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {id} {title}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                self.failed += 1;
                println!("FAIL {id} {title}: {detail} [{secs:.1}s]");
            }
        }
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(started: Instant, budget: Duration, what: &str) -> Result<(), String> {
    check(started.elapsed() <= budget, || {
        format!(
            "{what} took {:.0}s, budget {}s",
            started.elapsed().as_secs_f64(),
            budget.as_secs()
        )
    })
}

fn c1_selection_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = Rng::with_stream(11, 30);
    let mut collapses = 0;
    for case in 0..200 {
        let mut model = random_model(&mut rng);
        model.set_mask(random_mask(&model, &mut rng)).unwrap();
        let target = rng.below(95) as f64 / 100.0;
        let p = [1.0, 2.0][rng.below(2)];
        let guard = [0, 1][rng.below(2)];
        for mode in [ComparisonMode::Global, ComparisonMode::IntraLayer] {
            let schedule = PruneSchedule {
                norm_p: p,
                min_filters: guard,
                ..PruneSchedule::new(1, vec![0.5], mode)
            };
            let got = match select_filters(&model, &schedule, target) {
                Ok(s) => OracleOutcome::Picks(s.pairs()),
                Err(PruneError::LayerCollapse { layer, .. }) => OracleOutcome::Collapse(layer),
                Err(e) => return Err(format!("case {case}: {e}")),
            };
            let want = oracle_select(&model, mode, p, target, guard);
            collapses += usize::from(matches!(want, OracleOutcome::Collapse(_)));
            check(got == want, || {
                format!("case {case} {mode} target {target}: {got:?} vs oracle {want:?}")
            })?;
        }
    }
    within(started, Duration::from_secs(60), "selection")?;
    Ok(format!(
        "400 selections equal the oracle ({collapses} of them collapses)"
    ))
}

fn c2_mask_rebuild() -> Outcome {
    let started = Instant::now();
    let mut rng = Rng::with_stream(12, 30);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let mut model = random_model(&mut rng);
        for layer in &mut model.layers {
            if let Layer::BatchNorm(bn) = layer {
                bn.running_mean = Tensor::randn(bn.running_mean.shape(), 1.0, &mut rng);
                bn.running_var = Tensor::filled(bn.running_var.shape(), 0.5 + rng.uniform());
            }
        }
        model.set_mask(random_mask(&model, &mut rng)).unwrap();
        let rebuilt = model.rebuild().map_err(|e| format!("case {case}: {e}"))?;
        let [c, h, w] = model.input_shape;
        for _ in 0..20 {
            let x = Tensor::randn(&[1, c, h, w], 1.0, &mut rng);
            let gap = model
                .forward_eval(&x)
                .unwrap()
                .max_abs_diff(&rebuilt.forward_eval(&x).unwrap());
            check(gap <= 1e-9, || format!("case {case}: gap {gap:e}"))?;
            worst = worst.max(gap);
        }
    }
    within(started, Duration::from_secs(120), "rebuild checks")?;
    Ok(format!("50 models x 20 inputs, max gap {worst:e}"))
}

fn c3_gradients() -> Outcome {
    let started = Instant::now();
    let mut parts = Vec::new();
    for (name, op) in GRAD_OPS {
        let mut worst = 0.0f64;
        for case in 0..100 {
            let err = op(&mut Rng::with_stream(case, 31));
            check(err <= 1e-4, || format!("{name} case {case}: relative error {err:e}"))?;
            worst = worst.max(err);
        }
        parts.push(format!("{name} {worst:.1e}"));
    }
    within(started, Duration::from_secs(120), "gradient checks")?;
    Ok(format!("100 cases per op, worst: {}", parts.join(", ")))
}

fn c4_accounting() -> Outcome {
    let mut rng = Rng::with_stream(13, 30);
    for case in 0..100 {
        let before = random_model(&mut rng);
        let mut masked = before.clone();
        masked.set_mask(random_mask(&before, &mut rng)).unwrap();
        let rebuilt = masked.rebuild().unwrap();
        let (p0, m0) = structural_counts(&before);
        let (p1, m1) = structural_counts(&rebuilt);
        let (pruned, total) = mask_counts(&masked);
        for (view, after) in [("mask", &masked), ("rebuilt", &rebuilt)] {
            let fpr = compute_fpr(&before, after).unwrap();
            let ppr = compute_ppr(&before, after).unwrap();
            let report = PruneReport::build(&before, after).unwrap();
            check((fpr.pruned, fpr.total) == (pruned, total), || {
                format!("case {case} {view}: filters")
            })?;
            check((ppr.before, ppr.after) == (p0, p1), || {
                format!("case {case} {view}: params")
            })?;
            check((report.macs_before, report.macs_after) == (m0, m1), || {
                format!("case {case} {view}: MACs")
            })?;
        }
        check(compute_flops(&rebuilt).unwrap().macs == m1, || {
            format!("case {case}: structural MACs")
        })?;
        check(effective_flops(&masked).unwrap().macs == m1, || {
            format!("case {case}: masked MACs")
        })?;
        check(
            PruneReport::build(&before, &masked).unwrap() == PruneReport::build(&before, &rebuilt).unwrap(),
            || format!("case {case}: mask and rebuilt views differ"),
        )?;
    }
    Ok("100 scenarios: filters, params and MACs equal the structural counts in both views".into())
}

fn small_synthetic(samples: usize, classes: usize, seed: u64) -> (Dataset, Dataset) {
    let spec = SyntheticSpec::new(samples, classes, [1, 12, 12], seed);
    (
        make_synthetic(&spec, Split::Train).unwrap(),
        make_synthetic(
            &SyntheticSpec {
                samples: samples / 2,
                seed: seed + 1,
                ..spec
            },
            Split::Test,
        )
        .unwrap(),
    )
}

fn c5_schedule_trace() -> Outcome {
    let schedule = PruneSchedule {
        min_filters: 1,
        ..PruneSchedule::new(
            5,
            (1..=7).map(|i| f64::from(i) / 10.0).collect(),
            ComparisonMode::Global,
        )
    };
    let (train, test) = small_synthetic(48, 3, 5);
    let model = iplt_core::model::presets::toy_cnn([1, 12, 12], 3, 5).unwrap();
    let cfg = TrainConfig {
        batch_size: 16,
        eval_every: 0,
        ..TrainConfig::default()
    };
    let out = iplt_run(
        model,
        &schedule,
        45,
        &cfg,
        RunData {
            train: &train,
            test: Some(&test),
        },
    )
    .map_err(|e| e.to_string())?;
    let epochs = out.log.prune_epochs();
    check(epochs == vec![5, 10, 15, 20, 25, 30, 35], || {
        format!("prune events at {epochs:?}")
    })?;
    Ok(format!("45-epoch run logged prune events at {epochs:?}"))
}

/// Two conv layers: 2 filters with tiny weights, then 30 ordinary ones.
fn skewed_model() -> iplt_core::model::ModelGraph {
    let mut m = ModelBuilder::new("skewed", [1, 12, 12])
        .conv(2, 3, 1, 1)
        .relu()
        .max_pool(2, 2)
        .conv(30, 3, 1, 1)
        .relu()
        .max_pool(2, 2)
        .flatten()
        .linear(3)
        .build(8)
        .unwrap();
    if let Layer::Conv(p) = &mut m.layers[0] {
        for w in p.weights.data_mut() {
            *w *= 1e-3;
        }
    }
    m
}

fn c8_layer_collapse() -> Outcome {
    let (train, test) = small_synthetic(48, 3, 8);
    let cfg = TrainConfig {
        batch_size: 16,
        eval_every: 0,
        ..TrainConfig::default()
    };
    let data = RunData {
        train: &train,
        test: Some(&test),
    };
    let unguarded = PruneSchedule::new(1, vec![0.9], ComparisonMode::Global);
    match iplt_run(skewed_model(), &unguarded, 2, &cfg, data) {
        Err(PruneError::LayerCollapse {
            layer: 0,
            epoch: Some(1),
            ..
        }) => {}
        other => return Err(format!("expected collapse of layer 0 at epoch 1, got {other:?}")),
    }
    let guarded = PruneSchedule {
        min_filters: 1,
        ..unguarded
    };
    let out = iplt_run(skewed_model(), &guarded, 2, &cfg, data).map_err(|e| format!("guarded run: {e}"))?;
    let alive: Vec<usize> = out
        .model
        .conv_layers()
        .into_iter()
        .map(|i| out.model.conv(i).unwrap().out_channels())
        .collect();
    check(alive.iter().all(|&n| n >= 1), || format!("empty layer: {alive:?}"))?;
    Ok(format!(
        "unguarded run collapses layer 0; guarded run ends with {alive:?} filters per conv layer"
    ))
}

fn c9_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |name: &str| -> Result<PathBuf, String> {
        let out = dir.path().join(name);
        let text = format!(
            "dataset=synthetic\npreset=toy-cnn\nsynthetic_samples=128\nsynthetic_test_samples=64\n\
             epochs=6\nk=2\nratios=0.2,0.4\nseed=9\nout={}",
            out.display()
        );
        let cfg = RunConfig::from_pairs(&iplt_core::harness::parse_config_text(&text).unwrap()).unwrap();
        iplt_core::harness::cmd_iplt(&cfg).map_err(|e| e.line())?;
        Ok(out)
    };
    let (a, b) = (run("a")?, run("b")?);
    for f in ["run_log.csv", "model.ckpt", "initial.ckpt", "report.csv"] {
        let same = std::fs::read(a.join(f)).ok() == std::fs::read(b.join(f)).ok();
        check(same, || format!("{f} differs between identical runs"))?;
    }
    Ok("two seeded iplt runs wrote byte-identical logs, checkpoints and reports".into())
}

// ------------------------------------------------------------------ MNIST

struct Mnist {
    train: Dataset,
    test: Dataset,
    root: PathBuf,
    mnist_dir: PathBuf,
}

impl Mnist {
    fn config(&self, name: &str, extra: &str) -> RunConfig {
        let text = format!(
            "dataset=mnist\npreset=mnist-cnn\nmnist_dir={}\ntrain_subset={MNIST_TRAIN_SUBSET}\n\
             epochs={MNIST_EPOCHS}\nk={MNIST_K}\neval_every=0\nseed=1\nout={}\n{extra}",
            self.mnist_dir.display(),
            self.root.join(name).display()
        );
        RunConfig::from_pairs(&iplt_core::harness::parse_config_text(&text).unwrap()).unwrap()
    }

    fn run(&self, method: Method, name: &str, extra: &str) -> Result<RunSummary, String> {
        let started = Instant::now();
        let s = execute(method, &self.config(name, extra), &self.train, &self.test).map_err(|e| e.line())?;
        eprintln!("  {name}: {} [{:.0}s]", s.headline(), started.elapsed().as_secs_f64());
        Ok(s)
    }
}

fn ratio_list(target_tenths: u32) -> String {
    (1..=target_tenths)
        .map(|i| format!("{}", f64::from(i) / 10.0))
        .collect::<Vec<_>>()
        .join(",")
}

fn acc(s: &RunSummary) -> f64 {
    s.accuracy().unwrap_or(f64::NAN)
}

fn load_mnist() -> Result<Mnist, String> {
    if std::env::var_os("IPLT_ACCEPT_SKIP_MNIST").is_some() {
        return Err("skipped by IPLT_ACCEPT_SKIP_MNIST".into());
    }
    let mnist_dir = std::env::var("IPLT_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|_| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    let probe = RunConfig::from_pairs(&[
        ("mnist_dir".into(), mnist_dir.display().to_string()),
        ("train_subset".into(), MNIST_TRAIN_SUBSET.to_string()),
    ])
    .unwrap();
    probe
        .validate()
        .map_err(|e| format!("{e} (run scripts/fetch_mnist.sh)"))?;
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance");
    std::fs::create_dir_all(&root).map_err(|e| e.to_string())?;
    Ok(Mnist {
        train: load_split(&probe, Split::Train).map_err(|e| e.to_string())?,
        test: load_split(&probe, Split::Test).map_err(|e| e.to_string())?,
        root,
        mnist_dir,
    })
}

struct C6Runs {
    baseline: RunSummary,
    global50: RunSummary,
    global70: RunSummary,
}

fn c6_mnist(m: &Mnist) -> (Outcome, Option<C6Runs>) {
    let started = Instant::now();
    let runs = (|| -> Result<(RunSummary, RunSummary, RunSummary, RunSummary), String> {
        Ok((
            m.run(Method::Train, "baseline", "")?,
            m.run(Method::Iplt, "iplt-global-50", &format!("ratios={}", ratio_list(5)))?,
            m.run(Method::Iplt, "iplt-global-70", &format!("ratios={}", ratio_list(7)))?,
            m.run(
                Method::Iplt,
                "iplt-intra-70",
                &format!("ratios={}\nmode=intra", ratio_list(7)),
            )?,
        ))
    })();
    let (base, g50, g70, i70) = match runs {
        Ok(r) => r,
        Err(e) => return (Err(e), None),
    };
    let elapsed = started.elapsed();
    let pp = |x: f64| 100.0 * x;
    let summary = format!(
        "baseline {:.2}%, global50 {:.2}% (FPR {:.2}%), global70 {:.2}% (FPR {:.2}%), PPR global70 {:.2}% vs intra70 {:.2}%, {:.0} min",
        pp(acc(&base)),
        pp(acc(&g50)),
        pp(g50.report.fpr_all()),
        pp(acc(&g70)),
        pp(g70.report.fpr_all()),
        pp(g70.report.ppr_all()),
        pp(i70.report.ppr_all()),
        elapsed.as_secs_f64() / 60.0
    );
    let verdict = (|| {
        check(acc(&base) >= 0.985, || {
            format!("(a) baseline {:.2}% < 98.5%", pp(acc(&base)))
        })?;
        check(acc(&g50) >= acc(&base) - 0.005, || {
            format!("(b) global50 is {:.2} pp below baseline", pp(acc(&base) - acc(&g50)))
        })?;
        check(acc(&g70) >= acc(&base) - 0.010, || {
            format!("(c) global70 is {:.2} pp below baseline", pp(acc(&base) - acc(&g70)))
        })?;
        check(g70.report.ppr_all() > i70.report.ppr_all(), || {
            "(d) global PPR not above intra".into()
        })?;
        within(started, Duration::from_secs(45 * 60), "C6 runs")
    })();
    let outcome = match verdict {
        Ok(()) => Ok(summary),
        Err(e) => Err(format!("{e}; {summary}")),
    };
    (
        outcome,
        Some(C6Runs {
            baseline: base,
            global50: g50,
            global70: g70,
        }),
    )
}

fn c7_head_to_head(m: &Mnist, c6: &C6Runs) -> Outcome {
    let mut iplt = vec![
        (5u32, c6.global50.clone()),
        (
            6,
            m.run(Method::Iplt, "iplt-global-60", &format!("ratios={}", ratio_list(6)))?,
        ),
        (7, c6.global70.clone()),
    ];
    iplt.sort_by_key(|r| r.0);
    let mut dirs = vec![c6.baseline.out.clone()];
    let mut findings = Vec::new();
    let mut macs = Vec::new();
    for (tenths, ip) in &iplt {
        // Same ratio list and cadence, shifted behind a pretraining phase so
        // that the total epoch budget matches.
        let retrain = MNIST_K;
        let pretrain = MNIST_EPOCHS - retrain * tenths;
        let tr = m.run(
            Method::Traditional,
            &format!("traditional-global-{}0", tenths),
            &format!(
                "ratios={}\npretrain_epochs={pretrain}\nretrain_epochs={retrain}",
                ratio_list(*tenths)
            ),
        )?;
        check(tr.run.model.epoch == MNIST_EPOCHS, || {
            format!("traditional budget {}", tr.run.model.epoch)
        })?;
        check(ip.report.fpr_all() == tr.report.fpr_all(), || {
            format!("{tenths}0%: FPR differs between methods")
        })?;
        check(ip.run.train_macs < tr.run.train_macs, || {
            format!(
                "{tenths}0%: IPLT MACs {} not below traditional {}",
                ip.run.train_macs, tr.run.train_macs
            )
        })?;
        let gap = 100.0 * (acc(ip) - acc(&tr));
        let ordered = acc(ip) >= acc(&tr) - 0.005;
        findings.push(format!(
            "{tenths}0%: IPLT {:.2}% vs traditional {:.2}% ({gap:+.2} pp{})",
            100.0 * acc(ip),
            100.0 * acc(&tr),
            if ordered {
                ""
            } else {
                ", FINDING: ordering not reproduced"
            }
        ));
        macs.push(format!("{:.2}x", tr.run.train_macs as f64 / ip.run.train_macs as f64));
        dirs.push(ip.out.clone());
        dirs.push(tr.out.clone());
    }

    // Report integrity: the stored runs reproduce the logged totals.
    let text = cmd_report(&dirs).map_err(|e| e.line())?;
    for d in &dirs {
        let run = StoredRun::load(d).map_err(|e| e.line())?;
        let last = run.log.last().ok_or("empty run log")?;
        let row = run.comparison_row();
        check(format!("{:.6}", row.fpr_all) == format!("{:.6}", last.fpr_all), || {
            format!("{}: FPR", run.label())
        })?;
        check(format!("{:.6}", row.ppr_all) == format!("{:.6}", last.ppr_all), || {
            format!("{}: PPR", run.label())
        })?;
        check(row.train_macs == last.cum_train_macs, || {
            format!("{}: MACs", run.label())
        })?;
        check(text.contains(&run.label()), || {
            format!("{} missing from report", run.label())
        })?;
    }
    let rows: Vec<_> = dirs
        .iter()
        .map(|d| StoredRun::load(d).unwrap().comparison_row())
        .collect();
    let table = render_comparison(&rows);
    std::fs::write(m.root.join("comparison.txt"), &table).map_err(|e| e.to_string())?;
    for line in table.lines() {
        println!("    {line}");
    }
    Ok(format!(
        "IPLT training MACs below traditional at every target (traditional/IPLT = {}); {}",
        macs.join(", "),
        findings.join("; ")
    ))
}

fn main() {
    // Accept and ignore libtest flags such as `--nocapture`.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut report = Report { failed: 0 };
    let t = Instant::now();
    report.record("C1", "selection equals brute-force oracle", t, c1_selection_oracle());
    let t = Instant::now();
    report.record("C2", "masked and rebuilt models agree", t, c2_mask_rebuild());
    let t = Instant::now();
    report.record("C3", "gradients match finite differences", t, c3_gradients());
    let t = Instant::now();
    report.record("C4", "accounting equals structural counts", t, c4_accounting());
    let t = Instant::now();
    report.record("C5", "k=5 schedule trace", t, c5_schedule_trace());

    let t = Instant::now();
    match load_mnist() {
        Ok(m) => {
            let (c6, runs) = c6_mnist(&m);
            report.record("C6", "MNIST baseline and IPLT accuracy", t, c6);
            let t = Instant::now();
            let c7 = match runs {
                Some(r) => c7_head_to_head(&m, &r),
                None => Err("C6 runs unavailable".into()),
            };
            report.record("C7", "IPLT vs traditional at equal epochs", t, c7);
        }
        Err(e) => {
            report.record(
                "C6",
                "MNIST baseline and IPLT accuracy",
                t,
                Err(format!("MNIST unavailable: {e}")),
            );
            report.record(
                "C7",
                "IPLT vs traditional at equal epochs",
                t,
                Err(format!("MNIST unavailable: {e}")),
            );
        }
    }

    let t = Instant::now();
    report.record("C8", "layer collapse and min-filters guard", t, c8_layer_collapse());
    let t = Instant::now();
    report.record("C9", "seeded runs are byte-identical", t, c9_determinism());

    println!("acceptance: {} of 9 criteria passed", 9 - report.failed);
    if report.failed > 0 {
        std::process::exit(1);
    }
}
