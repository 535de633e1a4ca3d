//! End-to-end orchestration: interval-scheduled probe/evaluate/solve/train
//! cycles, baseline runs, budget accounting, and structured logging.
//!
//! All times are synthetic-clock nanoseconds unless the clock is configured
//! to wall mode (diagnostic only). Probe, solve, and profile costs are
//! charged to the run's cumulative training time; test-set evaluation time
//! is tracked separately (it is selection-independent reporting cost) and
//! included only in `total_with_eval_ns`.

pub mod config;
pub mod data;

pub use config::{resolve_model, TrainConfig};
pub use data::{make_dataset, Dataset};

use crate::clock::{ClockMode, OpLog};
use crate::engine::{build_network, cosine_lr, Batch, Mode, Network};
use crate::error::{Error, Result};
use crate::importance::{evaluate_logged, ImportanceDump};
use crate::mask::SelectionMask;
use crate::profiler::{self, predict_time, TensorProfile};
use crate::rng::Rng;
use crate::selector::{baseline_mask, solve_with_backward_budget, SolveStats, Strategy};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One epoch's record in the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u32,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    /// Active mask bits in forward order (input side first).
    pub mask_forward: String,
    pub predicted_iter_ns: u64,
    pub measured_iter_ns: u64,
    /// Training iterations plus probe/solve/profile overhead.
    pub cumulative_train_ns: u64,
    /// Training time plus test-evaluation time.
    pub cumulative_total_ns: u64,
    /// Probe + solve + profile time charged during this epoch.
    pub overhead_ns: u64,
}

/// Chronological run-log records, one JSON object per line on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunEvent {
    Importance {
        epoch: u32,
        probe_seed: u64,
        values: Vec<f64>,
    },
    Solve {
        epoch: u32,
        mask_forward: String,
        objective: f64,
        predicted_ns: u64,
        budget_backward_ns: u64,
        stats: SolveStats,
    },
    Epoch(EpochLog),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub n_tensors: usize,
    pub t_full_ns: u64,
    pub t_forward_ns: u64,
    pub events: Vec<RunEvent>,
    pub final_test_accuracy: f64,
    pub total_train_ns: u64,
    pub total_with_eval_ns: u64,
    /// Flops executed by training iterations (probe/profile/eval excluded).
    pub total_train_flops: u64,
    pub speedup_vs_reference: Option<f64>,
}

impl RunReport {
    pub fn epoch_logs(&self) -> Vec<&EpochLog> {
        self.events
            .iter()
            .filter_map(|e| match e {
                RunEvent::Epoch(log) => Some(log),
                _ => None,
            })
            .collect()
    }

    /// One JSON record per line, in chronological order.
    pub fn log_lines(&self) -> Vec<String> {
        self.events
            .iter()
            .map(|e| serde_json::to_string(e).expect("event serializes"))
            .collect()
    }

    pub fn dump(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn load(text: &str) -> Result<RunReport> {
        serde_json::from_str(text).map_err(|e| Error::json("parsing run report", e))
    }

    pub fn load_file(path: &Path) -> Result<RunReport> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading report {}", path.display()), e))?;
        RunReport::load(&text)
    }
}

/// Write `report.json` and `log.jsonl` under `dir`.
pub fn write_run(report: &RunReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let report_path = dir.join("report.json");
    std::fs::write(&report_path, report.dump())
        .map_err(|e| Error::io(format!("writing {}", report_path.display()), e))?;
    let log_path = dir.join("log.jsonl");
    let mut lines = report.log_lines().join("\n");
    lines.push('\n');
    std::fs::write(&log_path, lines)
        .map_err(|e| Error::io(format!("writing {}", log_path.display()), e))?;
    Ok(())
}

fn probe_seed_for(seed: u64, epoch: u32) -> u64 {
    Rng::new(seed ^ 0xE1A5_71C0_0000_0000 ^ epoch as u64).next_u64()
}

struct IntervalPlan {
    mask: SelectionMask,
    predicted_ns: u64,
    overhead_ns: u64,
    events: Vec<RunEvent>,
}

/// Probe step, importance evaluation, and DP solve at an interval start.
/// The probe's candidate update is reverted afterwards; it exists solely to
/// score the tensors.
#[allow(clippy::too_many_arguments)]
fn plan_interval(
    cfg: &TrainConfig,
    net: &mut Network<f64>,
    dataset: &Dataset<f64>,
    profile: &TensorProfile,
    epoch: u32,
    lr_now: f64,
    first_interval: bool,
    last_solve_charge: u64,
    iters_per_epoch: u64,
) -> Result<IntervalPlan> {
    let probe_seed = probe_seed_for(cfg.seed, epoch);
    let mut rng = Rng::new(probe_seed);
    let indices: Vec<usize> = (0..cfg.probe_batch)
        .map(|_| rng.next_below(dataset.train_len() as u64) as usize)
        .collect();
    let probe: Batch<f64> = dataset.train_batch(&indices);

    let saved = net.clone();
    let mut log = OpLog::new(cfg.clock.mode == ClockMode::Wall);
    let outcome = (|| {
        let (_, cache) = net.forward_with_ops(&probe, Mode::Train, &mut log)?;
        let full = SelectionMask::full(net.num_tensors());
        let grads = net.backward_with_ops(&cache, &full, &mut log);
        let updates = net.apply_update(&grads, lr_now, cfg.momentum, cfg.weight_decay)?;
        evaluate_logged(net, &probe, &updates, epoch as u64, probe_seed, &mut log)
    })();
    *net = saved;
    let importance = outcome?;
    let probe_ns = log.total_ns(&cfg.clock);

    let values = importance.values_f64();
    let mut events = vec![RunEvent::Importance {
        epoch,
        probe_seed,
        values: values.clone(),
    }];

    // Budget: rho * t_full minus the amortized per-iteration overhead of
    // this interval. The solve's own cost is not known yet, so the previous
    // solve's charge stands in for it.
    let interval_epochs = cfg.interval_epochs.min(cfg.epochs - epoch + 1) as u64;
    let interval_iters = (interval_epochs * iters_per_epoch).max(1);
    let known_overhead =
        probe_ns + last_solve_charge + if first_interval { profile.t_full } else { 0 };
    let per_iter = if cfg.deduct_overhead {
        known_overhead.div_ceil(interval_iters)
    } else {
        0
    };

    let cap = (cfg.rho * profile.t_full as f64).floor() as i64;
    let budget = cap - profile.t_forward as i64 - per_iter as i64;
    if budget < 0 {
        return Err(Error::InfeasibleBudget {
            rho: cfg.rho,
            budget,
            min_rho: (profile.t_forward + per_iter) as f64 / profile.t_full as f64,
        });
    }

    let solution =
        solve_with_backward_budget(profile, &values, budget as u64, cfg.t_q, true)?;
    events.push(RunEvent::Solve {
        epoch,
        mask_forward: solution.mask.forward_string(),
        objective: solution.objective,
        predicted_ns: solution.predicted_ns,
        budget_backward_ns: budget as u64,
        stats: solution.stats,
    });

    Ok(IntervalPlan {
        predicted_ns: solution.predicted_ns,
        overhead_ns: probe_ns + solution.stats.solve_charge_ns,
        mask: solution.mask,
        events,
    })
}

/// Execute one training run per the configuration.
pub fn run(cfg: &TrainConfig) -> Result<RunReport> {
    cfg.validate()?;
    let dataset: Dataset<f64> = make_dataset(cfg)?;
    let spec = resolve_model(&cfg.model, dataset.features, dataset.classes)?;
    let mut net: Network<f64> = build_network(&spec, cfg.seed)?;
    let n_tensors = net.num_tensors();

    let iters_per_epoch = (dataset.train_len() / cfg.batch_size) as u64;
    if iters_per_epoch == 0 {
        return Err(Error::BadConfig(
            "batch size exceeds the training split".into(),
        ));
    }
    let total_steps = iters_per_epoch * cfg.epochs as u64;

    // Initial profile on the first training batch (all strategies, so time
    // accounting stays comparable across runs).
    let profile_batch = dataset.train_batch(&(0..cfg.batch_size).collect::<Vec<_>>());
    let profile = profiler::profile(&mut net, &profile_batch, &cfg.clock)?;
    let mut pending_overhead = profile.t_full;

    let mut mask = match cfg.strategy {
        Strategy::Elastic => SelectionMask::empty(n_tensors), // solved at epoch 1
        fixed => baseline_mask(fixed, &net)?,
    };
    let mut predicted_iter_ns = predict_time(&profile, &mask);

    let mut events: Vec<RunEvent> = Vec::new();
    let mut shuffle_rng = Rng::new(cfg.seed ^ 0x7EA1_5EED_0000_0001);
    let mut cumulative_train_ns = 0u64;
    let mut cumulative_eval_ns = 0u64;
    let mut total_train_flops = 0u64;
    let mut last_solve_charge = 0u64;
    let mut step = 0u64;
    let mut iter_log = OpLog::new(cfg.clock.mode == ClockMode::Wall);
    let mut final_accuracy = 0.0;

    for epoch in 1..=cfg.epochs {
        let mut epoch_overhead = std::mem::take(&mut pending_overhead);
        if cfg.strategy == Strategy::Elastic && (epoch - 1) % cfg.interval_epochs == 0 {
            let lr_now = cosine_lr(step, total_steps, cfg.lr)?;
            let plan = plan_interval(
                cfg,
                &mut net,
                &dataset,
                &profile,
                epoch,
                lr_now,
                epoch == 1,
                last_solve_charge,
                iters_per_epoch,
            )?;
            mask = plan.mask;
            predicted_iter_ns = plan.predicted_ns;
            epoch_overhead += plan.overhead_ns;
            last_solve_charge = plan
                .events
                .iter()
                .find_map(|e| match e {
                    RunEvent::Solve { stats, .. } => Some(stats.solve_charge_ns),
                    _ => None,
                })
                .unwrap_or(0);
            events.extend(plan.events);
        }
        cumulative_train_ns += epoch_overhead;

        // training iterations
        let mut order: Vec<usize> = (0..dataset.train_len()).collect();
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut measured_iter_ns = 0u64;
        for chunk in order.chunks_exact(cfg.batch_size).take(iters_per_epoch as usize) {
            let batch = dataset.train_batch(chunk);
            let lr_now = cosine_lr(step, total_steps, cfg.lr)?;
            iter_log.clear();
            let (loss, cache) = net.forward_with_ops(&batch, Mode::Train, &mut iter_log)?;
            let grads = net.backward_with_ops(&cache, &mask, &mut iter_log);
            net.apply_update(&grads, lr_now, cfg.momentum, cfg.weight_decay)?;
            measured_iter_ns = iter_log.total_ns(&cfg.clock);
            total_train_flops += iter_log.total_flops();
            cumulative_train_ns += measured_iter_ns;
            loss_sum += loss;
            step += 1;
        }
        if cfg.clock.mode == ClockMode::Synthetic {
            debug_assert_eq!(
                measured_iter_ns, predicted_iter_ns,
                "time model out of sync with the engine"
            );
        }

        // test evaluation (reporting cost, not under the rho budget)
        let mut test_loss_sum = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        let mut offset = 0usize;
        while offset < dataset.test_len() {
            let len = cfg.batch_size.min(dataset.test_len() - offset);
            let batch = dataset.test_batch(offset, len);
            iter_log.clear();
            let (loss, cache) = net.forward_with_ops(&batch, Mode::Eval, &mut iter_log)?;
            cumulative_eval_ns += iter_log.total_ns(&cfg.clock);
            test_loss_sum += loss * len as f64;
            for (pred, &label) in cache.predictions().iter().zip(&batch.labels) {
                if *pred == label {
                    correct += 1;
                }
            }
            seen += len;
            offset += len;
        }
        // make_dataset guarantees a nonempty test split
        let test_loss = test_loss_sum / seen as f64;
        let test_accuracy = correct as f64 / seen as f64;
        final_accuracy = test_accuracy;

        events.push(RunEvent::Epoch(EpochLog {
            epoch,
            train_loss: loss_sum / iters_per_epoch as f64,
            test_loss,
            test_accuracy,
            mask_forward: mask.forward_string(),
            predicted_iter_ns,
            measured_iter_ns,
            cumulative_train_ns,
            cumulative_total_ns: cumulative_train_ns + cumulative_eval_ns,
            overhead_ns: epoch_overhead,
        }));
    }

    let speedup = match &cfg.reference {
        Some(path) => {
            let reference = RunReport::load_file(Path::new(path))?;
            if reference.config.comparable_key() != cfg.comparable_key() {
                return Err(Error::IncomparableReports(
                    "reference report comes from a different dataset/model/seed".into(),
                ));
            }
            Some(reference.total_train_ns as f64 / cumulative_train_ns as f64)
        }
        None => None,
    };

    Ok(RunReport {
        config: cfg.clone(),
        n_tensors,
        t_full_ns: profile.t_full,
        t_forward_ns: profile.t_forward,
        events,
        final_test_accuracy: final_accuracy,
        total_train_ns: cumulative_train_ns,
        total_with_eval_ns: cumulative_train_ns + cumulative_eval_ns,
        total_train_flops,
        speedup_vs_reference: speedup,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub metric: String,
    pub a: f64,
    pub b: f64,
    pub value: f64,
}

/// Machine-readable comparison of two runs over the same dataset, model,
/// and seed: accuracy delta, training-time ratio, and flops ratio.
pub fn compare(a: &RunReport, b: &RunReport) -> Result<Vec<CompareRow>> {
    if a.config.comparable_key() != b.config.comparable_key() {
        return Err(Error::IncomparableReports(
            "dataset/model/seed/batch/epochs differ".into(),
        ));
    }
    Ok(vec![
        CompareRow {
            metric: "final_accuracy_delta".into(),
            a: a.final_test_accuracy,
            b: b.final_test_accuracy,
            value: a.final_test_accuracy - b.final_test_accuracy,
        },
        CompareRow {
            metric: "train_time_ratio".into(),
            a: a.total_train_ns as f64,
            b: b.total_train_ns as f64,
            value: a.total_train_ns as f64 / b.total_train_ns as f64,
        },
        CompareRow {
            metric: "train_flops_ratio".into(),
            a: a.total_train_flops as f64,
            b: b.total_train_flops as f64,
            value: a.total_train_flops as f64 / b.total_train_flops as f64,
        },
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Rho,
    Tq,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rho" => Ok(SweepParam::Rho),
            "t_q" | "tq" => Ok(SweepParam::Tq),
            other => Err(Error::BadConfig(format!("unknown sweep parameter '{other}'"))),
        }
    }
}

/// Run the same configuration across a list of rho or t_q values.
pub fn sweep(
    base: &TrainConfig,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<(f64, RunReport)>> {
    let mut out = Vec::with_capacity(values.len());
    for &v in values {
        let mut cfg = base.clone();
        match param {
            SweepParam::Rho => cfg.rho = v,
            SweepParam::Tq => {
                if v < 1.0 || v.fract() != 0.0 {
                    return Err(Error::BadConfig(format!(
                        "t_q sweep values must be positive integers, got {v}"
                    )));
                }
                cfg.t_q = v as u64;
            }
        }
        let report = run(&cfg)?;
        out.push((v, report));
    }
    Ok(out)
}

/// Dump helper for the CLI: importance events of a run in file form.
pub fn last_importance_dump(report: &RunReport) -> Option<ImportanceDump> {
    report.events.iter().rev().find_map(|e| match e {
        RunEvent::Importance {
            epoch,
            probe_seed,
            values,
        } => Some(ImportanceDump {
            values: values.clone(),
            epoch_stamp: *epoch as u64,
            batch_seed: *probe_seed,
        }),
        _ => None,
    })
}
