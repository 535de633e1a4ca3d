//! Command-line driver for elastic tensor-selection training runs.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use elastic_core::engine::build_network;
use elastic_core::harness::{
    self, make_dataset, resolve_model, run, write_run, Dataset, RunReport, SweepParam,
    TrainConfig,
};
use elastic_core::importance::ImportanceDump;
use elastic_core::profiler::{profile, TensorProfile};
use elastic_core::selector::{solve_dp, DpConfig};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "elastic", version, about = "Budgeted elastic tensor-selection training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat key=value config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Selection strategy: elastic, full, traditional-tl, bn-bias.
    #[arg(long)]
    strategy: Option<String>,

    /// Speedup ratio in (0, 1].
    #[arg(long)]
    rho: Option<f64>,

    #[arg(long)]
    seed: Option<u64>,

    /// Extra overrides as key=value (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                TrainConfig::parse(&text)?
            }
            None => TrainConfig::default(),
        };
        if let Some(s) = &self.strategy {
            cfg.set("strategy", s)?;
        }
        if let Some(r) = self.rho {
            cfg.set("rho", &r.to_string())?;
        }
        if let Some(s) = self.seed {
            cfg.set("seed", &s.to_string())?;
        }
        for kv in &self.overrides {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got '{kv}'");
            };
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one training session and write report.json + log.jsonl.
    Train {
        #[command(flatten)]
        config: ConfigArgs,

        /// Output directory for the report and run log.
        #[arg(long, default_value = "run-out")]
        out: PathBuf,
    },

    /// Profile the configured model and dump the tensor-level time model.
    Profile {
        #[command(flatten)]
        config: ConfigArgs,

        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// One-shot selection solve on a dumped profile and importance vector.
    Solve {
        #[arg(long)]
        profile: PathBuf,

        /// Importance file ({"values": [...], "epoch_stamp": .., "batch_seed": ..}).
        #[arg(long, conflicts_with = "from_report", required_unless_present = "from_report")]
        importance: Option<PathBuf>,

        /// Take the most recent importance vector from a run report instead.
        #[arg(long)]
        from_report: Option<PathBuf>,

        #[arg(long, default_value_t = 0.5)]
        rho: f64,

        #[arg(long, default_value_t = 1000)]
        t_q: u64,

        /// Disable subproblem pruning (diagnostic).
        #[arg(long)]
        no_prune: bool,
    },

    /// Compare two run reports (accuracy delta, time ratio, flops ratio).
    Compare {
        report_a: PathBuf,
        report_b: PathBuf,
    },

    /// Run the same config across several rho or t_q values.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,

        /// Parameter to sweep: rho or t_q.
        #[arg(long, default_value = "rho")]
        param: String,

        /// Comma-separated values.
        #[arg(long)]
        values: String,

        /// Directory for per-value run outputs and the summary.
        #[arg(long, default_value = "sweep-out")]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { config, out } => cmd_train(&config, &out),
        Command::Profile { config, out } => cmd_profile(&config, out.as_deref()),
        Command::Solve {
            profile,
            importance,
            from_report,
            rho,
            t_q,
            no_prune,
        } => cmd_solve(
            &profile,
            importance.as_deref(),
            from_report.as_deref(),
            rho,
            t_q,
            !no_prune,
        ),
        Command::Compare { report_a, report_b } => cmd_compare(&report_a, &report_b),
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => cmd_sweep(&config, &param, &values, &out),
    }
}

fn cmd_train(config: &ConfigArgs, out: &Path) -> Result<()> {
    let cfg = config.load()?;
    let report = run(&cfg)?;
    write_run(&report, out)?;
    println!(
        "strategy={} rho={} seed={} final_accuracy={:.4} train_ns={} t_full_ns={}{}",
        cfg.strategy,
        cfg.rho,
        cfg.seed,
        report.final_test_accuracy,
        report.total_train_ns,
        report.t_full_ns,
        report
            .speedup_vs_reference
            .map(|s| format!(" speedup={s:.3}"))
            .unwrap_or_default()
    );
    println!("wrote {}", out.join("report.json").display());
    Ok(())
}

fn cmd_profile(config: &ConfigArgs, out: Option<&Path>) -> Result<()> {
    let cfg = config.load()?;
    cfg.validate()?;
    let dataset: Dataset<f64> = make_dataset(&cfg)?;
    let spec = resolve_model(&cfg.model, dataset.features, dataset.classes)?;
    let mut net = build_network::<f64>(&spec, cfg.seed)?;
    let batch = dataset.train_batch(&(0..cfg.batch_size).collect::<Vec<_>>());
    let prof = profile(&mut net, &batch, &cfg.clock)?;
    let text = prof.dump();
    match out {
        Some(path) => {
            std::fs::write(path, &text)
                .with_context(|| format!("writing {}", path.display()))?;
            println!(
                "wrote {} ({} tensors, t_forward={} ns, t_full={} ns)",
                path.display(),
                prof.len(),
                prof.t_forward,
                prof.t_full
            );
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_solve(
    profile_path: &Path,
    importance_path: Option<&Path>,
    report_path: Option<&Path>,
    rho: f64,
    t_q: u64,
    prune: bool,
) -> Result<()> {
    let prof_text = std::fs::read_to_string(profile_path)
        .with_context(|| format!("reading {}", profile_path.display()))?;
    let prof = TensorProfile::load(&prof_text)?;
    let imp = match (importance_path, report_path) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            ImportanceDump::load(&text)?
        }
        (None, Some(path)) => {
            let report = RunReport::load_file(path)?;
            harness::last_importance_dump(&report).with_context(|| {
                format!("{} has no importance events (baseline run?)", path.display())
            })?
        }
        (None, None) => unreachable!("clap enforces one source"),
    };
    let solution = solve_dp(&prof, &imp.values, &DpConfig { rho, t_q, prune })?;
    println!("{}", serde_json::to_string_pretty(&solution)?);
    Ok(())
}

fn cmd_compare(path_a: &Path, path_b: &Path) -> Result<()> {
    let a = RunReport::load_file(path_a)?;
    let b = RunReport::load_file(path_b)?;
    for row in harness::compare(&a, &b)? {
        println!("{}", serde_json::to_string(&row)?);
    }
    Ok(())
}

fn cmd_sweep(config: &ConfigArgs, param: &str, values: &str, out: &Path) -> Result<()> {
    let cfg = config.load()?;
    let param: SweepParam = param.parse()?;
    let values: Vec<f64> = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .with_context(|| format!("bad sweep value '{v}'"))
        })
        .collect::<Result<_>>()?;
    if values.is_empty() {
        bail!("sweep needs at least one value");
    }
    let results = harness::sweep(&cfg, param, &values)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut summary = String::new();
    for (value, report) in &results {
        let dir = out.join(format!("value-{value}"));
        write_run(report, &dir)?;
        let line = serde_json::json!({
            "value": value,
            "final_accuracy": report.final_test_accuracy,
            "total_train_ns": report.total_train_ns,
            "total_train_flops": report.total_train_flops,
        });
        println!("{line}");
        summary.push_str(&line.to_string());
        summary.push('\n');
    }
    std::fs::write(out.join("summary.jsonl"), summary)?;
    Ok(())
}
