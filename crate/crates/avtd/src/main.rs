use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use avtd::harness::report::{run_report, ReportRequest};
use avtd::harness::{self, load_config, RunConfig, RunKind};
use avtd::Result;

#[derive(Parser)]
#[command(
    name = "avtd",
    version,
    about = "SAC training with critic regularizers, held-out-TD agent selection, \
             dataset logging, and offline replay analysis"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one SAC agent online and log returns and diagnostics
    Online(RunArgs),
    /// Train a pool of differently-regularized agents with epsilon-greedy
    /// selection by a held-out metric
    Avtd(RunArgs),
    /// Train one agent and log every transition it collects as a dataset,
    /// plus a separately collected held-out file
    LogDataset(RunArgs),
    /// Replay a logged dataset offline across UTD ratios or regularizers
    Offline(RunArgs),
    /// Summarize previously written CSV logs into rank and score tables
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-name config override, e.g. --set sac.lr=0.001 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Environment name
    #[arg(long)]
    env: Option<String>,
    /// Random seed (repeat for multiple independent runs)
    #[arg(long)]
    seed: Vec<u64>,
    /// Total environment (or pseudo-) steps
    #[arg(long)]
    steps: Option<u64>,
    /// Update-to-data ratio; repeat to sweep it in offline analysis
    #[arg(long)]
    utd: Vec<u32>,
    /// Regularizer preset; repeat to sweep presets in offline analysis
    #[arg(long)]
    reg: Vec<String>,
    /// Pool member preset (repeatable)
    #[arg(long)]
    pool: Vec<String>,
    /// Probability of a uniform pick per selection
    #[arg(long)]
    epsilon: Option<f64>,
    /// Selection metric: valid_td | train_td | q_gap | uniform
    #[arg(long)]
    selection: Option<String>,
    /// Baseline run next to the pool: "uniform" or a preset (repeatable)
    #[arg(long)]
    baseline: Vec<String>,
    /// Offline reveal order
    #[arg(long, value_parser = ["stream", "shuffled"])]
    mode: Option<String>,
    /// Dataset file for offline analysis
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Held-out file; defaults to the dataset path with extension "heldout"
    #[arg(long)]
    heldout: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// CSV metric log (repeatable)
    #[arg(long = "log", required = true)]
    logs: Vec<PathBuf>,
    /// Step cutoff for the average-rank table (0 = none)
    #[arg(long, default_value_t = 0)]
    window: u64,
    /// Logged-step interval for rank-by-metric summaries (0 = every step)
    #[arg(long, default_value_t = 0)]
    interval: u64,
    /// Metric for a selection-rank summary (repeatable)
    #[arg(long = "metric")]
    metrics: Vec<String>,
    /// Return floor for normalized scores
    #[arg(long)]
    min_return: Option<f64>,
    /// Environment whose reward floor supplies --min-return
    #[arg(long)]
    env: Option<String>,
    /// Method whose env steps get scaled in the curves output
    #[arg(long)]
    oracle_method: Option<String>,
    /// Scale factor for --oracle-method
    #[arg(long, default_value_t = 1.1)]
    oracle_scale: f64,
    /// Write the rendered summary here as well as stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the merged (and possibly scaled) CSV here
    #[arg(long)]
    curves_out: Option<PathBuf>,
}

fn resolve(kind: RunKind, a: &RunArgs) -> Result<RunConfig> {
    let mut cfg = load_config(a.config.as_deref(), &a.set)?;
    cfg.kind = kind;
    if let Some(env) = &a.env {
        cfg.env = env.clone();
    }
    if !a.seed.is_empty() {
        cfg.seeds = a.seed.clone();
    }
    if let Some(steps) = a.steps {
        cfg.total_steps = steps;
    }
    if let Some(out) = &a.out {
        cfg.out = out.to_string_lossy().into_owned();
    }
    if let Some(eps) = a.epsilon {
        cfg.pool.epsilon = eps;
    }
    if let Some(sel) = &a.selection {
        cfg.pool.selection = sel.clone();
    }
    if !a.pool.is_empty() {
        cfg.pool.presets = a.pool.clone();
    }
    if !a.baseline.is_empty() {
        cfg.baselines = a.baseline.clone();
    }
    match kind {
        RunKind::Online | RunKind::LogDataset | RunKind::Avtd => {
            if let Some(reg) = a.reg.last() {
                cfg.reg = reg.clone();
            }
            if let Some(&utd) = a.utd.last() {
                cfg.sac.utd = utd;
            }
        }
        RunKind::OfflineStream | RunKind::OfflineShuffled => {
            if !a.utd.is_empty() {
                cfg.utd_list = a.utd.clone();
            }
            if !a.reg.is_empty() {
                cfg.regs = a.reg.clone();
            }
        }
    }
    if let Some(d) = &a.dataset {
        cfg.dataset = d.to_string_lossy().into_owned();
    }
    if let Some(h) = &a.heldout {
        cfg.heldout = h.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

fn offline_kind(a: &RunArgs) -> RunKind {
    match a.mode.as_deref() {
        Some("shuffled") => RunKind::OfflineShuffled,
        _ => RunKind::OfflineStream,
    }
}

fn dispatch(cli: Cli) -> Result<String> {
    match cli.cmd {
        Cmd::Online(a) => harness::run(&resolve(RunKind::Online, &a)?),
        Cmd::Avtd(a) => harness::run(&resolve(RunKind::Avtd, &a)?),
        Cmd::LogDataset(a) => harness::run(&resolve(RunKind::LogDataset, &a)?),
        Cmd::Offline(a) => {
            let kind = offline_kind(&a);
            harness::run(&resolve(kind, &a)?)
        }
        Cmd::Report(a) => run_report(&ReportRequest {
            logs: a.logs,
            window: a.window,
            interval: a.interval,
            metrics: a.metrics,
            min_return: a.min_return,
            env: a.env,
            oracle_method: a.oracle_method,
            oracle_scale: a.oracle_scale,
            out: a.out,
            curves_out: a.curves_out,
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
