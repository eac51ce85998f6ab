//! Experiment runner behind the CLI: online training, selection-pool runs,
//! dataset logging, and the offline replay analyses. Every run writes CSV
//! metric logs with one shared schema, a JSONL event stream, and a manifest
//! holding the fully resolved config, which together reproduce the run
//! bit-exactly in serial mode.

pub mod config;
pub mod report;

use std::fs;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};

use ndarray::Axis;

use crate::env::{make_env, Env};
use crate::error::{Error, Result};
use crate::metrics::aggregate::{average_rank, metric_selector, rank_by_metric, TaskLog};
use crate::metrics::csv::save_csv;
use crate::metrics::{self, MetricLog, MetricRecord};
use crate::pool::{
    run_avtd, uniform_action, AgentPool, PoolSettings, RunEvent, RunParams, SelectionMode,
};
use crate::regularizers::{reset_due, RegularizerConfig};
use crate::replay::dataset::{dataset_load, dataset_save};
use crate::replay::{HeldoutBuffer, ReplayBuffer, StreamMode, StreamSchedule, Transition};
use crate::rng;
use crate::sac::{BackupMode, SacAgent};

pub use config::{apply_override, load_config, PoolSection, RunConfig, RunKind, SacSection};

/// One method in a run: a label for logs, the agent presets behind it, and
/// how the acting agent is chosen.
#[derive(Debug, Clone)]
pub struct MethodSpec {
    pub label: String,
    pub presets: Vec<String>,
    pub selection: SelectionMode,
}

/// Entry point used by the CLI: dispatches on the configured kind and
/// returns a human-readable completion summary.
pub fn run(cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    match cfg.kind {
        RunKind::Online => {
            let log = run_online(cfg)?;
            Ok(format!(
                "online run complete\n{}",
                final_returns_summary(&log)
            ))
        }
        RunKind::Avtd => {
            let out = run_avtd_cli(cfg)?;
            Ok(format!("selection run complete\n{}", out.summary))
        }
        RunKind::LogDataset => {
            let out = run_log_dataset(cfg)?;
            Ok(format!(
                "dataset logged: {} transitions to {}, {} held-out to {}, {} resets",
                out.dataset_len,
                out.dataset_path.display(),
                out.heldout_len,
                out.heldout_path.display(),
                out.resets.len()
            ))
        }
        RunKind::OfflineStream | RunKind::OfflineShuffled => {
            let out = run_offline(cfg)?;
            Ok(format!("offline analysis complete\n{}", out.summary))
        }
    }
}

/// Single-agent training with the configured regularizer: a pool of one in
/// uniform selection mode, so the loop, streams, and logging match the
/// selection runs exactly.
pub fn run_online(cfg: &RunConfig) -> Result<MetricLog> {
    let label = RegularizerConfig::parse(&cfg.reg)?.label();
    let spec = MethodSpec {
        label,
        presets: vec![cfg.reg.clone()],
        selection: SelectionMode::Uniform,
    };
    let log = run_method(cfg, &spec)?;
    write_manifest(cfg)?;
    Ok(log)
}

pub struct AvtdOut {
    pub merged: MetricLog,
    pub summary: String,
}

/// The selection pool next to its configured baselines, then the rank and
/// normalized-score summaries across all of them.
pub fn run_avtd_cli(cfg: &RunConfig) -> Result<AvtdOut> {
    let mut methods = vec![MethodSpec {
        label: "avtd".into(),
        presets: cfg.pool.presets.clone(),
        selection: SelectionMode::parse(&cfg.pool.selection)?,
    }];
    for b in &cfg.baselines {
        if b == "uniform" {
            methods.push(MethodSpec {
                label: "uniform".into(),
                presets: cfg.pool.presets.clone(),
                selection: SelectionMode::Uniform,
            });
        } else {
            methods.push(MethodSpec {
                label: RegularizerConfig::parse(b)?.label(),
                presets: vec![b.clone()],
                selection: SelectionMode::Uniform,
            });
        }
    }
    let mut merged = MetricLog::new();
    for m in &methods {
        let log = run_method(cfg, m)?;
        for r in log.records() {
            merged.push(r.clone())?;
        }
    }
    let out_dir = ensure_out(cfg)?;
    let mut summary = String::new();
    match average_rank(&[&merged], cfg.total_steps) {
        Ok(rows) => {
            summary.push_str(&format!(
                "average return rank over steps <= {} ({} seeds)\n",
                cfg.total_steps,
                cfg.seeds.len()
            ));
            for row in rows {
                summary.push_str(&format!(
                    "  {:<12} {:.3} +/- {:.3}\n",
                    row.method, row.mean, row.stderr
                ));
            }
        }
        Err(e) => summary.push_str(&format!("average rank unavailable: {e}\n")),
    }
    let env = make_env(&cfg.env)?;
    let min_return = env.spec().reward_min * env.spec().horizon as f64;
    match metrics::aggregate::normalized_score(&[TaskLog {
        log: &merged,
        min_return,
    }]) {
        Ok(scores) => {
            let path = out_dir.join("normalized_scores.csv");
            let mut text = String::from("method,env_step,score\n");
            for (method, curve) in &scores {
                for (step, score) in curve {
                    text.push_str(&format!("{method},{step},{score}\n"));
                }
            }
            fs::write(&path, text)?;
            summary.push_str(&format!("normalized scores: {}\n", path.display()));
        }
        Err(e) => summary.push_str(&format!("normalized scores unavailable: {e}\n")),
    }
    fs::write(out_dir.join("rank_summary.txt"), &summary)?;
    write_manifest(cfg)?;
    Ok(AvtdOut { merged, summary })
}

/// Runs one method over every configured seed, writing a CSV and a JSONL
/// event file per seed plus a merged per-method CSV.
pub fn run_method(cfg: &RunConfig, spec: &MethodSpec) -> Result<MetricLog> {
    let out_dir = ensure_out(cfg)?;
    let mut merged = MetricLog::new();
    for &seed in &cfg.seeds {
        let (log, events) = run_pool_seed(cfg, spec, seed)?;
        save_csv(
            &log,
            &out_dir.join(format!("{}_seed{}.csv", spec.label, seed)),
        )?;
        write_events(
            &out_dir.join(format!("{}_seed{}.events.jsonl", spec.label, seed)),
            &events,
        )?;
        for r in log.records() {
            merged.push(r.clone())?;
        }
    }
    save_csv(&merged, &out_dir.join(format!("{}.csv", spec.label)))?;
    Ok(merged)
}

/// One seed of one method: fresh pool, fresh streams, full training loop.
pub fn run_pool_seed(
    cfg: &RunConfig,
    spec: &MethodSpec,
    seed: u64,
) -> Result<(MetricLog, Vec<RunEvent>)> {
    let env = make_env(&cfg.env)?;
    let es = env.spec();
    let base = cfg
        .sac
        .to_config(es.observation_dim, es.action_dim, "plain")?;
    let settings = PoolSettings {
        epsilon: cfg.pool.epsilon,
        selection: spec.selection,
        heldout_every: cfg.pool.heldout_every,
        update_during_heldout: cfg.pool.update_during_heldout,
    };
    let mut pool = AgentPool::new(
        &base,
        &spec.presets,
        settings,
        cfg.total_steps.max(1) as usize,
        seed,
    )?;
    let mut params = RunParams::new(&spec.label, seed, cfg.total_steps);
    params.log_every = cfg.log_every;
    params.eval_episodes = cfg.eval_episodes;
    params.mc_traj = cfg.mc_traj;
    params.metric_batch = cfg.metric_batch;
    let out = run_avtd(&mut pool, env.as_ref(), &params)?;
    Ok((out.log, out.events))
}

pub struct DatasetRunOut {
    pub dataset_path: PathBuf,
    pub heldout_path: PathBuf,
    pub dataset_len: usize,
    pub heldout_len: usize,
    pub resets: Vec<u64>,
}

/// Trains one agent (first configured seed) and logs every transition it
/// collects after warm-up, in collection order, to a dataset file. A
/// held-out file is collected separately afterwards with the final policy,
/// so the main file holds exactly total - warmup transitions. Resets land
/// in a sidecar event file.
pub fn run_log_dataset(cfg: &RunConfig) -> Result<DatasetRunOut> {
    let env = make_env(&cfg.env)?;
    let es = env.spec();
    let seed = cfg.seeds[0];
    let sac_cfg = cfg.sac.to_config(es.observation_dim, es.action_dim, &cfg.reg)?;
    let label = sac_cfg.reg.label();
    let mut agent = SacAgent::new(sac_cfg.clone(), rng::agent_stream(seed, 0))?;
    let mut act_rng = rng::agent_action_stream(seed, 0);
    let mut reset_rng = rng::agent_reset_stream(seed, 0);
    let mut env_rng = rng::stream(seed, rng::STREAM_ENV);
    let mut warmup_rng = rng::stream(seed, rng::STREAM_WARMUP);
    let mut buffer = ReplayBuffer::new(cfg.total_steps.max(1) as usize);
    let mut dataset: Vec<Transition> = Vec::new();
    let mut events: Vec<RunEvent> = Vec::new();
    let mut step: u64 = 0;
    'run: while step < cfg.total_steps {
        let (mut state, mut obs) = env.reset(&mut env_rng);
        loop {
            if step >= cfg.total_steps {
                break 'run;
            }
            let in_warmup = step < sac_cfg.warmup_steps;
            let action = if in_warmup {
                uniform_action(es.action_dim, &mut warmup_rng)
            } else {
                let m = obs.clone().insert_axis(Axis(0));
                let (a, _) = agent.sample_actions(&m, &mut act_rng)?;
                a.row(0).to_owned()
            };
            let so = env.step(&state, &action)?;
            let t = Transition {
                obs,
                action,
                reward: so.reward,
                next_obs: so.obs.clone(),
                terminated: so.terminated,
                truncated: so.truncated,
            };
            buffer.append(t.clone());
            if !in_warmup {
                dataset.push(t);
            }
            step += 1;
            if !in_warmup {
                if reset_due(&sac_cfg.reg, step) {
                    agent.reset(&mut reset_rng)?;
                    events.push(RunEvent::Reset {
                        env_step: step,
                        agent: 0,
                        label: label.clone(),
                    });
                }
                agent.train_step(&buffer)?;
            }
            if so.terminated || so.truncated {
                break;
            }
            state = so.state;
            obs = so.obs;
        }
    }
    // Held-out episodes come after the budget, acted by the final policy,
    // so they never contaminate the training dataset's accounting.
    let mut heldout: Vec<Transition> = Vec::new();
    for episode in 0..cfg.heldout_episodes {
        events.push(RunEvent::HeldoutEpisode {
            env_step: step + heldout.len() as u64,
            episode,
        });
        let (mut state, mut obs) = env.reset(&mut env_rng);
        loop {
            let m = obs.clone().insert_axis(Axis(0));
            let (a, _) = agent.sample_actions(&m, &mut act_rng)?;
            let action = a.row(0).to_owned();
            let so = env.step(&state, &action)?;
            heldout.push(Transition {
                obs,
                action,
                reward: so.reward,
                next_obs: so.obs.clone(),
                terminated: so.terminated,
                truncated: so.truncated,
            });
            if so.terminated || so.truncated {
                break;
            }
            state = so.state;
            obs = so.obs;
        }
    }
    let out_dir = ensure_out(cfg)?;
    let dataset_path = out_dir.join(format!("{}.dataset", cfg.env));
    let heldout_path = out_dir.join(format!("{}.heldout", cfg.env));
    dataset_save(&dataset, &dataset_path)?;
    dataset_save(&heldout, &heldout_path)?;
    write_events(&out_dir.join("dataset.events.jsonl"), &events)?;
    write_manifest(cfg)?;
    let resets = events
        .iter()
        .filter_map(|e| match e {
            RunEvent::Reset { env_step, .. } => Some(*env_step),
            _ => None,
        })
        .collect();
    Ok(DatasetRunOut {
        dataset_path,
        heldout_path,
        dataset_len: dataset.len(),
        heldout_len: heldout.len(),
        resets,
    })
}

pub struct OfflineOut {
    pub merged: MetricLog,
    pub summary: String,
}

/// Offline replay analysis: for each UTD and regularizer in the sweep, a
/// fresh deterministic-backup agent trains against the logged dataset
/// revealed one transition per pseudo-step (in logged order, or reshuffled
/// once up front), with the usual diagnostics every `log_every` steps and a
/// rank summary over the swept methods at the end.
pub fn run_offline(cfg: &RunConfig) -> Result<OfflineOut> {
    let dataset = dataset_load(Path::new(&cfg.dataset))?;
    let heldout_data = dataset_load(Path::new(&cfg.heldout_path()))?;
    if cfg.total_steps as usize > dataset.len() {
        return Err(Error::StreamExhausted {
            requested: cfg.total_steps as usize,
            remaining: dataset.len(),
        });
    }
    let env = make_env(&cfg.env)?;
    let utds = if cfg.utd_list.is_empty() {
        vec![cfg.sac.utd]
    } else {
        cfg.utd_list.clone()
    };
    let regs = if cfg.regs.is_empty() {
        vec!["fn".to_string()]
    } else {
        cfg.regs.clone()
    };
    let out_dir = ensure_out(cfg)?;
    let mut merged = MetricLog::new();
    for &utd in &utds {
        for reg in &regs {
            let reg_label = RegularizerConfig::parse(reg)?.label();
            let label = if utds.len() > 1 && regs.len() > 1 {
                format!("{reg_label}-utd{utd}")
            } else if utds.len() > 1 {
                format!("utd{utd}")
            } else {
                reg_label
            };
            let mut method_log = MetricLog::new();
            for &seed in &cfg.seeds {
                let (log, events) =
                    run_offline_seed(cfg, env.as_ref(), &dataset, &heldout_data, utd, reg, &label, seed)?;
                save_csv(&log, &out_dir.join(format!("{label}_seed{seed}.csv")))?;
                write_events(
                    &out_dir.join(format!("{label}_seed{seed}.events.jsonl")),
                    &events,
                )?;
                for r in log.records() {
                    method_log.push(r.clone())?;
                    merged.push(r.clone())?;
                }
            }
            save_csv(&method_log, &out_dir.join(format!("{label}.csv")))?;
        }
    }
    save_csv(&merged, &out_dir.join("offline.csv"))?;
    let summary = offline_rank_summary(&merged, cfg.log_every, cfg.seeds.len());
    fs::write(out_dir.join("rank_summary.txt"), &summary)?;
    write_manifest(cfg)?;
    Ok(OfflineOut { merged, summary })
}

#[allow(clippy::too_many_arguments)]
fn run_offline_seed(
    cfg: &RunConfig,
    env: &dyn Env,
    dataset: &[Transition],
    heldout_data: &[Transition],
    utd: u32,
    reg: &str,
    label: &str,
    seed: u64,
) -> Result<(MetricLog, Vec<RunEvent>)> {
    let mode = match cfg.kind {
        RunKind::OfflineStream => StreamMode::InOrder,
        RunKind::OfflineShuffled => StreamMode::Shuffled { seed },
        _ => {
            return Err(Error::InvalidConfig(
                "offline analysis requires an offline run kind".into(),
            ))
        }
    };
    let es = env.spec();
    let mut sac_cfg = cfg
        .sac
        .to_config(es.observation_dim, es.action_dim, reg)?;
    sac_cfg.utd = utd;
    // the replay analyses always bootstrap without the entropy term
    sac_cfg.backup = BackupMode::Deterministic;
    sac_cfg.validate()?;
    let mut agent = SacAgent::new(sac_cfg.clone(), rng::agent_stream(seed, 0))?;
    let mut reset_rng = rng::agent_reset_stream(seed, 0);
    let mut agent_metric_rng = rng::agent_metric_stream(seed, 0);
    let mut shared_metric_rng = rng::stream(seed, rng::STREAM_METRIC);
    let mut eval_rng = rng::stream(seed, rng::STREAM_EVAL);
    let mut sched = StreamSchedule::new(dataset.to_vec(), mode);
    let mut buffer = ReplayBuffer::new(cfg.total_steps.max(1) as usize);
    let mut heldout = HeldoutBuffer::new();
    for t in heldout_data {
        heldout.append(t.clone());
    }
    let mut log = MetricLog::new();
    let mut events = Vec::new();
    for step in 1..=cfg.total_steps {
        sched.reveal(&mut buffer, 1)?;
        // no updates until one full minibatch exists
        if buffer.len() >= sac_cfg.batch_size {
            if reset_due(&sac_cfg.reg, step) {
                agent.reset(&mut reset_rng)?;
                events.push(RunEvent::Reset {
                    env_step: step,
                    agent: 0,
                    label: label.to_string(),
                });
            }
            agent.train_step(&buffer)?;
        }
        if step % cfg.log_every == 0 {
            let mean_return = metrics::eval_return(&agent, env, cfg.eval_episodes, &mut eval_rng)?;
            events.push(RunEvent::Eval {
                env_step: step,
                agent: 0,
                label: label.to_string(),
                mean_return,
            });
            let batch = buffer.sample_batch(cfg.metric_batch, &mut shared_metric_rng)?;
            let train_td = metrics::validation_td_batch(&agent, &batch, &mut agent_metric_rng)?;
            let valid_td = if heldout.is_empty() {
                None
            } else {
                Some(metrics::validation_td(&agent, &heldout, &mut agent_metric_rng)?)
            };
            let q_gap = metrics::q_gap(&agent, &buffer, cfg.metric_batch, &mut shared_metric_rng)?;
            let mc = if cfg.mc_traj == 0 {
                None
            } else {
                Some(metrics::mc_bias(&agent, env, cfg.mc_traj, &mut shared_metric_rng)?)
            };
            log.push(MetricRecord {
                method: label.to_string(),
                seed,
                env_step: step,
                eval_return: mean_return,
                train_td: Some(train_td),
                valid_td,
                q_gap: Some(q_gap),
                mc_bias: mc,
            })?;
        }
    }
    Ok((log, events))
}

/// One line per metric: the mean return rank (with stderr) a selector
/// picking by that metric would achieve, plus the return oracle.
pub fn offline_rank_summary(log: &MetricLog, interval: u64, n_seeds: usize) -> String {
    let methods = log.methods().join(", ");
    let mut text = format!(
        "selection-rank summary (interval {interval}, methods: {methods}, {n_seeds} seeds)\n"
    );
    for name in ["train_td", "valid_td", "q_gap", "mc_bias", "return"] {
        let sel = metric_selector(name).expect("known metric names");
        match rank_by_metric(log, sel, interval) {
            Ok(s) => text.push_str(&format!(
                "  {:<9}: {:.3} +/- {:.3}\n",
                name, s.mean, s.stderr
            )),
            Err(e) => text.push_str(&format!("  {name:<9}: unavailable ({e})\n")),
        }
    }
    text
}

fn final_returns_summary(log: &MetricLog) -> String {
    let mut lines = String::new();
    for seed in log.seeds() {
        let last = log
            .records()
            .iter()
            .filter(|r| r.seed == seed)
            .last();
        if let Some(r) = last {
            lines.push_str(&format!(
                "  seed {}: return {:.1} at step {}\n",
                seed, r.eval_return, r.env_step
            ));
        }
    }
    lines
}

fn ensure_out(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.out);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Writes the fully resolved config next to the logs; rerunning from this
/// file reproduces the run bit-exactly.
pub fn write_manifest(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = ensure_out(cfg)?;
    let path = dir.join("manifest.toml");
    let text = toml::to_string_pretty(cfg)
        .map_err(|e| Error::InvalidConfig(format!("manifest serialization: {e}")))?;
    fs::write(&path, text)?;
    Ok(path)
}

fn write_events(path: &Path, events: &[RunEvent]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for e in events {
        let line = serde_json::to_string(e)
            .map_err(|e| Error::InvalidConfig(format!("event serialization: {e}")))?;
        writeln!(f, "{line}")?;
    }
    Ok(())
}
