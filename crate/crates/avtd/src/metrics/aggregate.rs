//! Cross-run aggregation: selected-return ranks for metric-driven model
//! selection, average performance ranks, and min-shifted normalized scores.
//!
//! All three protocols are pure functions over immutable [`MetricLog`]s.
//! They insist on aligned coverage (same methods, seeds, and logged steps
//! wherever a comparison needs them) and fail loudly on gaps instead of
//! silently dropping rows.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::metrics::{MetricLog, MetricRecord};

/// Competition ranks with ties averaged: 1 is the highest value, and a group
/// of m equal values after g larger ones all get rank g + (m + 1) / 2. The
/// ranks of K values always sum to K(K+1)/2.
pub fn return_ranks(values: &[f64]) -> Vec<f64> {
    let k = values.len();
    let mut out = vec![0.0; k];
    for i in 0..k {
        let mut greater = 0usize;
        let mut equal = 0usize;
        for j in 0..k {
            if values[j] > values[i] {
                greater += 1;
            } else if j != i && values[j] == values[i] {
                equal += 1;
            }
        }
        out[i] = 1.0 + greater as f64 + equal as f64 / 2.0;
    }
    out
}

/// Sample mean and standard error (n - 1 variance, zero for a single
/// sample).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    assert!(n > 0, "mean_stderr over empty slice");
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankSummary {
    pub mean: f64,
    pub stderr: f64,
    /// Average selected rank per seed, in ascending seed order.
    pub per_seed: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodRank {
    pub method: String,
    pub mean: f64,
    pub stderr: f64,
}

/// Named extractor for the quantity a selection metric minimizes. MC bias is
/// compared by magnitude; "return" selects the highest return and exists for
/// ceiling comparisons.
pub fn metric_selector(name: &str) -> Result<fn(&MetricRecord) -> Option<f64>> {
    Ok(match name {
        "train_td" => |r: &MetricRecord| r.train_td,
        "valid_td" => |r: &MetricRecord| r.valid_td,
        "q_gap" => |r: &MetricRecord| r.q_gap,
        "mc_bias" => |r: &MetricRecord| r.mc_bias.map(f64::abs),
        "return" => |r: &MetricRecord| Some(-r.eval_return),
        _ => {
            return Err(Error::InvalidConfig(format!(
                "unknown selection metric {name:?} (expected train_td, valid_td, q_gap, \
                 mc_bias, or return)"
            )))
        }
    })
}

// method -> seed -> step -> record, with first-appearance method order kept
// alongside since the map is keyed by name.
type Indexed<'a> = BTreeMap<String, BTreeMap<u64, BTreeMap<u64, &'a MetricRecord>>>;

fn index_log(log: &MetricLog) -> Indexed<'_> {
    let mut idx: Indexed = BTreeMap::new();
    for r in log.records() {
        idx.entry(r.method.clone())
            .or_default()
            .entry(r.seed)
            .or_default()
            .insert(r.env_step, r);
    }
    idx
}

/// Checks that every method covers exactly the same (seed, step) grid and
/// returns that grid as (seeds, per-seed step list).
fn aligned_grid(idx: &Indexed, methods: &[String]) -> Result<Vec<(u64, Vec<u64>)>> {
    let first = &idx[&methods[0]];
    let seeds: Vec<u64> = first.keys().copied().collect();
    for m in methods {
        let by_seed = &idx[m];
        if by_seed.keys().copied().collect::<Vec<u64>>() != seeds {
            return Err(Error::MisalignedLogs(format!(
                "method {m:?} covers different seeds than {:?}",
                methods[0]
            )));
        }
    }
    let mut grid = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let steps: Vec<u64> = first[&seed].keys().copied().collect();
        for m in methods {
            let s: Vec<u64> = idx[m][&seed].keys().copied().collect();
            if s != steps {
                return Err(Error::MisalignedLogs(format!(
                    "method {m:?} seed {seed} logs different steps than {:?}",
                    methods[0]
                )));
            }
        }
        grid.push((seed, steps));
    }
    Ok(grid)
}

/// Model-selection rank: at the end of each interval, pick the method whose
/// metric is smallest (ties to the earliest method in log order) and look up
/// that method's return rank among all methods at the same step. Per-seed
/// averages over intervals are summarized as mean and standard error across
/// seeds.
///
/// `interval` keeps only logged steps that are multiples of it; zero keeps
/// every logged step.
pub fn rank_by_metric<F>(log: &MetricLog, metric: F, interval: u64) -> Result<RankSummary>
where
    F: Fn(&MetricRecord) -> Option<f64>,
{
    let methods = log.methods();
    if methods.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let idx = index_log(log);
    let grid = aligned_grid(&idx, &methods)?;
    let mut per_seed = Vec::with_capacity(grid.len());
    for (seed, steps) in &grid {
        let used: Vec<u64> = steps
            .iter()
            .copied()
            .filter(|s| interval == 0 || s % interval == 0)
            .collect();
        if used.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "no logged steps are multiples of interval {interval} for seed {seed}"
            )));
        }
        let mut rank_sum = 0.0;
        for &step in &used {
            let mut selected = 0usize;
            let mut best = f64::INFINITY;
            let mut returns = Vec::with_capacity(methods.len());
            for (mi, m) in methods.iter().enumerate() {
                let rec = idx[m][seed][&step];
                let v = metric(rec).ok_or_else(|| {
                    Error::MisalignedLogs(format!(
                        "selection metric missing for method {m:?} seed {seed} step {step}"
                    ))
                })?;
                if v < best {
                    best = v;
                    selected = mi;
                }
                returns.push(rec.eval_return);
            }
            rank_sum += return_ranks(&returns)[selected];
        }
        per_seed.push((*seed, rank_sum / used.len() as f64));
    }
    let vals: Vec<f64> = per_seed.iter().map(|&(_, v)| v).collect();
    let (mean, stderr) = mean_stderr(&vals);
    Ok(RankSummary {
        mean,
        stderr,
        per_seed,
    })
}

/// Average performance rank over steps up to `window` (inclusive), averaged
/// over environments and steps per seed, reported as mean and standard error
/// across seeds. Each log is one environment; all logs must cover the same
/// methods and seeds.
pub fn average_rank(logs: &[&MetricLog], window: u64) -> Result<Vec<MethodRank>> {
    if logs.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let methods = logs[0].methods();
    if methods.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let mut sorted_methods = methods.clone();
    sorted_methods.sort();
    let mut seeds: Option<Vec<u64>> = None;
    // per (seed, method) -> per-env average ranks
    let mut acc: BTreeMap<(u64, usize), Vec<f64>> = BTreeMap::new();
    for log in logs {
        let mut m = log.methods();
        m.sort();
        if m != sorted_methods {
            return Err(Error::MisalignedLogs(format!(
                "logs disagree on methods: {m:?} vs {sorted_methods:?}"
            )));
        }
        let idx = index_log(log);
        let grid = aligned_grid(&idx, &methods)?;
        let log_seeds: Vec<u64> = grid.iter().map(|&(s, _)| s).collect();
        match &seeds {
            None => seeds = Some(log_seeds),
            Some(prev) => {
                if *prev != log_seeds {
                    return Err(Error::MisalignedLogs(format!(
                        "logs disagree on seeds: {log_seeds:?} vs {prev:?}"
                    )));
                }
            }
        }
        for (seed, steps) in &grid {
            let used: Vec<u64> = steps.iter().copied().filter(|s| *s <= window).collect();
            if used.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "no logged steps fall inside window {window} for seed {seed}"
                )));
            }
            let mut sums = vec![0.0; methods.len()];
            for &step in &used {
                let returns: Vec<f64> = methods
                    .iter()
                    .map(|m| idx[m][seed][&step].eval_return)
                    .collect();
                for (mi, r) in return_ranks(&returns).into_iter().enumerate() {
                    sums[mi] += r;
                }
            }
            for (mi, s) in sums.into_iter().enumerate() {
                acc.entry((*seed, mi))
                    .or_default()
                    .push(s / used.len() as f64);
            }
        }
    }
    let seeds = seeds.unwrap();
    let mut out = Vec::with_capacity(methods.len());
    for (mi, method) in methods.iter().enumerate() {
        // Average a seed's per-environment values first, then summarize
        // across seeds, so each seed contributes one sample.
        let per_seed: Vec<f64> = seeds
            .iter()
            .map(|&s| {
                let envs = &acc[&(s, mi)];
                envs.iter().sum::<f64>() / envs.len() as f64
            })
            .collect();
        let (mean, stderr) = mean_stderr(&per_seed);
        out.push(MethodRank {
            method: method.clone(),
            mean,
            stderr,
        });
    }
    Ok(out)
}

/// One task's log plus the documented minimum return of that task, used to
/// shift returns non-negative before normalizing.
pub struct TaskLog<'a> {
    pub log: &'a MetricLog,
    pub min_return: f64,
}

/// Per-step normalized score, aggregated over tasks: within each task the
/// seed-averaged return is shifted by the task's documented minimum and
/// divided by the best shifted value over all methods and steps; the curves
/// are then averaged across tasks. Output is (method, per-step scores) with
/// methods in first-appearance order of the first task.
pub fn normalized_score(tasks: &[TaskLog]) -> Result<Vec<(String, Vec<(u64, f64)>)>> {
    if tasks.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let methods = tasks[0].log.methods();
    if methods.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let mut sorted_methods = methods.clone();
    sorted_methods.sort();
    let mut steps_ref: Option<Vec<u64>> = None;
    // normalized[task][method][step_index]
    let mut normalized: Vec<Vec<Vec<f64>>> = Vec::with_capacity(tasks.len());
    for task in tasks {
        let mut m = task.log.methods();
        m.sort();
        if m != sorted_methods {
            return Err(Error::MisalignedLogs(format!(
                "tasks disagree on methods: {m:?} vs {sorted_methods:?}"
            )));
        }
        let idx = index_log(task.log);
        let grid = aligned_grid(&idx, &methods)?;
        let steps = grid[0].1.clone();
        for (seed, s) in &grid {
            if *s != steps {
                return Err(Error::MisalignedLogs(format!(
                    "seed {seed} logs different steps than seed {}",
                    grid[0].0
                )));
            }
        }
        match &steps_ref {
            None => steps_ref = Some(steps.clone()),
            Some(prev) => {
                if *prev != steps {
                    return Err(Error::MisalignedLogs(format!(
                        "tasks disagree on logged steps: {steps:?} vs {prev:?}"
                    )));
                }
            }
        }
        let n_seeds = grid.len() as f64;
        let mut shifted = vec![vec![0.0; steps.len()]; methods.len()];
        let mut best = f64::NEG_INFINITY;
        for (mi, m) in methods.iter().enumerate() {
            for (si, step) in steps.iter().enumerate() {
                let mean_return = grid
                    .iter()
                    .map(|(seed, _)| idx[m][seed][step].eval_return)
                    .sum::<f64>()
                    / n_seeds;
                let v = mean_return - task.min_return;
                shifted[mi][si] = v;
                best = best.max(v);
            }
        }
        if best <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "best seed-averaged return does not exceed the documented minimum \
                 {} (best shifted value {best})",
                task.min_return
            )));
        }
        normalized.push(
            shifted
                .into_iter()
                .map(|row| row.into_iter().map(|v| v / best).collect())
                .collect(),
        );
    }
    let steps = steps_ref.unwrap();
    let n_tasks = tasks.len() as f64;
    let mut out = Vec::with_capacity(methods.len());
    for (mi, method) in methods.iter().enumerate() {
        let curve: Vec<(u64, f64)> = steps
            .iter()
            .enumerate()
            .map(|(si, &step)| {
                let mean = normalized.iter().map(|t| t[mi][si]).sum::<f64>() / n_tasks;
                (step, mean)
            })
            .collect();
        out.push((method.clone(), curve));
    }
    Ok(out)
}
