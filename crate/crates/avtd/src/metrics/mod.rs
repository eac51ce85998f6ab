//! Diagnostics computed against a live agent (validation TD error, Q-gap,
//! Monte-Carlo bias, evaluation return) and the log structure they are
//! recorded into. Aggregation across runs lives in [`aggregate`]; CSV
//! serialization in [`csv`].
//!
//! All agent-evaluating metrics use eval-mode forward passes (dropout off,
//! frozen normalizer statistics) and never mutate the agent; randomness
//! comes from a caller-supplied stream so metric evaluation cannot perturb
//! the training draw sequence.

pub mod aggregate;
pub mod csv;

use std::collections::HashMap;

use ndarray::{Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;

use crate::env::Env;
use crate::error::{Error, Result};
use crate::replay::{Batch, HeldoutBuffer, ReplayBuffer};
use crate::sac::SacAgent;

/// One logged row: what a run knew about (method, seed) at `env_step`.
/// Diagnostics are optional because not every run kind produces every
/// metric (offline replay has no evaluation return; online runs without a
/// held-out buffer have no validation TD).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub method: String,
    pub seed: u64,
    pub env_step: u64,
    pub eval_return: f64,
    pub train_td: Option<f64>,
    pub valid_td: Option<f64>,
    pub q_gap: Option<f64>,
    pub mc_bias: Option<f64>,
}

/// Append-only metric log. Within one (method, seed) series the env_step is
/// strictly increasing; violations are rejected at push time rather than
/// detected downstream.
#[derive(Debug, Clone, Default)]
pub struct MetricLog {
    records: Vec<MetricRecord>,
    last_step: HashMap<(String, u64), u64>,
}

impl MetricLog {
    pub fn new() -> MetricLog {
        MetricLog::default()
    }

    pub fn push(&mut self, record: MetricRecord) -> Result<()> {
        let key = (record.method.clone(), record.seed);
        if let Some(&last) = self.last_step.get(&key) {
            if record.env_step <= last {
                return Err(Error::InvalidConfig(format!(
                    "metric log for ({}, seed {}) must have strictly increasing env_step: \
                     got {} after {}",
                    record.method, record.seed, record.env_step, last
                )));
            }
        }
        self.last_step.insert(key, record.env_step);
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[MetricRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Method names in first-appearance order.
    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.method) {
                out.push(r.method.clone());
            }
        }
        out
    }

    /// Sorted distinct seeds.
    pub fn seeds(&self) -> Vec<u64> {
        let mut out: Vec<u64> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.seed) {
                out.push(r.seed);
            }
        }
        out.sort_unstable();
        out
    }
}

/// Mean squared TD error over the full held-out buffer:
/// mean of (r + gamma * bootstrap * backup(s') - Q1(s, a))^2.
///
/// The backup uses the same mode and target networks as training, but all
/// forwards run in eval mode. Entropy-mode backups draw the next action from
/// `rng`; pass a dedicated metric stream so repeated evaluation is
/// reproducible and does not consume training randomness.
pub fn validation_td(
    agent: &SacAgent,
    heldout: &HeldoutBuffer,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let batch = Batch::from_transitions(heldout.transitions().iter())?;
    validation_td_batch(agent, &batch, rng)
}

/// The same squared-error mean over an explicit batch. The held-out entry
/// point above is a thin wrapper; protocols that already hold a batch (the
/// offline runner scoring a fixed validation split) call this directly.
pub fn validation_td_batch(agent: &SacAgent, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let backup = agent.backup_eval(&batch.next_obs, rng)?;
    let q = agent.q_point_eval(&batch.obs, &batch.actions)?;
    let gamma = agent.cfg.discount;
    let n = batch.len() as f64;
    let mut sum = 0.0;
    for i in 0..batch.len() {
        let y = batch.rewards[i] + gamma * batch.bootstrap[i] * backup[i];
        let d = y - q[i];
        sum += d * d;
    }
    Ok(sum / n)
}

/// Q-gap over an explicit set of states and the behavior actions stored with
/// them: mean Q1(s, a_pi) - mean Q1(s, a_beta), one policy sample per state.
pub fn q_gap_on(
    agent: &SacAgent,
    obs: &Array2<f64>,
    dataset_actions: &Array2<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if obs.nrows() == 0 {
        return Err(Error::EmptyBuffer);
    }
    let (pi_actions, _) = agent.sample_actions(obs, rng)?;
    let q_pi = agent.q_point_eval(obs, &pi_actions)?;
    let q_beta = agent.q_point_eval(obs, dataset_actions)?;
    Ok(q_pi.mean().unwrap() - q_beta.mean().unwrap())
}

/// Q-gap estimated over `sample_size` states drawn uniformly (with
/// replacement) from the buffer.
pub fn q_gap(
    agent: &SacAgent,
    buffer: &ReplayBuffer,
    sample_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let batch = buffer.sample_batch(sample_size, rng)?;
    q_gap_on(agent, &batch.obs, &batch.actions, rng)
}

/// Discounted reward-to-go of a single episode's reward sequence:
/// g_t = r_t + discount * g_{t+1}, with nothing after the final step. A
/// truncated tail is simply absent, matching the Monte-Carlo return
/// definition the bias estimate uses.
pub fn reward_to_go(rewards: &[f64], discount: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = 0.0;
    for t in (0..rewards.len()).rev() {
        g = rewards[t] + discount * g;
        out[t] = g;
    }
    out
}

/// Monte-Carlo bias of the first critic: rolls `n_traj` episodes with the
/// stochastic policy and returns the mean over every visited (s, a) of
/// Q1(s, a) minus the observed discounted reward-to-go.
pub fn mc_bias(
    agent: &SacAgent,
    env: &dyn Env,
    n_traj: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if n_traj == 0 {
        return Err(Error::InvalidConfig(
            "mc_bias needs at least one trajectory".into(),
        ));
    }
    let obs_dim = env.spec().observation_dim;
    let act_dim = env.spec().action_dim;
    let mut all_obs: Vec<Array1<f64>> = Vec::new();
    let mut all_actions: Vec<Array1<f64>> = Vec::new();
    let mut all_rtg: Vec<f64> = Vec::new();
    for _ in 0..n_traj {
        let (obs_rows, act_rows, rewards) = collect_episode(agent, env, true, rng)?;
        all_rtg.extend(reward_to_go(&rewards, agent.cfg.discount));
        all_obs.extend(obs_rows);
        all_actions.extend(act_rows);
    }
    let n = all_obs.len();
    let mut obs = Array2::zeros((n, obs_dim));
    let mut actions = Array2::zeros((n, act_dim));
    for (i, (o, a)) in all_obs.iter().zip(&all_actions).enumerate() {
        obs.row_mut(i).assign(o);
        actions.row_mut(i).assign(a);
    }
    let q = agent.q_point_eval(&obs, &actions)?;
    let mut sum = 0.0;
    for i in 0..n {
        sum += q[i] - all_rtg[i];
    }
    Ok(sum / n as f64)
}

/// Mean undiscounted return of the deterministic policy (tanh of the actor
/// mean) over `n_episodes` fresh episodes.
pub fn eval_return(
    agent: &SacAgent,
    env: &dyn Env,
    n_episodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if n_episodes == 0 {
        return Err(Error::InvalidConfig(
            "eval_return needs at least one episode".into(),
        ));
    }
    let mut total = 0.0;
    for _ in 0..n_episodes {
        let (_, _, rewards) = collect_episode(agent, env, false, rng)?;
        total += rewards.iter().sum::<f64>();
    }
    Ok(total / n_episodes as f64)
}

/// Rolls one episode to termination or truncation, returning per-step
/// observations, actions, and rewards. `stochastic` picks between the
/// sampled policy (metric rollouts) and the tanh-mean policy (evaluation).
fn collect_episode(
    agent: &SacAgent,
    env: &dyn Env,
    stochastic: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Array1<f64>>, Vec<Array1<f64>>, Vec<f64>)> {
    let (mut state, mut obs) = env.reset(rng);
    let mut obs_rows = Vec::new();
    let mut act_rows = Vec::new();
    let mut rewards = Vec::new();
    loop {
        let obs_mat = obs.clone().insert_axis(Axis(0));
        let act_mat = if stochastic {
            agent.sample_actions(&obs_mat, rng)?.0
        } else {
            agent.mean_actions(&obs_mat)?
        };
        let action = act_mat.row(0).to_owned();
        let out = env.step(&state, &action)?;
        obs_rows.push(obs);
        act_rows.push(action);
        rewards.push(out.reward);
        if out.terminated || out.truncated {
            return Ok((obs_rows, act_rows, rewards));
        }
        state = out.state;
        obs = out.obs;
    }
}
