//! A pool of differently-regularized SAC agents on a shared replay buffer,
//! with per-step epsilon-greedy selection of the acting agent by lowest
//! held-out validation TD error, plus the training loop that drives it.
//!
//! The same loop also runs a single plain agent: a pool of one in uniform
//! selection mode with held-out collection disabled is ordinary online SAC,
//! bit for bit. Every random decision draws from a stream fixed at
//! construction (see [`crate::rng`]), so a run is reproducible from (seed,
//! config) alone and serial execution matches what a concurrent phase-barrier
//! schedule would produce.

use ndarray::{Array1, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::env::Env;
use crate::error::{Error, Result};
use crate::metrics::{
    self, eval_return, mc_bias, q_gap_on, validation_td_batch, MetricLog, MetricRecord,
};
use crate::regularizers::{reset_due, RegularizerConfig};
use crate::replay::{Batch, HeldoutBuffer, ReplayBuffer, Transition};
use crate::rng;
use crate::sac::{SacAgent, SacConfig};

/// What drives the greedy pick. The three metric modes score every agent on
/// shared data each step and act with the argmin; uniform ignores metrics
/// and re-selects per episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    ValidTd,
    TrainTd,
    QGap,
    Uniform,
}

impl SelectionMode {
    pub fn parse(s: &str) -> Result<SelectionMode> {
        Ok(match s {
            "valid_td" => SelectionMode::ValidTd,
            "train_td" => SelectionMode::TrainTd,
            "q_gap" => SelectionMode::QGap,
            "uniform" => SelectionMode::Uniform,
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "unknown selection mode {s:?} (expected valid_td, train_td, q_gap, \
                     or uniform)"
                )))
            }
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            SelectionMode::ValidTd => "valid_td",
            SelectionMode::TrainTd => "train_td",
            SelectionMode::QGap => "q_gap",
            SelectionMode::Uniform => "uniform",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PoolSettings {
    pub epsilon: f64,
    pub selection: SelectionMode,
    /// Collect one held-out episode after this many training episodes;
    /// zero disables held-out collection entirely.
    pub heldout_every: u64,
    /// Whether agents keep taking gradient steps during held-out episodes.
    pub update_during_heldout: bool,
}

impl Default for PoolSettings {
    fn default() -> PoolSettings {
        PoolSettings {
            epsilon: 0.1,
            selection: SelectionMode::ValidTd,
            heldout_every: 10,
            update_during_heldout: false,
        }
    }
}

impl PoolSettings {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) || !self.epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Epsilon-greedy pick over metric scores: with probability epsilon a
/// uniform index, otherwise the argmin with ties broken to the lowest index.
pub fn select_from_scores(scores: &[f64], epsilon: f64, rng: &mut ChaCha8Rng) -> usize {
    select_traced(scores, epsilon, rng).0
}

/// As [`select_from_scores`], also reporting whether the greedy branch was
/// taken (false means the epsilon coin chose uniformly).
pub fn select_traced(scores: &[f64], epsilon: f64, rng: &mut ChaCha8Rng) -> (usize, bool) {
    assert!(!scores.is_empty(), "selection over an empty pool");
    if rng.gen::<f64>() < epsilon {
        return (rng.gen_range(0..scores.len()), false);
    }
    let mut best = 0usize;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s < scores[best] {
            best = i;
        }
    }
    (best, true)
}

/// Uniform action in the [-1, 1] box, used during warm-up.
pub fn uniform_action(dim: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    Array1::from_shape_fn(dim, |_| rng.gen_range(-1.0..1.0))
}

#[derive(Debug, Clone, Default)]
pub struct PoolStepStats {
    pub critic_updates: u64,
    pub actor_updates: u64,
    /// Agents whose parameters were reset this step (reset regularizer).
    pub resets: Vec<usize>,
}

pub struct AgentPool {
    pub labels: Vec<String>,
    pub agents: Vec<SacAgent>,
    pub buffer: ReplayBuffer,
    pub heldout: HeldoutBuffer,
    pub settings: PoolSettings,
    select_rng: ChaCha8Rng,
    shared_metric_rng: ChaCha8Rng,
    agent_metric_rngs: Vec<ChaCha8Rng>,
    agent_act_rngs: Vec<ChaCha8Rng>,
    agent_reset_rngs: Vec<ChaCha8Rng>,
    /// How many times each agent acted in the environment.
    act_counts: Vec<u64>,
    /// How many times each agent was picked by the greedy branch.
    greedy_counts: Vec<u64>,
    /// Held-out reads observed during gradient phases; stays zero because
    /// updates only ever see the replay buffer.
    gradient_heldout_reads: u64,
}

impl AgentPool {
    /// Builds K agents sharing `base` except for their regularizer, each
    /// with its own rng stream block derived from (seed, index).
    pub fn new(
        base: &SacConfig,
        presets: &[String],
        settings: PoolSettings,
        capacity: usize,
        seed: u64,
    ) -> Result<AgentPool> {
        if presets.is_empty() {
            return Err(Error::InvalidConfig("pool needs at least one agent".into()));
        }
        settings.validate()?;
        let mut labels = Vec::with_capacity(presets.len());
        let mut agents = Vec::with_capacity(presets.len());
        let mut agent_metric_rngs = Vec::with_capacity(presets.len());
        let mut agent_act_rngs = Vec::with_capacity(presets.len());
        let mut agent_reset_rngs = Vec::with_capacity(presets.len());
        for (i, preset) in presets.iter().enumerate() {
            let reg = RegularizerConfig::parse(preset)?;
            labels.push(reg.label());
            let mut cfg = base.clone();
            cfg.reg = reg;
            cfg.validate()?;
            agents.push(SacAgent::new(cfg, rng::agent_stream(seed, i))?);
            agent_metric_rngs.push(rng::agent_metric_stream(seed, i));
            agent_act_rngs.push(rng::agent_action_stream(seed, i));
            agent_reset_rngs.push(rng::agent_reset_stream(seed, i));
        }
        let k = agents.len();
        Ok(AgentPool {
            labels,
            agents,
            buffer: ReplayBuffer::new(capacity),
            heldout: HeldoutBuffer::new(),
            settings,
            select_rng: rng::stream(seed, rng::STREAM_SELECT),
            shared_metric_rng: rng::stream(seed, rng::STREAM_METRIC),
            agent_metric_rngs,
            agent_act_rngs,
            agent_reset_rngs,
            act_counts: vec![0; k],
            greedy_counts: vec![0; k],
            gradient_heldout_reads: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.agents.len()
    }

    pub fn act_counts(&self) -> &[u64] {
        &self.act_counts
    }

    pub fn greedy_counts(&self) -> &[u64] {
        &self.greedy_counts
    }

    pub fn gradient_heldout_reads(&self) -> u64 {
        self.gradient_heldout_reads
    }

    /// Current per-agent selection scores, or None when the configured
    /// metric is not yet computable (no held-out data, or empty buffer) and
    /// selection must fall back to uniform. Uniform mode never has scores.
    ///
    /// All agents are scored on identical data: the full held-out buffer for
    /// valid_td, one shared minibatch for train_td and q_gap.
    pub fn selection_scores(&mut self) -> Result<Option<Vec<f64>>> {
        let batch = match self.settings.selection {
            SelectionMode::Uniform => return Ok(None),
            SelectionMode::ValidTd => {
                if self.heldout.is_empty() {
                    return Ok(None);
                }
                Batch::from_transitions(self.heldout.transitions().iter())?
            }
            SelectionMode::TrainTd | SelectionMode::QGap => {
                if self.buffer.is_empty() {
                    return Ok(None);
                }
                let n = self.agents[0].cfg.batch_size;
                self.buffer.sample_batch(n, &mut self.shared_metric_rng)?
            }
        };
        let mut scores = Vec::with_capacity(self.agents.len());
        for (agent, mrng) in self.agents.iter().zip(&mut self.agent_metric_rngs) {
            let s = match self.settings.selection {
                SelectionMode::QGap => q_gap_on(agent, &batch.obs, &batch.actions, mrng)?,
                _ => validation_td_batch(agent, &batch, mrng)?,
            };
            scores.push(s);
        }
        Ok(Some(scores))
    }

    /// Per-step epsilon-greedy selection. Returns the index and whether the
    /// greedy branch won the coin; uniform fallback (no scores yet) counts
    /// as non-greedy.
    pub fn select_agent(&mut self) -> Result<(usize, bool)> {
        let picked = match self.selection_scores()? {
            Some(scores) => {
                let (idx, greedy) = select_traced(&scores, self.settings.epsilon, &mut self.select_rng);
                if greedy {
                    self.greedy_counts[idx] += 1;
                }
                (idx, greedy)
            }
            None => (self.select_rng.gen_range(0..self.k()), false),
        };
        Ok(picked)
    }

    /// Uniform per-episode pick (uniform selection mode).
    pub fn uniform_pick(&mut self) -> usize {
        self.select_rng.gen_range(0..self.k())
    }

    /// Stochastic action of agent `j` from its own action stream.
    pub fn act(&mut self, j: usize, obs: &Array1<f64>) -> Result<Array1<f64>> {
        let obs_mat = obs.clone().insert_axis(Axis(0));
        let (actions, _) = self.agents[j].sample_actions(&obs_mat, &mut self.agent_act_rngs[j])?;
        self.act_counts[j] += 1;
        Ok(actions.row(0).to_owned())
    }

    /// One gradient phase: every agent takes its configured UTD updates
    /// against the shared buffer, after applying any due parameter reset.
    pub fn update_all(&mut self, env_step: u64) -> Result<PoolStepStats> {
        let reads_before = self.heldout.read_count();
        let mut stats = PoolStepStats::default();
        for i in 0..self.agents.len() {
            if reset_due(&self.agents[i].cfg.reg, env_step) {
                self.agents[i].reset(&mut self.agent_reset_rngs[i])?;
                stats.resets.push(i);
            }
            let s = self.agents[i].train_step(&self.buffer)?;
            stats.critic_updates += s.critic_updates as u64;
            stats.actor_updates += s.actor_updates as u64;
        }
        self.gradient_heldout_reads += self.heldout.read_count() - reads_before;
        Ok(stats)
    }

    /// The agent whose curve a log row reports: the greedy argmin in metric
    /// modes (lowest index before any metric exists), agent 0 in uniform
    /// mode with one agent, and a uniform draw from the shared metric stream
    /// otherwise.
    pub fn reporting_agent(&mut self) -> Result<usize> {
        match self.settings.selection {
            SelectionMode::Uniform => {
                if self.k() == 1 {
                    Ok(0)
                } else {
                    Ok(self.shared_metric_rng.gen_range(0..self.k()))
                }
            }
            _ => match self.selection_scores()? {
                Some(scores) => Ok(select_traced(&scores, 0.0, &mut self.select_rng).0),
                None => Ok(0),
            },
        }
    }
}

/// Run events worth a line in the JSONL stream: which agent acted, held-out
/// episode boundaries, parameter resets, and evaluations.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RunEvent {
    Selection {
        env_step: u64,
        agent: usize,
        greedy: bool,
    },
    HeldoutEpisode {
        env_step: u64,
        episode: u64,
    },
    Reset {
        env_step: u64,
        agent: usize,
        label: String,
    },
    Eval {
        env_step: u64,
        agent: usize,
        label: String,
        mean_return: f64,
    },
}

#[derive(Debug, Clone)]
pub struct RunParams {
    pub total_steps: u64,
    pub log_every: u64,
    pub eval_episodes: usize,
    pub mc_traj: usize,
    /// Minibatch size for the logged train-TD and Q-gap diagnostics.
    pub metric_batch: usize,
    /// Method label written to the metric log.
    pub method: String,
    pub seed: u64,
}

impl RunParams {
    pub fn new(method: &str, seed: u64, total_steps: u64) -> RunParams {
        RunParams {
            total_steps,
            log_every: 5000,
            eval_episodes: 10,
            mc_traj: 10,
            metric_batch: 256,
            method: method.into(),
            seed,
        }
    }
}

pub struct RunOutput {
    pub log: MetricLog,
    pub events: Vec<RunEvent>,
    /// Environment steps spent in training episodes.
    pub training_steps: u64,
    /// Environment steps spent collecting held-out episodes; training plus
    /// held-out always equals the consumed budget.
    pub heldout_steps: u64,
}

/// The full training loop: warm-up with uniform actions, per-step selection
/// and pool updates, one held-out episode after every `heldout_every`
/// training episodes (acted with the same selection strategy, counted
/// against the step budget, no gradient updates unless configured), and
/// periodic evaluation of the reporting agent with metric logging.
pub fn run_avtd(pool: &mut AgentPool, env: &dyn Env, params: &RunParams) -> Result<RunOutput> {
    if params.log_every == 0 {
        return Err(Error::InvalidConfig("log_every must be positive".into()));
    }
    let warmup = pool.agents[0].cfg.warmup_steps;
    let act_dim = env.spec().action_dim;
    let mut env_rng = rng::stream(params.seed, rng::STREAM_ENV);
    let mut warmup_rng = rng::stream(params.seed, rng::STREAM_WARMUP);
    let mut eval_rng = rng::stream(params.seed, rng::STREAM_EVAL);
    let mut out = RunOutput {
        log: MetricLog::new(),
        events: Vec::new(),
        training_steps: 0,
        heldout_steps: 0,
    };
    let mut step: u64 = 0;
    let mut episode: u64 = 0;
    let mut episodes_since_heldout: u64 = 0;
    'run: while step < params.total_steps {
        let heldout_episode = pool.settings.heldout_every > 0
            && episodes_since_heldout >= pool.settings.heldout_every;
        if heldout_episode {
            out.events.push(RunEvent::HeldoutEpisode {
                env_step: step,
                episode,
            });
        }
        let (mut state, mut obs) = env.reset(&mut env_rng);
        let episode_agent = match pool.settings.selection {
            SelectionMode::Uniform => {
                let j = pool.uniform_pick();
                if step >= warmup {
                    out.events.push(RunEvent::Selection {
                        env_step: step,
                        agent: j,
                        greedy: false,
                    });
                }
                Some(j)
            }
            _ => None,
        };
        loop {
            if step >= params.total_steps {
                break 'run;
            }
            let in_warmup = step < warmup;
            let action = if in_warmup {
                uniform_action(act_dim, &mut warmup_rng)
            } else {
                let j = match episode_agent {
                    Some(j) => j,
                    None => {
                        let (j, greedy) = pool.select_agent()?;
                        out.events.push(RunEvent::Selection {
                            env_step: step,
                            agent: j,
                            greedy,
                        });
                        j
                    }
                };
                pool.act(j, &obs)?
            };
            let step_out = env.step(&state, &action)?;
            let t = Transition {
                obs,
                action,
                reward: step_out.reward,
                next_obs: step_out.obs.clone(),
                terminated: step_out.terminated,
                truncated: step_out.truncated,
            };
            if heldout_episode {
                pool.heldout.append(t);
                out.heldout_steps += 1;
            } else {
                pool.buffer.append(t);
                out.training_steps += 1;
            }
            step += 1;
            if !in_warmup && (!heldout_episode || pool.settings.update_during_heldout) {
                let stats = pool.update_all(step)?;
                for &i in &stats.resets {
                    out.events.push(RunEvent::Reset {
                        env_step: step,
                        agent: i,
                        label: pool.labels[i].clone(),
                    });
                }
            }
            if step % params.log_every == 0 {
                log_point(pool, env, params, step, &mut eval_rng, &mut out)?;
            }
            if step_out.terminated || step_out.truncated {
                break;
            }
            state = step_out.state;
            obs = step_out.obs;
        }
        episode += 1;
        if heldout_episode {
            episodes_since_heldout = 0;
        } else {
            episodes_since_heldout += 1;
        }
    }
    Ok(out)
}

/// One metric-log row: evaluate the reporting agent's deterministic policy,
/// then the four diagnostics where their inputs exist. Everything draws
/// from evaluation or metric streams, never from training ones.
fn log_point(
    pool: &mut AgentPool,
    env: &dyn Env,
    params: &RunParams,
    step: u64,
    eval_rng: &mut ChaCha8Rng,
    out: &mut RunOutput,
) -> Result<()> {
    let g = pool.reporting_agent()?;
    let mean_return = eval_return(&pool.agents[g], env, params.eval_episodes, eval_rng)?;
    out.events.push(RunEvent::Eval {
        env_step: step,
        agent: g,
        label: pool.labels[g].clone(),
        mean_return,
    });
    let agent = &pool.agents[g];
    let train_td = if pool.buffer.is_empty() {
        None
    } else {
        let batch = pool
            .buffer
            .sample_batch(params.metric_batch, &mut pool.shared_metric_rng)?;
        Some(validation_td_batch(
            agent,
            &batch,
            &mut pool.agent_metric_rngs[g],
        )?)
    };
    let valid_td = if pool.heldout.is_empty() {
        None
    } else {
        Some(metrics::validation_td(
            agent,
            &pool.heldout,
            &mut pool.agent_metric_rngs[g],
        )?)
    };
    let q_gap = if pool.buffer.is_empty() {
        None
    } else {
        Some(metrics::q_gap(
            agent,
            &pool.buffer,
            params.metric_batch,
            &mut pool.shared_metric_rng,
        )?)
    };
    let mc = if params.mc_traj == 0 {
        None
    } else {
        Some(mc_bias(agent, env, params.mc_traj, &mut pool.shared_metric_rng)?)
    };
    out.log.push(MetricRecord {
        method: params.method.clone(),
        seed: params.seed,
        env_step: step,
        eval_return: mean_return,
        train_td,
        valid_td,
        q_gap,
        mc_bias: mc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvSpec, EnvState, StepOut};
    use crate::rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    /// Deterministic 1-d environment: the state walks 0, 1, ..., horizon,
    /// reward is the clipped action, reset ignores the rng. Cheap enough to
    /// drive thousands of pool steps in a unit test.
    struct Line {
        spec: EnvSpec,
    }

    impl Line {
        fn new(horizon: u32) -> Line {
            Line {
                spec: EnvSpec {
                    name: "line".into(),
                    observation_dim: 1,
                    action_dim: 1,
                    horizon,
                    reward_min: -1.0,
                    reward_max: 1.0,
                },
            }
        }
    }

    impl Env for Line {
        fn spec(&self) -> &EnvSpec {
            &self.spec
        }

        fn reset(&self, _rng: &mut ChaCha8Rng) -> (EnvState, Array1<f64>) {
            (
                EnvState {
                    phys: vec![0.0],
                    step: 0,
                    noise_seed: 0,
                },
                Array1::from(vec![0.0]),
            )
        }

        fn step(&self, state: &EnvState, action: &Array1<f64>) -> Result<StepOut> {
            let step = state.step + 1;
            let x = state.phys[0] + 1.0;
            Ok(StepOut {
                state: EnvState {
                    phys: vec![x],
                    step,
                    noise_seed: 0,
                },
                obs: Array1::from(vec![x / self.spec.horizon as f64]),
                reward: action[0].clamp(-1.0, 1.0),
                terminated: false,
                truncated: step >= self.spec.horizon,
            })
        }
    }

    fn tiny_cfg() -> SacConfig {
        let mut cfg = SacConfig::new(1, 1);
        cfg.hidden = vec![8, 8];
        cfg.batch_size = 8;
        cfg.warmup_steps = 10;
        cfg.utd = 1;
        cfg
    }

    fn pool_with(
        presets: &[&str],
        settings: PoolSettings,
        cfg: SacConfig,
        seed: u64,
    ) -> AgentPool {
        let presets: Vec<String> = presets.iter().map(|s| s.to_string()).collect();
        AgentPool::new(&cfg, &presets, settings, 100_000, seed).unwrap()
    }

    #[test]
    fn greedy_argmin_picks_lowest_score() {
        let mut r = rng::stream(1, 1);
        assert_eq!(select_from_scores(&[0.5, 0.2, 0.9], 0.0, &mut r), 1);
        assert_eq!(select_from_scores(&[0.1], 0.0, &mut r), 0);
        // Ties break to the lowest index.
        assert_eq!(select_from_scores(&[0.3, 0.3, 0.3], 0.0, &mut r), 0);
        assert_eq!(select_from_scores(&[1.0, 0.3, 0.3], 0.0, &mut r), 1);
    }

    #[test]
    fn single_agent_always_selected() {
        let mut r = rng::stream(1, 2);
        for eps in [0.0, 0.5, 1.0] {
            for _ in 0..20 {
                assert_eq!(select_from_scores(&[2.0], eps, &mut r), 0);
            }
        }
    }

    // epsilon = 1 must be uniform over K = 5: frequencies within 0.2 +/- 0.01
    // and a chi-square goodness-of-fit below the 99% quantile.
    #[test]
    fn full_epsilon_is_uniform() {
        let mut r = rng::stream(2, 1);
        let scores = [0.9, 0.1, 0.5, 0.2, 0.7]; // must be ignored
        let n = 100_000usize;
        let mut counts = [0u64; 5];
        for _ in 0..n {
            counts[select_from_scores(&scores, 1.0, &mut r)] += 1;
        }
        let expected = n as f64 / 5.0;
        let mut chi2 = 0.0;
        for &c in &counts {
            let f = c as f64 / n as f64;
            assert!((f - 0.2).abs() < 0.01, "freq {f}");
            chi2 += (c as f64 - expected) * (c as f64 - expected) / expected;
        }
        let crit = ChiSquared::new(4.0).unwrap().inverse_cdf(0.99);
        assert!(chi2 < crit, "chi2 {chi2} >= {crit}");
    }

    // Overall pick frequency of the unique argmin agent is
    // 1 - eps (K-1)/K: the greedy branch always picks it and the uniform
    // branch picks it 1/K of the time.
    #[test]
    fn known_best_frequency_matches_formula() {
        let mut r = rng::stream(2, 2);
        let scores = [5.0, 0.01, 3.0, 7.0, 4.0];
        let eps = 0.1;
        let n = 10_000usize;
        let mut best = 0u64;
        for _ in 0..n {
            if select_from_scores(&scores, eps, &mut r) == 1 {
                best += 1;
            }
        }
        let f = best as f64 / n as f64;
        let expect = 1.0 - eps * 4.0 / 5.0;
        assert!((f - expect).abs() < 0.02, "freq {f} expected {expect}");
    }

    // Any strictly increasing transform of all scores leaves the greedy
    // pick distribution unchanged.
    #[test]
    fn selection_invariant_to_monotone_transform() {
        let mut r = rng::stream(2, 3);
        for _ in 0..200 {
            let scores: Vec<f64> = (0..4).map(|_| r.gen_range(-3.0..3.0)).collect();
            let mapped: Vec<f64> = scores.iter().map(|s| (s * 0.5).exp() + 1.0).collect();
            let mut ra = rng::stream(9, 9);
            let mut rb = rng::stream(9, 9);
            assert_eq!(
                select_from_scores(&scores, 0.0, &mut ra),
                select_from_scores(&mapped, 0.0, &mut rb)
            );
        }
    }

    #[test]
    fn pool_rejects_empty_and_bad_epsilon() {
        let cfg = tiny_cfg();
        assert!(AgentPool::new(&cfg, &[], PoolSettings::default(), 100, 0).is_err());
        let settings = PoolSettings {
            epsilon: 1.5,
            ..PoolSettings::default()
        };
        assert!(AgentPool::new(&cfg, &["plain".into()], settings, 100, 0).is_err());
    }

    #[test]
    fn pool_build_labels_canonical() {
        let pool = pool_with(
            &["plain", "droq0.01", "ln+wd0.01"],
            PoolSettings::default(),
            tiny_cfg(),
            3,
        );
        assert_eq!(pool.labels, vec!["plain", "ln+do0.01", "ln+wd0.01"]);
        assert_eq!(pool.k(), 3);
    }

    #[test]
    fn selection_falls_back_to_uniform_without_heldout() {
        let mut pool = pool_with(&["plain", "ln"], PoolSettings::default(), tiny_cfg(), 4);
        assert!(pool.selection_scores().unwrap().is_none());
        let (_, greedy) = pool.select_agent().unwrap();
        assert!(!greedy);
        assert_eq!(pool.greedy_counts(), &[0, 0]);
    }

    #[test]
    fn update_counts_are_k_times_utd() {
        let mut cfg = tiny_cfg();
        cfg.utd = 9;
        cfg.warmup_steps = 0;
        let mut pool = pool_with(&["plain", "ln", "fn"], PoolSettings::default(), cfg, 5);
        let mut r = rng::stream(5, 99);
        for i in 0..20 {
            pool.buffer.append(Transition {
                obs: Array1::from(vec![i as f64 / 20.0]),
                action: Array1::from(vec![r.gen_range(-1.0..1.0)]),
                reward: 0.1,
                next_obs: Array1::from(vec![(i + 1) as f64 / 20.0]),
                terminated: false,
                truncated: false,
            });
        }
        let stats = pool.update_all(1).unwrap();
        assert_eq!(stats.critic_updates, 27);
        assert_eq!(pool.gradient_heldout_reads(), 0);
    }

    fn run_with(
        presets: &[&str],
        settings: PoolSettings,
        cfg: SacConfig,
        seed: u64,
        total: u64,
        horizon: u32,
    ) -> (AgentPool, RunOutput) {
        let env = Line::new(horizon);
        let mut pool = pool_with(presets, settings, cfg, seed);
        let mut params = RunParams::new("test", seed, total);
        params.log_every = 1_000_000; // no log points unless a test wants them
        params.eval_episodes = 1;
        params.mc_traj = 1;
        params.metric_batch = 8;
        let out = run_avtd(&mut pool, &env, &params).unwrap();
        (pool, out)
    }

    // 10 training episodes then one held-out episode, horizon 5: after 55
    // steps the replay buffer holds 50 transitions and heldout holds 5.
    #[test]
    fn heldout_cadence_and_budget_accounting() {
        let mut cfg = tiny_cfg();
        cfg.warmup_steps = 0;
        let (pool, out) = run_with(&["plain"], PoolSettings::default(), cfg, 6, 55, 5);
        assert_eq!(pool.buffer.len(), 50);
        assert_eq!(pool.heldout.len(), 5);
        assert_eq!(out.training_steps, 50);
        assert_eq!(out.heldout_steps, 5);
        assert_eq!(out.training_steps + out.heldout_steps, 55);
        let heldout_events: Vec<_> = out
            .events
            .iter()
            .filter(|e| matches!(e, RunEvent::HeldoutEpisode { .. }))
            .collect();
        assert_eq!(heldout_events.len(), 1);
        assert_eq!(pool.gradient_heldout_reads(), 0);
    }

    #[test]
    fn zero_steps_is_an_empty_run() {
        let (pool, out) = run_with(&["plain"], PoolSettings::default(), tiny_cfg(), 7, 0, 5);
        assert!(out.log.is_empty());
        assert!(out.events.is_empty());
        assert_eq!(pool.buffer.len(), 0);
        assert_eq!(pool.agents[0].critic_updates, 0);
    }

    #[test]
    fn heldout_disabled_when_cadence_zero() {
        let settings = PoolSettings {
            heldout_every: 0,
            ..PoolSettings::default()
        };
        let (pool, out) = run_with(&["plain"], settings, tiny_cfg(), 8, 60, 5);
        assert_eq!(pool.heldout.len(), 0);
        assert_eq!(out.training_steps, 60);
    }

    // The pool must not update during held-out episodes by default, and must
    // when the flag is set. Horizon 5, heldout_every 1, no warmup: episodes
    // alternate train, heldout, train, ...
    #[test]
    fn no_gradients_during_heldout_by_default() {
        let mut cfg = tiny_cfg();
        cfg.warmup_steps = 0;
        let settings = PoolSettings {
            heldout_every: 1,
            ..PoolSettings::default()
        };
        let (pool, _) = run_with(&["plain"], settings.clone(), cfg.clone(), 9, 20, 5);
        // 20 steps = 2 training episodes (10 steps) + 2 held-out episodes.
        assert_eq!(pool.agents[0].critic_updates, 10);

        let settings_on = PoolSettings {
            update_during_heldout: true,
            ..settings
        };
        let env = Line::new(5);
        let mut pool2 = pool_with(&["plain"], settings_on, cfg, 9);
        let mut params = RunParams::new("test", 9, 20);
        params.log_every = 1_000_000;
        let _ = run_avtd(&mut pool2, &env, &params).unwrap();
        assert_eq!(pool2.agents[0].critic_updates, 20);
    }

    // A pool of one in uniform mode with held-out collection off is plain
    // SAC: replaying the same streams by hand step for step must land on
    // bitwise-identical parameters.
    #[test]
    fn uniform_pool_of_one_is_plain_sac_bit_exact() {
        let cfg = tiny_cfg();
        let seed = 11;
        let total = 40u64;
        let settings = PoolSettings {
            selection: SelectionMode::Uniform,
            heldout_every: 0,
            ..PoolSettings::default()
        };
        let (pool, _) = run_with(&["plain"], settings, cfg.clone(), seed, total, 5);

        // Reference: a bare agent driven by the same stream layout.
        let env = Line::new(5);
        let mut ref_cfg = cfg;
        ref_cfg.reg = RegularizerConfig::parse("plain").unwrap();
        let mut agent = SacAgent::new(ref_cfg.clone(), rng::agent_stream(seed, 0)).unwrap();
        let mut act_rng = rng::agent_action_stream(seed, 0);
        let mut env_rng = rng::stream(seed, rng::STREAM_ENV);
        let mut warmup_rng = rng::stream(seed, rng::STREAM_WARMUP);
        let mut buffer = ReplayBuffer::new(100_000);
        let mut step = 0u64;
        'outer: loop {
            let (mut state, mut obs) = env.reset(&mut env_rng);
            loop {
                if step >= total {
                    break 'outer;
                }
                let action = if step < ref_cfg.warmup_steps {
                    uniform_action(1, &mut warmup_rng)
                } else {
                    let m = obs.clone().insert_axis(Axis(0));
                    let (a, _) = agent.sample_actions(&m, &mut act_rng).unwrap();
                    a.row(0).to_owned()
                };
                let so = env.step(&state, &action).unwrap();
                buffer.append(Transition {
                    obs,
                    action,
                    reward: so.reward,
                    next_obs: so.obs.clone(),
                    terminated: so.terminated,
                    truncated: so.truncated,
                });
                step += 1;
                // the warmup flag is read before the increment, so the first
                // update lands on post-increment step warmup + 1
                if step > ref_cfg.warmup_steps {
                    agent.train_step(&buffer).unwrap();
                }
                if so.terminated || so.truncated {
                    break;
                }
                state = so.state;
                obs = so.obs;
            }
        }
        let a = &pool.agents[0];
        assert_eq!(a.critic_updates, agent.critic_updates);
        assert_eq!(a.log_alpha.to_bits(), agent.log_alpha.to_bits());
        for (pa, pb) in [
            (&a.actor, &agent.actor),
            (&a.q1, &agent.q1),
            (&a.q2, &agent.q2),
            (&a.q1_tgt, &agent.q1_tgt),
            (&a.q2_tgt, &agent.q2_tgt),
        ] {
            for (la, lb) in pa.linears.iter().zip(&pb.linears) {
                assert_eq!(la.w, lb.w);
                assert_eq!(la.b, lb.b);
            }
        }
    }

    // Metric-mode pools select per step after held-out data exists; the
    // events must show greedy selections and every agent training each step.
    #[test]
    fn metric_mode_selects_per_step_and_updates_everyone() {
        let mut cfg = tiny_cfg();
        cfg.warmup_steps = 5;
        let settings = PoolSettings {
            heldout_every: 2,
            ..PoolSettings::default()
        };
        let env = Line::new(5);
        let mut pool = pool_with(&["plain", "ln"], settings, cfg, 13);
        let mut params = RunParams::new("avtd", 13, 60);
        params.log_every = 1_000_000;
        let out = run_avtd(&mut pool, &env, &params).unwrap();
        let selections = out
            .events
            .iter()
            .filter(|e| matches!(e, RunEvent::Selection { .. }))
            .count();
        // every post-warmup training step selects (held-out steps select too)
        assert_eq!(selections as u64, 60 - 5);
        assert!(out
            .events
            .iter()
            .any(|e| matches!(e, RunEvent::Selection { greedy: true, .. })));
        // both agents updated on every post-warmup training step
        assert_eq!(pool.agents[0].critic_updates, pool.agents[1].critic_updates);
        assert!(pool.agents[0].critic_updates > 0);
        assert_eq!(pool.gradient_heldout_reads(), 0);
    }

    #[test]
    fn reset_preset_fires_and_is_reported() {
        let mut cfg = tiny_cfg();
        cfg.warmup_steps = 0;
        let settings = PoolSettings {
            heldout_every: 0,
            selection: SelectionMode::Uniform,
            ..PoolSettings::default()
        };
        let env = Line::new(5);
        let mut pool = pool_with(&["reset10", "plain"], settings, cfg, 17);
        let before = pool.agents[0].q1.linears[0].w.clone();
        let mut params = RunParams::new("r", 17, 25);
        params.log_every = 1_000_000;
        let out = run_avtd(&mut pool, &env, &params).unwrap();
        let resets: Vec<u64> = out
            .events
            .iter()
            .filter_map(|e| match e {
                RunEvent::Reset { env_step, agent: 0, .. } => Some(*env_step),
                _ => None,
            })
            .collect();
        assert_eq!(resets, vec![10, 20]);
        assert!(!out
            .events
            .iter()
            .any(|e| matches!(e, RunEvent::Reset { agent: 1, .. })));
        // parameters actually changed at the reset
        assert_ne!(pool.agents[0].q1.linears[0].w, before);
    }

    #[test]
    fn log_points_carry_all_metrics_once_heldout_exists() {
        let mut cfg = tiny_cfg();
        cfg.warmup_steps = 2;
        let settings = PoolSettings {
            heldout_every: 1,
            ..PoolSettings::default()
        };
        let env = Line::new(5);
        let mut pool = pool_with(&["plain", "ln"], settings, cfg, 19);
        let mut params = RunParams::new("avtd", 19, 30);
        params.log_every = 10;
        params.eval_episodes = 2;
        params.mc_traj = 2;
        params.metric_batch = 8;
        let out = run_avtd(&mut pool, &env, &params).unwrap();
        assert_eq!(out.log.len(), 3);
        let records = out.log.records();
        assert_eq!(records[0].env_step, 10);
        assert_eq!(records[2].env_step, 30);
        // By step 10 one held-out episode exists (episodes 0 trains, 1 held
        // out), so every diagnostic is present.
        for r in records {
            assert!(r.train_td.is_some());
            assert!(r.valid_td.is_some());
            assert!(r.q_gap.is_some());
            assert!(r.mc_bias.is_some());
            assert_eq!(r.method, "avtd");
        }
    }

    #[test]
    fn selection_mode_labels_round_trip() {
        for s in ["valid_td", "train_td", "q_gap", "uniform"] {
            assert_eq!(SelectionMode::parse(s).unwrap().label(), s);
        }
        assert!(SelectionMode::parse("greedy").is_err());
    }
}
