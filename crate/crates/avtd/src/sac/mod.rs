//! Soft actor-critic on top of the plain MLP stack: tanh-Gaussian actor,
//! twin critics with polyak-averaged targets, learnable temperature, and a
//! configurable number of critic updates per environment step.
//!
//! The critic carries whatever regularizer recipe the config names; the
//! actor always stays plain. One agent is mutated by one logical thread and
//! owns its RNG stream, so training is deterministic per (seed, agent).

pub mod gaussian;

use crate::error::{Error, Result};
use crate::nn::{
    adam_for_params, adam_step, mlp_backward, mlp_backward_input, mlp_forward, mlp_forward_infer,
    AdamHyper, AdamState, MlpSpec, Mode, ParamSet, ScalarAdam,
};
use crate::regularizers::{build_critic_spec, RegularizerConfig};
use crate::replay::{Batch, ReplayBuffer};
use gaussian::{split_head, squash_mean, squash_sample};
use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackupMode {
    /// a' sampled from the policy; target gets the -alpha*logp bonus.
    Entropy,
    /// a' = tanh(mu(s')); no entropy term. Used by the offline analyses.
    Deterministic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SacConfig {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
    pub discount: f64,
    pub tau: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub init_temperature: f64,
    pub warmup_steps: u64,
    pub utd: u32,
    pub policy_delay: u32,
    pub backup: BackupMode,
    pub target_entropy: f64,
    pub reg: RegularizerConfig,
}

impl SacConfig {
    pub fn new(obs_dim: usize, action_dim: usize) -> SacConfig {
        SacConfig {
            obs_dim,
            action_dim,
            hidden: vec![256, 256],
            discount: 0.99,
            tau: 0.005,
            lr: 3e-4,
            batch_size: 256,
            init_temperature: 1.0,
            warmup_steps: 5000,
            utd: 1,
            policy_delay: 1,
            backup: BackupMode::Entropy,
            target_entropy: -(action_dim as f64),
            reg: RegularizerConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.obs_dim == 0 || self.action_dim == 0 {
            return bad("obs_dim and action_dim must be positive".into());
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&w| w == 0) {
            return bad("hidden widths must be non-empty and positive".into());
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return bad(format!("discount must lie in (0, 1), got {}", self.discount));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.init_temperature > 0.0 && self.init_temperature.is_finite()) {
            return bad(format!(
                "init_temperature must be positive, got {}",
                self.init_temperature
            ));
        }
        if self.utd == 0 || self.policy_delay == 0 {
            return bad("utd and policy_delay must be >= 1".into());
        }
        if !self.target_entropy.is_finite() {
            return bad("target_entropy must be finite".into());
        }
        self.reg.validate()
    }

    pub fn actor_spec(&self) -> MlpSpec {
        let mut widths = vec![self.obs_dim];
        widths.extend_from_slice(&self.hidden);
        widths.push(2 * self.action_dim);
        MlpSpec::plain(&widths)
    }

    pub fn critic_spec(&self) -> MlpSpec {
        let mut widths = vec![self.obs_dim + self.action_dim];
        widths.extend_from_slice(&self.hidden);
        widths.push(1);
        build_critic_spec(&self.reg, &widths)
    }
}

/// Per-environment-step update accounting.
#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub critic_updates: u32,
    pub actor_updates: u32,
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
    pub alpha: f64,
}

pub struct SacAgent {
    pub cfg: SacConfig,
    pub actor_spec: MlpSpec,
    pub critic_spec: MlpSpec,
    pub actor: ParamSet,
    pub q1: ParamSet,
    pub q2: ParamSet,
    pub q1_tgt: ParamSet,
    pub q2_tgt: ParamSet,
    pub log_alpha: f64,
    /// Lifetime count of critic updates; the actor updates whenever this
    /// hits a multiple of policy_delay.
    pub critic_updates: u64,
    actor_opt: AdamState,
    q1_opt: AdamState,
    q2_opt: AdamState,
    alpha_opt: ScalarAdam,
    pub rng: ChaCha8Rng,
}

impl SacAgent {
    pub fn new(cfg: SacConfig, mut rng: ChaCha8Rng) -> Result<SacAgent> {
        cfg.validate()?;
        let actor_spec = cfg.actor_spec();
        let critic_spec = cfg.critic_spec();
        let actor = ParamSet::init(&actor_spec, &mut rng)?;
        let q1 = ParamSet::init(&critic_spec, &mut rng)?;
        let q2 = ParamSet::init(&critic_spec, &mut rng)?;
        let q1_tgt = q1.clone();
        let q2_tgt = q2.clone();
        let actor_hyper = AdamHyper {
            lr: cfg.lr,
            ..AdamHyper::default()
        };
        let critic_hyper = AdamHyper {
            lr: cfg.lr,
            weight_decay: cfg.reg.weight_decay,
            ..AdamHyper::default()
        };
        let actor_opt = adam_for_params(&actor, actor_hyper);
        let q1_opt = adam_for_params(&q1, critic_hyper);
        let q2_opt = adam_for_params(&q2, critic_hyper);
        let alpha_opt = ScalarAdam::new(AdamHyper {
            lr: cfg.lr,
            ..AdamHyper::default()
        });
        let log_alpha = cfg.init_temperature.ln();
        Ok(SacAgent {
            cfg,
            actor_spec,
            critic_spec,
            actor,
            q1,
            q2,
            q1_tgt,
            q2_tgt,
            log_alpha,
            critic_updates: 0,
            actor_opt,
            q1_opt,
            q2_opt,
            alpha_opt,
            rng,
        })
    }

    /// Re-initializes everything the agent has learned (parameters,
    /// optimizer moments, temperature, update counter) from fresh draws.
    /// The replay buffer lives outside the agent and is untouched.
    pub fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        self.actor = ParamSet::init(&self.actor_spec, rng)?;
        self.q1 = ParamSet::init(&self.critic_spec, rng)?;
        self.q2 = ParamSet::init(&self.critic_spec, rng)?;
        self.q1_tgt = self.q1.clone();
        self.q2_tgt = self.q2.clone();
        let actor_hyper = AdamHyper {
            lr: self.cfg.lr,
            ..AdamHyper::default()
        };
        let critic_hyper = AdamHyper {
            lr: self.cfg.lr,
            weight_decay: self.cfg.reg.weight_decay,
            ..AdamHyper::default()
        };
        self.actor_opt = adam_for_params(&self.actor, actor_hyper);
        self.q1_opt = adam_for_params(&self.q1, critic_hyper);
        self.q2_opt = adam_for_params(&self.q2, critic_hyper);
        self.alpha_opt = ScalarAdam::new(AdamHyper {
            lr: self.cfg.lr,
            ..AdamHyper::default()
        });
        self.log_alpha = self.cfg.init_temperature.ln();
        self.critic_updates = 0;
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// Stochastic policy: actions and their log probabilities, drawn with
    /// the caller's RNG so metric evaluation can use a separate stream.
    pub fn sample_actions(
        &self,
        obs: &Array2<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        let out = mlp_forward_infer(&self.actor_spec, &self.actor, obs)?;
        let (mean, log_std) = split_head(&out);
        let xi = standard_normal_matrix(mean.nrows(), mean.ncols(), rng);
        let (actions, _, logp) = squash_sample(&mean, &log_std, &xi);
        Ok((actions, logp))
    }

    /// Deterministic policy head: tanh of the mean.
    pub fn mean_actions(&self, obs: &Array2<f64>) -> Result<Array2<f64>> {
        let out = mlp_forward_infer(&self.actor_spec, &self.actor, obs)?;
        let (mean, _) = split_head(&out);
        Ok(squash_mean(&mean))
    }

    /// Eval-mode point value Q1(s, a); metrics evaluate the first critic.
    pub fn q_point_eval(&self, obs: &Array2<f64>, actions: &Array2<f64>) -> Result<Array1<f64>> {
        let xs = obs_action_input(obs, actions)?;
        let q = mlp_forward_infer(&self.critic_spec, &self.q1, &xs)?;
        Ok(q.column(0).to_owned())
    }

    /// Eval-mode backup value min(Q̄1, Q̄2)(s', a') with the configured
    /// backup mode, using the caller's RNG for the entropy-mode action
    /// draw. Pure: never touches agent state.
    pub fn backup_eval(&self, next_obs: &Array2<f64>, rng: &mut ChaCha8Rng) -> Result<Array1<f64>> {
        let out = mlp_forward_infer(&self.actor_spec, &self.actor, next_obs)?;
        let (mean, log_std) = split_head(&out);
        let (next_actions, logp) = match self.cfg.backup {
            BackupMode::Entropy => {
                let xi = standard_normal_matrix(mean.nrows(), mean.ncols(), rng);
                let (a, _, lp) = squash_sample(&mean, &log_std, &xi);
                (a, Some(lp))
            }
            BackupMode::Deterministic => (squash_mean(&mean), None),
        };
        let xs = obs_action_input(next_obs, &next_actions)?;
        let v1 = mlp_forward_infer(&self.critic_spec, &self.q1_tgt, &xs)?;
        let v2 = mlp_forward_infer(&self.critic_spec, &self.q2_tgt, &xs)?;
        let mut backup = Array1::zeros(v1.nrows());
        for i in 0..v1.nrows() {
            backup[i] = v1[[i, 0]].min(v2[[i, 0]]);
        }
        if let Some(lp) = logp {
            let alpha = self.alpha();
            for i in 0..backup.len() {
                backup[i] -= alpha * lp[i];
            }
        }
        Ok(backup)
    }

    /// TD targets y = r + gamma * bootstrap * backup(s'), train-mode target
    /// forwards (dropout active where configured). Truncated transitions
    /// bootstrap; terminated ones do not.
    pub fn td_targets(&mut self, batch: &Batch) -> Result<Array1<f64>> {
        let out = mlp_forward_infer(&self.actor_spec, &self.actor, &batch.next_obs)?;
        let (mean, log_std) = split_head(&out);
        let alpha = self.alpha();
        let (next_actions, logp) = match self.cfg.backup {
            BackupMode::Entropy => {
                let xi = standard_normal_matrix(mean.nrows(), mean.ncols(), &mut self.rng);
                let (a, _, lp) = squash_sample(&mean, &log_std, &xi);
                (a, Some(lp))
            }
            BackupMode::Deterministic => (squash_mean(&mean), None),
        };
        let xs = obs_action_input(&batch.next_obs, &next_actions)?;
        let (v1, _) = mlp_forward(
            &self.critic_spec,
            &mut self.q1_tgt,
            &xs,
            Mode::Train(&mut self.rng),
        )?;
        let (v2, _) = mlp_forward(
            &self.critic_spec,
            &mut self.q2_tgt,
            &xs,
            Mode::Train(&mut self.rng),
        )?;
        let mut backup = Array1::zeros(v1.nrows());
        for i in 0..v1.nrows() {
            backup[i] = v1[[i, 0]].min(v2[[i, 0]]);
        }
        if let Some(lp) = logp {
            for i in 0..backup.len() {
                backup[i] -= alpha * lp[i];
            }
        }
        let mut y = backup;
        y *= &batch.bootstrap;
        y *= self.cfg.discount;
        y += &batch.rewards;
        Ok(y)
    }

    /// One AdamW step on both critics against shared targets; returns the
    /// mean squared TD error over the batch, averaged over the twins.
    pub fn critic_update(&mut self, batch: &Batch) -> Result<f64> {
        let mut y = self.td_targets(batch)?;
        if self.cfg.reg.critic_noise_std > 0.0 {
            let std = self.cfg.reg.critic_noise_std;
            for v in y.iter_mut() {
                let eps: f64 = self.rng.sample(StandardNormal);
                *v += std * eps;
            }
        }
        let xs = obs_action_input(&batch.obs, &batch.actions)?;
        let l1 = critic_step(
            &self.critic_spec,
            &mut self.q1,
            &mut self.q1_opt,
            &xs,
            &y,
            &mut self.rng,
        )?;
        let l2 = critic_step(
            &self.critic_spec,
            &mut self.q2,
            &mut self.q2_opt,
            &xs,
            &y,
            &mut self.rng,
        )?;
        self.critic_updates += 1;
        Ok(0.5 * (l1 + l2))
    }

    /// Actor ascends E[min(Q1,Q2)(s, a) - alpha * logp]; the temperature
    /// then descends E[-alpha * (logp + target_entropy)] using the same
    /// sampled actions. Returns (actor loss, temperature after the step).
    pub fn actor_and_temperature_update(&mut self, batch: &Batch) -> Result<(f64, f64)> {
        let xi = standard_normal_matrix(
            batch.obs.nrows(),
            self.cfg.action_dim,
            &mut self.rng,
        );
        let alpha = self.alpha();
        let (loss, mean_logp) = actor_loss_and_grads(
            &self.actor_spec,
            &mut self.actor,
            &self.critic_spec,
            &mut self.q1,
            &mut self.q2,
            &batch.obs,
            &xi,
            alpha,
            Some(&mut self.rng),
            true,
        )?;
        adam_step(&mut self.actor, &mut self.actor_opt)?;
        let grad = temperature_grad(alpha, mean_logp, self.cfg.target_entropy);
        self.alpha_opt.step(&mut self.log_alpha, grad)?;
        Ok((loss, self.alpha()))
    }

    pub fn polyak_update(&mut self) -> Result<()> {
        self.q1_tgt.polyak_from(&self.q1, self.cfg.tau)?;
        self.q2_tgt.polyak_from(&self.q2, self.cfg.tau)
    }

    /// The per-environment-step update block: UTD critic updates, each
    /// followed by a polyak update, with an actor+temperature update at
    /// every policy_delay-th critic update (counted over the agent's
    /// lifetime, so delays longer than the UTD ratio span env steps).
    pub fn train_step(&mut self, buffer: &ReplayBuffer) -> Result<StepStats> {
        let mut critic_loss_sum = 0.0;
        let mut actor_updates = 0;
        let mut actor_loss = None;
        for _ in 0..self.cfg.utd {
            let batch = buffer.sample_batch(self.cfg.batch_size, &mut self.rng)?;
            critic_loss_sum += self.critic_update(&batch)?;
            self.polyak_update()?;
            if self.critic_updates % self.cfg.policy_delay as u64 == 0 {
                let (l, _) = self.actor_and_temperature_update(&batch)?;
                actor_loss = Some(l);
                actor_updates += 1;
            }
        }
        Ok(StepStats {
            critic_updates: self.cfg.utd,
            actor_updates,
            critic_loss: critic_loss_sum / self.cfg.utd as f64,
            actor_loss,
            alpha: self.alpha(),
        })
    }
}

/// d/d(log alpha) of the temperature loss -alpha * (E[logp] + target).
pub fn temperature_grad(alpha: f64, mean_logp: f64, target_entropy: f64) -> f64 {
    -alpha * (mean_logp + target_entropy)
}

/// Min-twin target value with an optional entropy bonus. `rng: Some` runs
/// the target critics in train mode (fresh dropout masks); `None` runs them
/// in eval mode and leaves all state untouched.
pub fn target_backup(
    critic_spec: &MlpSpec,
    q1_tgt: &mut ParamSet,
    q2_tgt: &mut ParamSet,
    next_obs: &Array2<f64>,
    next_actions: &Array2<f64>,
    logp: Option<&Array1<f64>>,
    alpha: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Array1<f64>> {
    let xs = obs_action_input(next_obs, next_actions)?;
    let (v1, v2) = match rng {
        Some(r) => {
            let (v1, _) = mlp_forward(critic_spec, q1_tgt, &xs, Mode::Train(&mut *r))?;
            let (v2, _) = mlp_forward(critic_spec, q2_tgt, &xs, Mode::Train(r))?;
            (v1, v2)
        }
        None => (
            mlp_forward_infer(critic_spec, q1_tgt, &xs)?,
            mlp_forward_infer(critic_spec, q2_tgt, &xs)?,
        ),
    };
    let mut backup = Array1::zeros(v1.nrows());
    for i in 0..v1.nrows() {
        backup[i] = v1[[i, 0]].min(v2[[i, 0]]);
    }
    if let Some(lp) = logp {
        for i in 0..backup.len() {
            backup[i] -= alpha * lp[i];
        }
    }
    Ok(backup)
}

pub fn obs_action_input(obs: &Array2<f64>, actions: &Array2<f64>) -> Result<Array2<f64>> {
    if obs.nrows() != actions.nrows() {
        return Err(Error::ShapeMismatch {
            context: "critic input",
            expected: format!("{} rows", obs.nrows()),
            actual: format!("{} rows", actions.nrows()),
        });
    }
    concatenate(Axis(1), &[obs.view(), actions.view()]).map_err(|_| Error::ShapeMismatch {
        context: "critic input",
        expected: "concatenable obs/action widths".to_string(),
        actual: format!("obs {:?} actions {:?}", obs.dim(), actions.dim()),
    })
}

fn standard_normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

fn critic_step(
    spec: &MlpSpec,
    params: &mut ParamSet,
    opt: &mut AdamState,
    xs: &Array2<f64>,
    y: &Array1<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let n = xs.nrows() as f64;
    let (q, tape) = mlp_forward(spec, params, xs, Mode::Train(rng))?;
    let diff = &q.column(0).to_owned() - y;
    let loss = diff.mapv(|d| d * d).mean().unwrap();
    if !loss.is_finite() {
        return Err(Error::NonFinite("critic loss"));
    }
    let gout = diff.mapv(|d| 2.0 * d / n).insert_axis(Axis(1));
    params.zero_grads();
    mlp_backward(spec, params, &tape, &gout)?;
    adam_step(params, opt)
        .map(|_| loss)
}

/// Computes the actor loss mean(alpha * logp - min(Q1,Q2)(s, a)) under the
/// reparameterized sample a = tanh(mu + sigma * xi) and, when asked, writes
/// the actor parameter gradients. Critic parameters only supply values and
/// input gradients; their grad slots are never written. Returns the loss
/// and the batch-mean log probability.
///
/// The log-std head is clamped, so its gradient is gated to zero wherever
/// the raw output sits outside the clamp range.
#[allow(clippy::too_many_arguments)]
pub(crate) fn actor_loss_and_grads(
    actor_spec: &MlpSpec,
    actor: &mut ParamSet,
    critic_spec: &MlpSpec,
    q1: &mut ParamSet,
    q2: &mut ParamSet,
    obs: &Array2<f64>,
    xi: &Array2<f64>,
    alpha: f64,
    critic_rng: Option<&mut ChaCha8Rng>,
    write_grads: bool,
) -> Result<(f64, f64)> {
    let n = obs.nrows();
    let a_dim = xi.ncols();
    let nf = n as f64;

    let (head, tape) = mlp_forward(actor_spec, actor, obs, Mode::Eval)?;
    let (mean, log_std) = split_head(&head);
    let raw_log_std = head.slice(s![.., a_dim..]);
    let (actions, pre, logp) = squash_sample(&mean, &log_std, xi);

    let xs = obs_action_input(obs, &actions)?;
    let ((v1, t1), (v2, t2)) = match critic_rng {
        Some(r) => (
            mlp_forward(critic_spec, q1, &xs, Mode::Train(&mut *r))?,
            mlp_forward(critic_spec, q2, &xs, Mode::Train(r))?,
        ),
        None => (
            mlp_forward(critic_spec, q1, &xs, Mode::Eval)?,
            mlp_forward(critic_spec, q2, &xs, Mode::Eval)?,
        ),
    };

    let mut loss = 0.0;
    let mut gout1 = Array2::zeros((n, 1));
    let mut gout2 = Array2::zeros((n, 1));
    for i in 0..n {
        let (a, b) = (v1[[i, 0]], v2[[i, 0]]);
        loss += alpha * logp[i] - a.min(b);
        if a <= b {
            gout1[[i, 0]] = -1.0 / nf;
        } else {
            gout2[[i, 0]] = -1.0 / nf;
        }
    }
    loss /= nf;
    if !loss.is_finite() {
        return Err(Error::NonFinite("actor loss"));
    }
    let mean_logp = logp.mean().unwrap();
    if !write_grads {
        return Ok((loss, mean_logp));
    }

    let g1 = mlp_backward_input(critic_spec, q1, &t1, &gout1)?;
    let g2 = mlp_backward_input(critic_spec, q2, &t2, &gout2)?;
    let obs_dim = obs.ncols();
    let ga = &g1.slice(s![.., obs_dim..]) + &g2.slice(s![.., obs_dim..]);

    let mut ghead = Array2::zeros((n, 2 * a_dim));
    for i in 0..n {
        for j in 0..a_dim {
            let t = pre[[i, j]].tanh();
            let dtanh = 1.0 - t * t;
            let sig_xi = log_std[[i, j]].exp() * xi[[i, j]];
            let gq = ga[[i, j]];
            ghead[[i, j]] = (alpha / nf) * 2.0 * t + gq * dtanh;
            let raw = raw_log_std[[i, j]];
            ghead[[i, a_dim + j]] =
                if raw > gaussian::LOG_STD_MIN && raw < gaussian::LOG_STD_MAX {
                    (alpha / nf) * (-1.0 + 2.0 * t * sig_xi) + gq * dtanh * sig_xi
                } else {
                    0.0
                };
        }
    }
    actor.zero_grads();
    mlp_backward(actor_spec, actor, &tape, &ghead)?;
    Ok((loss, mean_logp))
}
