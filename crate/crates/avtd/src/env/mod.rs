//! Small deterministic continuous-control environments with fixed horizons.
//!
//! Environments are stateless objects; episode state lives in [`EnvState`]
//! and is threaded explicitly through [`Env::step`]. All actions are clipped
//! elementwise to [−1, 1] before the dynamics see them. Episodes end by
//! truncation at the horizon; none of the bundled tasks has a failure set,
//! so `terminated` is always false here, but the flag is carried so the TD
//! backup can distinguish the two if one is added.

mod noisy;
mod pendulum;
mod point_mass;

pub use noisy::NoisyPendulum;
pub use pendulum::Pendulum;
pub use point_mass::PointMass;

use crate::error::{Error, Result};
use ndarray::Array1;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub observation_dim: usize,
    pub action_dim: usize,
    pub horizon: u32,
    /// Documented per-step reward bounds; every emitted reward lies within.
    pub reward_min: f64,
    pub reward_max: f64,
}

/// Episode state. `noise_seed` feeds the distractor stream of the noisy
/// variants and is zero elsewhere; keeping it in the state makes stepping a
/// pure function of (state, action).
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub phys: Vec<f64>,
    pub step: u32,
    pub noise_seed: u64,
}

#[derive(Debug, Clone)]
pub struct StepOut {
    pub state: EnvState,
    pub obs: Array1<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
}

pub trait Env: Send + Sync {
    fn spec(&self) -> &EnvSpec;
    fn reset(&self, rng: &mut ChaCha8Rng) -> (EnvState, Array1<f64>);
    fn step(&self, state: &EnvState, action: &Array1<f64>) -> Result<StepOut>;
}

pub(crate) fn clip_action(action: &Array1<f64>, dim: usize, context: &'static str) -> Result<Array1<f64>> {
    if action.len() != dim {
        return Err(Error::ShapeMismatch {
            context,
            expected: format!("action dim {dim}"),
            actual: format!("{}", action.len()),
        });
    }
    Ok(action.mapv(|a| a.clamp(-1.0, 1.0)))
}

pub(crate) fn check_not_finished(state: &EnvState, horizon: u32) -> Result<()> {
    if state.step >= horizon {
        return Err(Error::EpisodeFinished {
            step: state.step,
            horizon,
        });
    }
    Ok(())
}

pub const ENV_NAMES: [&str; 3] = ["pendulum", "point-mass", "noisy-pendulum"];

pub fn make_env(name: &str) -> Result<Box<dyn Env>> {
    match name {
        "pendulum" => Ok(Box::new(Pendulum::new())),
        "point-mass" => Ok(Box::new(PointMass::new())),
        "noisy-pendulum" => Ok(Box::new(NoisyPendulum::new())),
        other => Err(Error::UnknownEnv {
            name: other.to_string(),
            known: ENV_NAMES.iter().map(|s| s.to_string()).collect(),
        }),
    }
}

/// Runs one full episode with the given policy, returning the undiscounted
/// return. The policy sees observations and must emit actions of the right
/// dimension.
pub fn rollout_return<F>(env: &dyn Env, rng: &mut ChaCha8Rng, mut policy: F) -> Result<f64>
where
    F: FnMut(&Array1<f64>) -> Array1<f64>,
{
    let (mut state, mut obs) = env.reset(rng);
    let mut total = 0.0;
    loop {
        let action = policy(&obs);
        let out = env.step(&state, &action)?;
        total += out.reward;
        if out.terminated || out.truncated {
            return Ok(total);
        }
        state = out.state;
        obs = out.obs;
    }
}
