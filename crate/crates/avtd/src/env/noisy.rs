//! Pendulum with Gaussian distractor observations.
//!
//! The physical task is exactly [`super::pendulum`]; the observation gains
//! 16 standard-normal dimensions resampled every step. The distractors carry
//! no signal but give a high-capacity critic something to memorize, which is
//! what makes high update-to-data ratios overfit visibly at this scale.
//!
//! Distractor draws come from a per-episode ChaCha seed stored in the state,
//! with the step counter as the stream id, so stepping stays a pure function
//! of (state, action) and replays are bit-exact.

use super::pendulum::{draw_init, physical_obs, physical_step, HORIZON};
use super::{check_not_finished, clip_action, Env, EnvSpec, EnvState, StepOut};
use crate::rng;
use ndarray::Array1;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

pub const DISTRACTOR_DIM: usize = 16;

pub struct NoisyPendulum {
    spec: EnvSpec,
}

impl NoisyPendulum {
    pub fn new() -> NoisyPendulum {
        NoisyPendulum {
            spec: EnvSpec {
                name: "noisy-pendulum".to_string(),
                observation_dim: 3 + DISTRACTOR_DIM,
                action_dim: 1,
                horizon: HORIZON,
                reward_min: -(PI * PI + 0.1 * 64.0 + 0.001 * 4.0),
                reward_max: 0.0,
            },
        }
    }

    fn observe(&self, theta: f64, theta_dot: f64, noise_seed: u64, step: u32) -> Array1<f64> {
        let mut obs = Array1::zeros(self.spec.observation_dim);
        let phys = physical_obs(theta, theta_dot);
        obs.slice_mut(ndarray::s![..3]).assign(&phys);
        let mut noise = rng::stream(noise_seed, step as u64);
        for i in 0..DISTRACTOR_DIM {
            obs[3 + i] = noise.sample::<f64, _>(StandardNormal);
        }
        obs
    }
}

impl Default for NoisyPendulum {
    fn default() -> Self {
        NoisyPendulum::new()
    }
}

impl Env for NoisyPendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> (EnvState, Array1<f64>) {
        let (theta, theta_dot) = draw_init(rng);
        let noise_seed = rng.gen::<u64>();
        let state = EnvState {
            phys: vec![theta, theta_dot],
            step: 0,
            noise_seed,
        };
        let obs = self.observe(theta, theta_dot, noise_seed, 0);
        (state, obs)
    }

    fn step(&self, state: &EnvState, action: &Array1<f64>) -> crate::error::Result<StepOut> {
        check_not_finished(state, self.spec.horizon)?;
        let a = clip_action(action, 1, "noisy-pendulum step")?;
        let (nt, nd, reward) = physical_step(state.phys[0], state.phys[1], a[0]);
        let step = state.step + 1;
        Ok(StepOut {
            obs: self.observe(nt, nd, state.noise_seed, step),
            state: EnvState {
                phys: vec![nt, nd],
                step,
                noise_seed: state.noise_seed,
            },
            reward,
            terminated: false,
            truncated: step == self.spec.horizon,
        })
    }
}
