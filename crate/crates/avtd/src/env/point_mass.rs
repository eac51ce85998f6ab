//! 2-D point mass steered toward the origin by bounded acceleration.
//!
//! State is (position, velocity) ∈ [−1,1]² × [−1,1]². The action accelerates
//! the mass; velocity then position are clamped to their boxes:
//!   v' = clamp(v + a·dt, ±1),  p' = clamp(p + v'·dt, ±1)
//! Reward is the negative distance to the goal at the pre-step position,
//! giving per-step bounds [−√2, 0].

use super::{check_not_finished, clip_action, Env, EnvSpec, EnvState, StepOut};
use ndarray::{array, Array1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const DT: f64 = 0.05;
pub const HORIZON: u32 = 200;

pub struct PointMass {
    spec: EnvSpec,
}

impl PointMass {
    pub fn new() -> PointMass {
        PointMass {
            spec: EnvSpec {
                name: "point-mass".to_string(),
                observation_dim: 4,
                action_dim: 2,
                horizon: HORIZON,
                reward_min: -std::f64::consts::SQRT_2,
                reward_max: 0.0,
            },
        }
    }
}

impl Default for PointMass {
    fn default() -> Self {
        PointMass::new()
    }
}

impl Env for PointMass {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> (EnvState, Array1<f64>) {
        let px = rng.gen_range(-1.0..1.0);
        let py = rng.gen_range(-1.0..1.0);
        let state = EnvState {
            phys: vec![px, py, 0.0, 0.0],
            step: 0,
            noise_seed: 0,
        };
        let obs = array![px, py, 0.0, 0.0];
        (state, obs)
    }

    fn step(&self, state: &EnvState, action: &Array1<f64>) -> crate::error::Result<StepOut> {
        check_not_finished(state, self.spec.horizon)?;
        let a = clip_action(action, 2, "point-mass step")?;
        let (px, py, vx, vy) = (state.phys[0], state.phys[1], state.phys[2], state.phys[3]);
        let reward = -(px * px + py * py).sqrt();
        let nvx = (vx + a[0] * DT).clamp(-1.0, 1.0);
        let nvy = (vy + a[1] * DT).clamp(-1.0, 1.0);
        let npx = (px + nvx * DT).clamp(-1.0, 1.0);
        let npy = (py + nvy * DT).clamp(-1.0, 1.0);
        let step = state.step + 1;
        Ok(StepOut {
            state: EnvState {
                phys: vec![npx, npy, nvx, nvy],
                step,
                noise_seed: 0,
            },
            obs: array![npx, npy, nvx, nvy],
            reward,
            terminated: false,
            truncated: step == self.spec.horizon,
        })
    }
}
