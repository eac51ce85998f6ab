//! Pendulum swing-up. Angle θ is measured from upright; the actor applies a
//! torque of up to ±2 at the pivot of a rod with moment of inertia ml²/3.
//!
//! Dynamics (semi-implicit Euler, stable at dt = 0.05):
//!   θ̇' = clip(θ̇ + (3g/(2l)·sinθ + 3/(ml²)·u)·dt, ±max_speed)
//!   θ'  = wrap(θ + θ̇'·dt)  into [−π, π]
//!
//! Reward penalizes the pre-step state and the applied torque:
//!   r = −(θ² + 0.1·θ̇² + 0.001·u²)
//! so the per-step bounds are [−(π² + 0.1·max_speed² + 0.001·max_torque²), 0].
//!
//! Energy E = θ̇²/6 + (g/2)·cosθ is conserved by the integrator up to
//! |ΔE| ≤ 200·dt² per torque-free step while |θ̇| stays inside the clip.

use super::{check_not_finished, clip_action, Env, EnvSpec, EnvState, StepOut};
use ndarray::{array, Array1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

pub const GRAVITY: f64 = 10.0;
pub const MASS: f64 = 1.0;
pub const LENGTH: f64 = 1.0;
pub const MAX_SPEED: f64 = 8.0;
pub const MAX_TORQUE: f64 = 2.0;
pub const DT: f64 = 0.05;
pub const HORIZON: u32 = 200;

pub struct Pendulum {
    spec: EnvSpec,
}

impl Pendulum {
    pub fn new() -> Pendulum {
        Pendulum {
            spec: EnvSpec {
                name: "pendulum".to_string(),
                observation_dim: 3,
                action_dim: 1,
                horizon: HORIZON,
                reward_min: -(PI * PI
                    + 0.1 * MAX_SPEED * MAX_SPEED
                    + 0.001 * MAX_TORQUE * MAX_TORQUE),
                reward_max: 0.0,
            },
        }
    }
}

impl Default for Pendulum {
    fn default() -> Self {
        Pendulum::new()
    }
}

pub(super) fn wrap_angle(theta: f64) -> f64 {
    // Into [−π, π); π maps to −π, which leaves cos/sin unchanged.
    let two_pi = 2.0 * PI;
    let mut t = (theta + PI) % two_pi;
    if t < 0.0 {
        t += two_pi;
    }
    t - PI
}

/// Initial draw shared with the noisy variant: θ uniform in [−π, π], then
/// θ̇ uniform in [−1, 1].
pub(super) fn draw_init(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let theta = rng.gen_range(-PI..PI);
    let theta_dot = rng.gen_range(-1.0..1.0);
    (theta, theta_dot)
}

pub(super) fn physical_obs(theta: f64, theta_dot: f64) -> Array1<f64> {
    array![theta.cos(), theta.sin(), theta_dot]
}

/// One integrator step from (θ, θ̇) under a raw action already clipped to
/// [−1, 1]. Returns (θ', θ̇', reward).
pub(super) fn physical_step(theta: f64, theta_dot: f64, action: f64) -> (f64, f64, f64) {
    let torque = MAX_TORQUE * action;
    let reward = -(theta * theta + 0.1 * theta_dot * theta_dot + 0.001 * torque * torque);
    let accel = 3.0 * GRAVITY / (2.0 * LENGTH) * theta.sin()
        + 3.0 / (MASS * LENGTH * LENGTH) * torque;
    let next_dot = (theta_dot + accel * DT).clamp(-MAX_SPEED, MAX_SPEED);
    let next_theta = wrap_angle(theta + next_dot * DT);
    (next_theta, next_dot, reward)
}

impl Env for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> (EnvState, Array1<f64>) {
        let (theta, theta_dot) = draw_init(rng);
        let state = EnvState {
            phys: vec![theta, theta_dot],
            step: 0,
            noise_seed: 0,
        };
        let obs = physical_obs(theta, theta_dot);
        (state, obs)
    }

    fn step(&self, state: &EnvState, action: &Array1<f64>) -> crate::error::Result<StepOut> {
        check_not_finished(state, self.spec.horizon)?;
        let a = clip_action(action, 1, "pendulum step")?;
        let (theta, theta_dot) = (state.phys[0], state.phys[1]);
        let (nt, nd, reward) = physical_step(theta, theta_dot, a[0]);
        let step = state.step + 1;
        Ok(StepOut {
            state: EnvState {
                phys: vec![nt, nd],
                step,
                noise_seed: 0,
            },
            obs: physical_obs(nt, nd),
            reward,
            terminated: false,
            truncated: step == self.spec.horizon,
        })
    }
}
