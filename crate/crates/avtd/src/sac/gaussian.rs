//! Tanh-transformed diagonal Gaussian policy head.
//!
//! The actor network emits, per action dimension, a mean and a raw log
//! standard deviation (clamped to [LOG_STD_MIN, LOG_STD_MAX]). Actions are
//! a = tanh(mu + sigma * xi) with xi standard normal. Log densities carry
//! the tanh change-of-variables term in the softplus form
//!   log(1 - tanh(u)^2) = 2 * (ln 2 - u - softplus(-2u)),
//! which stays finite for any u, unlike log(1 - a^2).

use ndarray::{Array1, Array2};

pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Emitted actions are clamped strictly inside the open box: tanh(u) rounds
/// to exactly 1.0 in f64 once u exceeds about 19.
pub const ACTION_BOUND: f64 = 1.0 - 1e-9;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_67;

pub fn softplus(x: f64) -> f64 {
    // Stable both directions: ln(1 + e^x) = max(x, 0) + ln(1 + e^-|x|).
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// log|da/du| for a = tanh(u).
pub fn tanh_log_det(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

/// Per-dimension log density of a = tanh(u) with u ~ Normal(mean, e^{2 ls}).
pub fn log_density_dim(u: f64, mean: f64, log_std: f64) -> f64 {
    let xi = (u - mean) / log_std.exp();
    -0.5 * xi * xi - log_std - HALF_LN_2PI - tanh_log_det(u)
}

/// Splits a (batch, 2A) head output into means and clamped log stds.
pub fn split_head(out: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let a = out.ncols() / 2;
    let mean = out.slice(ndarray::s![.., ..a]).to_owned();
    let log_std = out
        .slice(ndarray::s![.., a..])
        .mapv(|x| x.clamp(LOG_STD_MIN, LOG_STD_MAX));
    (mean, log_std)
}

/// Squashed sample for given noise: returns (actions, pre-squash u, per-row
/// log probability). `xi` has one standard-normal draw per (row, dim).
pub fn squash_sample(
    mean: &Array2<f64>,
    log_std: &Array2<f64>,
    xi: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let n = mean.nrows();
    let d = mean.ncols();
    let mut actions = Array2::zeros((n, d));
    let mut pre = Array2::zeros((n, d));
    let mut logp = Array1::zeros(n);
    for i in 0..n {
        let mut lp = 0.0;
        for j in 0..d {
            let ls = log_std[[i, j]];
            let u = mean[[i, j]] + ls.exp() * xi[[i, j]];
            pre[[i, j]] = u;
            actions[[i, j]] = u.tanh().clamp(-ACTION_BOUND, ACTION_BOUND);
            lp += log_density_dim(u, mean[[i, j]], ls);
        }
        logp[i] = lp;
    }
    (actions, pre, logp)
}

/// Deterministic head: tanh of the mean.
pub fn squash_mean(mean: &Array2<f64>) -> Array2<f64> {
    mean.mapv(|m| m.tanh().clamp(-ACTION_BOUND, ACTION_BOUND))
}
