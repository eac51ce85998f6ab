//! Spectral normalization of a weight matrix by one step of power iteration
//! per forward pass.
//!
//! The left singular vector estimate `u` persists across calls; each call
//! refines it once, giving convergence over the course of training instead of
//! paying for a full iteration every step. The normalized matrix W/σ̂ is what
//! the layer multiplies by, and the backward pass treats u and v as constants
//! while differentiating through σ̂ itself.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2};

const SN_EPS: f64 = 1e-12;

/// One power-iteration refinement and normalization.
///
/// `w` has shape (in, out); `u` is the persistent estimate of the top left
/// singular vector of the (out, in)-oriented operator, i.e. `u.len() == in`
/// in this layout because we iterate v = normalize(Wᵀu) over columns... to
/// keep orientation simple we define: u has length `w.nrows()`, v length
/// `w.ncols()`, and σ̂ = u′ᵀ W v.
///
/// Returns (w_normalized, sigma, u_next, v).
pub fn spectral_normalize(w: &Array2<f64>, u: &Array1<f64>) -> Result<SnStep> {
    debug_assert_eq!(u.len(), w.nrows());
    // v = normalize(Wᵀ u)
    let wv_t = w.t().dot(u);
    let v_norm = l2(&wv_t);
    if v_norm < SN_EPS {
        return Err(Error::ZeroSpectralNorm { sigma: v_norm });
    }
    let v = &wv_t / v_norm;
    // u' = normalize(W v)
    let wv = w.dot(&v);
    let u_norm = l2(&wv);
    if u_norm < SN_EPS {
        return Err(Error::ZeroSpectralNorm { sigma: u_norm });
    }
    let u_next = &wv / u_norm;
    let sigma = u_next.dot(&wv);
    if sigma < SN_EPS {
        return Err(Error::ZeroSpectralNorm { sigma });
    }
    let w_eff = w / sigma;
    Ok(SnStep {
        w_eff,
        sigma,
        u_next,
        v,
    })
}

#[derive(Debug, Clone)]
pub struct SnStep {
    /// W / σ̂, the matrix actually applied by the layer.
    pub w_eff: Array2<f64>,
    pub sigma: f64,
    pub u_next: Array1<f64>,
    pub v: Array1<f64>,
}

/// Gradient of the loss w.r.t. the raw W given the gradient w.r.t. W/σ̂.
///
/// With u, v held constant, σ̂ = uᵀWv, so
///   dL/dW = gŴ/σ̂ − (⟨gŴ, W/σ̂⟩/σ̂)·u vᵀ.
pub fn spectral_backward(
    g_weff: &Array2<f64>,
    w_eff: &Array2<f64>,
    sigma: f64,
    u: &Array1<f64>,
    v: &Array1<f64>,
) -> Array2<f64> {
    let mut inner = 0.0;
    for (a, b) in g_weff.iter().zip(w_eff.iter()) {
        inner += a * b;
    }
    let mut gw = g_weff / sigma;
    let coef = inner / sigma;
    let (r, c) = gw.dim();
    for i in 0..r {
        for j in 0..c {
            gw[[i, j]] -= coef * u[i] * v[j];
        }
    }
    gw
}

fn l2(x: &Array1<f64>) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
