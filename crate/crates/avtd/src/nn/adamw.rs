//! Adam with decoupled weight decay.
//!
//! Decay is applied as `p -= lr * wd * p_pre` after the moment update, using
//! the parameter value from before this step, and only to tensors whose
//! layout slot was registered with `decay = true`. Everything else (biases,
//! normalization affines, the final layer when so configured) sees plain
//! Adam.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

struct TensorState {
    m: Vec<f64>,
    v: Vec<f64>,
    decay: bool,
}

/// Optimizer state for a fixed sequence of tensors.
///
/// A step is driven in callback style: `begin_step`, then one
/// `update_tensor` per registered tensor in registration order, then
/// `end_step`. The cursor checks catch any drift between the optimizer
/// layout and the parameter traversal.
pub struct AdamState {
    pub hyper: AdamHyper,
    t: u64,
    tensors: Vec<TensorState>,
    cursor: usize,
}

impl AdamState {
    /// `layout` gives (scalar count, decayed?) per tensor, in traversal order.
    pub fn new(hyper: AdamHyper, layout: impl IntoIterator<Item = (usize, bool)>) -> Self {
        let tensors = layout
            .into_iter()
            .map(|(len, decay)| TensorState {
                m: vec![0.0; len],
                v: vec![0.0; len],
                decay,
            })
            .collect();
        AdamState {
            hyper,
            t: 0,
            tensors,
            cursor: 0,
        }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// Number of scalars subject to weight decay.
    pub fn decayed_param_count(&self) -> usize {
        self.tensors
            .iter()
            .filter(|t| t.decay)
            .map(|t| t.m.len())
            .sum()
    }

    pub fn total_param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.m.len()).sum()
    }

    pub fn begin_step(&mut self) {
        self.t += 1;
        self.cursor = 0;
    }

    pub fn update_tensor(&mut self, param: &mut [f64], grad: &[f64]) -> Result<()> {
        let total = self.tensors.len();
        let slot = self
            .tensors
            .get_mut(self.cursor)
            .ok_or_else(|| Error::ShapeMismatch {
                context: "adam step",
                expected: format!("{total} tensors"),
                actual: format!("tensor index {}", self.cursor),
            })?;
        if param.len() != slot.m.len() || grad.len() != slot.m.len() {
            return Err(Error::ShapeMismatch {
                context: "adam tensor",
                expected: format!("len {}", slot.m.len()),
                actual: format!("param len {}, grad len {}", param.len(), grad.len()),
            });
        }
        let h = self.hyper;
        let bc1 = 1.0 - h.beta1.powi(self.t as i32);
        let bc2 = 1.0 - h.beta2.powi(self.t as i32);
        for i in 0..param.len() {
            let g = grad[i];
            if !g.is_finite() {
                return Err(Error::NonFinite("gradient in adam step"));
            }
            slot.m[i] = h.beta1 * slot.m[i] + (1.0 - h.beta1) * g;
            slot.v[i] = h.beta2 * slot.v[i] + (1.0 - h.beta2) * g * g;
            let m_hat = slot.m[i] / bc1;
            let v_hat = slot.v[i] / bc2;
            let p_pre = param[i];
            param[i] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
            if slot.decay {
                param[i] -= h.lr * h.weight_decay * p_pre;
            }
        }
        self.cursor += 1;
        Ok(())
    }

    pub fn end_step(&self) -> Result<()> {
        if self.cursor != self.tensors.len() {
            return Err(Error::ShapeMismatch {
                context: "adam step",
                expected: format!("{} tensors updated", self.tensors.len()),
                actual: format!("{} tensors updated", self.cursor),
            });
        }
        Ok(())
    }
}

/// Plain Adam on a single scalar (the entropy temperature's log).
#[derive(Debug, Clone)]
pub struct ScalarAdam {
    pub hyper: AdamHyper,
    t: u64,
    m: f64,
    v: f64,
}

impl ScalarAdam {
    pub fn new(hyper: AdamHyper) -> Self {
        ScalarAdam {
            hyper,
            t: 0,
            m: 0.0,
            v: 0.0,
        }
    }

    pub fn step(&mut self, param: &mut f64, grad: f64) -> Result<()> {
        if !grad.is_finite() {
            return Err(Error::NonFinite("gradient in scalar adam step"));
        }
        self.t += 1;
        let h = self.hyper;
        self.m = h.beta1 * self.m + (1.0 - h.beta1) * grad;
        self.v = h.beta2 * self.v + (1.0 - h.beta2) * grad * grad;
        let m_hat = self.m / (1.0 - h.beta1.powi(self.t as i32));
        let v_hat = self.v / (1.0 - h.beta2.powi(self.t as i32));
        *param -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
        Ok(())
    }
}
