//! Soft actor-critic for small continuous-control tasks, with a configurable
//! update-to-data ratio, critic regularizers (layer norm, feature norm,
//! spectral norm, dropout, weight decay, periodic resets), offline replay
//! analysis over logged datasets, and validation-TD-driven online selection
//! among a pool of differently regularized agents.

pub mod env;
pub mod harness;
pub mod metrics;
pub mod error;
pub mod nn;
pub mod pool;
pub mod regularizers;
pub mod replay;
pub mod rng;
pub mod sac;

pub use error::{Error, Result};
