//! Calibration of low-cost sensor networks with a coregionalized
//! spatio-temporal Gaussian process.
//!
//! Each sensor `i` is modelled as measuring a scaled copy of the latent
//! pollution field, `y = w_i(t) f(x, t) + noise`. Reference instruments are
//! pinned to `w = 1`; every other sensor carries a weight that is either a
//! single Gaussian scalar or the posterior mean of a sparse GP over time
//! driven by a handful of pseudo-observations. The field is integrated out
//! analytically and the weight variables are sampled with Hamiltonian Monte
//! Carlo.
//!
//! Module map:
//! - [`kernels`]: EQ kernels and the rank-1 coregionalization product.
//! - [`gp`]: dense GP primitives and the maximum-likelihood coregional fit.
//! - [`calib`]: the scaled-measurement joint density, its gradient and
//!   field prediction.
//! - [`hmc`]: the sampler and chain diagnostics.
//! - [`sim`]: simulated scenarios with ground truth.

pub mod calib;
pub mod data;
mod error;
pub mod gp;
pub mod hmc;
pub mod kernels;
pub mod optim;
pub mod sim;

pub use error::{Error, Result};
