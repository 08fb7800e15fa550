//! The scaled-measurement calibration model.
//!
//! A sensor reading is `y = w_s(t) f(x, t) + noise`, where `f` is a GP with
//! EQ kernel `theta_y` and `w_s` is sensor `s`'s multiplicative weight
//! (true value to measured value). Reference sensors have `w = 1`. Other
//! sensors either carry one Gaussian scalar weight, or a time-varying weight
//! equal to the posterior mean of a GP (kernel `theta_w`) conditioned on
//! pseudo-observations `z` at a sparse set of virtual times.
//!
//! The field is integrated out, leaving
//! `y ~ N(w ∘ m0, W K_f W + noise I)` with `W = diag(w)`, which is what HMC
//! samples over `z`.

mod model;
mod standardize;
mod summary;

pub use model::{
    CalibrationModel, GaussianWeightPrior, LatentLayout, SparseWeightPrior, WeightPrior,
};
pub use standardize::Standardization;
pub use summary::{negative_fraction, posterior_summary, BandSummary};
