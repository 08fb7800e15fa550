//! Hamiltonian Monte Carlo with a leapfrog integrator and diagonal mass.
//!
//! Plain fixed-length HMC. An optional burn-in adaptation tunes the step size
//! by dual averaging and the diagonal mass from windowed sample variances;
//! it is deterministic given the seed, like everything else here.

mod diagnostics;
mod precondition;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

pub use diagnostics::{autocorrelation, diagnostics, effective_sample_size, Diagnostics};
pub use precondition::{laplace_approximation, Affine, Laplace};

/// A differentiable log density.
pub trait Target: Sync {
    fn dim(&self) -> usize;

    /// Returns `log p(x)` and writes its gradient into `grad`. A non-finite
    /// return value marks a point outside the support.
    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// A target assembled from separate density and gradient closures.
pub struct FnTarget<L, G> {
    dim: usize,
    log_density: L,
    gradient: G,
}

impl<L, G> FnTarget<L, G>
where
    L: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64], &mut [f64]) + Sync,
{
    pub fn new(dim: usize, log_density: L, gradient: G) -> Self {
        Self {
            dim,
            log_density,
            gradient,
        }
    }
}

impl<L, G> Target for FnTarget<L, G>
where
    L: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64], &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let lp = (self.log_density)(x);
        if lp.is_finite() {
            (self.gradient)(x, grad);
        }
        lp
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmcConfig {
    pub step_size: f64,
    pub n_leapfrog: usize,
    pub n_samples: usize,
    pub n_burnin: usize,
    pub seed: u64,
    /// Diagonal mass; `None` means identity.
    pub mass: Option<Vec<f64>>,
    /// Tune step size and diagonal mass during burn-in.
    pub adapt: bool,
    /// Acceptance rate targeted by step-size adaptation.
    pub target_accept: f64,
    /// Each iteration draws its step size uniformly from
    /// `step_size · [1 − step_jitter, 1 + step_jitter]`. Breaks up
    /// trajectories that return to their start.
    pub step_jitter: f64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            n_leapfrog: 10,
            n_samples: 1000,
            n_burnin: 500,
            seed: 0,
            mass: None,
            adapt: false,
            target_accept: 0.8,
            step_jitter: 0.0,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Parameter(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.n_leapfrog == 0 {
            return Err(Error::Parameter("n_leapfrog must be at least 1".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::Parameter("n_samples must be at least 1".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Parameter(format!(
                "target acceptance must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        if !(0.0..1.0).contains(&self.step_jitter) {
            return Err(Error::Parameter(format!(
                "step jitter must lie in [0, 1), got {}",
                self.step_jitter
            )));
        }
        if let Some(mass) = &self.mass {
            if mass.len() != dim {
                return Err(Error::Shape(format!(
                    "mass has {} entries for a {dim}-dimensional target",
                    mass.len()
                )));
            }
            if mass.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
                return Err(Error::Parameter("mass entries must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    /// Post-burn-in draws, in order.
    pub samples: Vec<Vec<f64>>,
    pub log_densities: Vec<f64>,
    /// Mean Metropolis acceptance probability over the post-burn-in draws.
    pub accept_rate: f64,
    /// Step size used after burn-in.
    pub step_size: f64,
    /// Inverse diagonal mass used after burn-in.
    pub inv_mass: Vec<f64>,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    /// Trace of one coordinate.
    pub fn coordinate(&self, d: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[d]).collect()
    }
}

/// Runs `n_leapfrog` leapfrog steps from `(x, p)` in place.
///
/// `grad` must hold the gradient at `x` on entry and holds the gradient at the
/// final position on return. Returns the log density at the final position;
/// integration stops early if the density becomes non-finite.
pub fn leapfrog<T: Target + ?Sized>(
    target: &T,
    x: &mut [f64],
    p: &mut [f64],
    grad: &mut [f64],
    step_size: f64,
    n_leapfrog: usize,
    inv_mass: &[f64],
) -> f64 {
    let mut lp = f64::NAN;
    for (pi, gi) in p.iter_mut().zip(grad.iter()) {
        *pi += 0.5 * step_size * gi;
    }
    for step in 0..n_leapfrog {
        for ((xi, pi), mi) in x.iter_mut().zip(p.iter()).zip(inv_mass) {
            *xi += step_size * mi * pi;
        }
        lp = target.log_density_grad(x, grad);
        if !lp.is_finite() {
            return lp;
        }
        let scale = if step + 1 == n_leapfrog { 0.5 } else { 1.0 };
        for (pi, gi) in p.iter_mut().zip(grad.iter()) {
            *pi += scale * step_size * gi;
        }
    }
    lp
}

fn kinetic(p: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_mass).map(|(p, m)| p * p * m).sum::<f64>()
}

/// Nesterov dual averaging of the log step size.
struct DualAveraging {
    mu: f64,
    h_bar: f64,
    log_step_bar: f64,
    t: f64,
    target: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(step: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * step).ln(),
            h_bar: 0.0,
            log_step_bar: 0.0,
            t: 0.0,
            target,
        }
    }

    fn update(&mut self, accept_prob: f64) -> f64 {
        self.t += 1.0;
        let w = 1.0 / (self.t + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob);
        let log_step = self.mu - self.t.sqrt() / Self::GAMMA * self.h_bar;
        let eta = self.t.powf(-Self::KAPPA);
        self.log_step_bar = eta * log_step + (1.0 - eta) * self.log_step_bar;
        log_step.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_step_bar.exp()
    }
}

/// Running mean and variance.
#[derive(Default)]
struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn push(&mut self, x: &[f64]) {
        if self.mean.is_empty() {
            self.mean = vec![0.0; x.len()];
            self.m2 = vec![0.0; x.len()];
        }
        self.n += 1.0;
        for ((m, s), v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / self.n;
            *s += d * (v - *m);
        }
    }

    /// Variance shrunk towards 1e-3, as in Stan's windowed adaptation.
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n;
        self.m2
            .iter()
            .map(|s| {
                let var = s / (n - 1.0);
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

/// Mass-adaptation windows `[start, end)` within a burn-in of `n` draws:
/// an initial 15% buffer for step size only, then windows of doubling
/// length, then a final 10% buffer in which the step size settles for the
/// last mass estimate. Too short a burn-in gets no windows.
fn mass_windows(n: usize) -> Vec<(usize, usize)> {
    if n < 40 {
        return Vec::new();
    }
    let start = (n * 15) / 100;
    let end = n - n / 10;
    let mut windows = Vec::new();
    let mut len = ((end - start) / 15).max(5);
    let mut s = start;
    while s < end {
        let mut e = s + len;
        // Fold a too-short tail into the last window.
        if e + 2 * len > end {
            e = end;
        }
        windows.push((s, e));
        s = e;
        len *= 2;
    }
    windows
}

/// Draws one chain of `config.n_samples` post-burn-in samples from `target`.
pub fn sample<T: Target + ?Sized>(target: &T, init: &[f64], config: &HmcConfig) -> Result<Chain> {
    sample_seeded(target, init, config, config.seed)
}

fn sample_seeded<T: Target + ?Sized>(
    target: &T,
    init: &[f64],
    config: &HmcConfig,
    seed: u64,
) -> Result<Chain> {
    let dim = target.dim();
    config.validate(dim)?;
    if init.len() != dim {
        return Err(Error::Shape(format!(
            "initial point has {} entries for a {dim}-dimensional target",
            init.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = init.to_vec();
    let mut grad = vec![0.0; dim];
    let mut lp = target.log_density_grad(&x, &mut grad);
    if !lp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::SamplerInit(format!(
            "log density at the initial point is {lp}"
        )));
    }

    let mut inv_mass: Vec<f64> = match &config.mass {
        Some(m) => m.iter().map(|m| 1.0 / m).collect(),
        None => vec![1.0; dim],
    };
    let mut step = config.step_size;

    let burnin = config.n_burnin;
    let mut window_ends = if config.adapt {
        mass_windows(burnin)
    } else {
        Vec::new()
    };
    let mut averager = DualAveraging::new(step, config.target_accept);
    let mut window = Welford::default();

    let mut samples = Vec::with_capacity(config.n_samples);
    let mut log_densities = Vec::with_capacity(config.n_samples);
    let mut accept_sum = 0.0;

    let mut x_new = vec![0.0; dim];
    let mut p = vec![0.0; dim];
    let mut grad_new = vec![0.0; dim];
    for iter in 0..burnin + config.n_samples {
        for (pi, mi) in p.iter_mut().zip(&inv_mass) {
            let z: f64 = rng.sample(StandardNormal);
            *pi = z / mi.sqrt();
        }
        let h0 = -lp + kinetic(&p, &inv_mass);
        let eps = if config.step_jitter > 0.0 {
            let u: f64 = rng.random();
            step * (1.0 + config.step_jitter * (2.0 * u - 1.0))
        } else {
            step
        };
        x_new.copy_from_slice(&x);
        grad_new.copy_from_slice(&grad);
        let lp_new = leapfrog(
            target,
            &mut x_new,
            &mut p,
            &mut grad_new,
            eps,
            config.n_leapfrog,
            &inv_mass,
        );
        let h1 = -lp_new + kinetic(&p, &inv_mass);
        let accept_prob = if lp_new.is_finite() && h1.is_finite() {
            (h0 - h1).exp().min(1.0)
        } else {
            0.0
        };
        let u: f64 = rng.random();
        if u < accept_prob {
            std::mem::swap(&mut x, &mut x_new);
            std::mem::swap(&mut grad, &mut grad_new);
            lp = lp_new;
        }

        if iter < burnin {
            if config.adapt {
                step = averager.update(accept_prob);
                let in_window = window_ends
                    .first()
                    .is_some_and(|&(start, end)| iter >= start && iter < end);
                if in_window {
                    window.push(&x);
                }
                if window_ends.first().is_some_and(|&(_, end)| iter + 1 == end) {
                    window_ends.remove(0);
                    inv_mass = window.regularized_variance();
                    window = Welford::default();
                    averager = DualAveraging::new(step, config.target_accept);
                }
                if iter + 1 == burnin {
                    step = averager.final_step();
                    log::debug!("adapted step size {step:.4e}");
                }
            }
        } else {
            accept_sum += accept_prob;
            samples.push(x.clone());
            log_densities.push(lp);
        }
    }

    Ok(Chain {
        samples,
        log_densities,
        accept_rate: accept_sum / config.n_samples as f64,
        step_size: step,
        inv_mass,
    })
}

/// Runs one chain per initial point on its own thread. Chain `c` is seeded
/// with `config.seed + c`, so results do not depend on scheduling.
pub fn sample_chains<T: Target + ?Sized>(
    target: &T,
    inits: &[Vec<f64>],
    config: &HmcConfig,
) -> Result<Vec<Chain>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = inits
            .iter()
            .enumerate()
            .map(|(c, init)| {
                let seed = config.seed.wrapping_add(c as u64);
                scope.spawn(move || sample_seeded(target, init, config, seed))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sampler thread panicked"))
            .collect()
    })
}
