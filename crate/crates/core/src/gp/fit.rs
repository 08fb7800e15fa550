//! Maximum-likelihood fit of the coregionalized co-location model.
//!
//! The covariance is `K = EQ(points) ∘ (a a^T)[sensor, sensor] + noise I`.
//! Positive parameters are optimized on the log scale, coregional weights
//! on the raw scale, and every reference weight stays pinned at 1.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Factor, NoiseModel};
use crate::data::Dataset;
use crate::kernels::{eq_gram, CoregWeights, KernelInput, KernelParams, SpaceTimePoint};
use crate::optim::{self, LbfgsOptions};
use crate::{Error, Result};

const N_LENGTHSCALES: usize = SpaceTimePoint::DIM;

/// A named hyperparameter of the coregional model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CoregParam {
    Variance,
    /// 0 = x, 1 = y, 2 = t.
    Lengthscale(usize),
    Noise,
    Weight(usize),
}

impl CoregParam {
    /// Position in the unconstrained parameter vector.
    fn slot(self) -> usize {
        match self {
            Self::Variance => 0,
            Self::Lengthscale(d) => 1 + d,
            Self::Noise => 1 + N_LENGTHSCALES,
            Self::Weight(j) => 2 + N_LENGTHSCALES + j,
        }
    }
}

impl fmt::Display for CoregParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Variance => f.write_str("variance"),
            Self::Lengthscale(0) => f.write_str("lengthscale_x"),
            Self::Lengthscale(1) => f.write_str("lengthscale_y"),
            Self::Lengthscale(_) => f.write_str("lengthscale_t"),
            Self::Noise => f.write_str("noise"),
            Self::Weight(j) => write!(f, "a_{j}"),
        }
    }
}

impl FromStr for CoregParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "variance" => Self::Variance,
            "lengthscale_x" => Self::Lengthscale(0),
            "lengthscale_y" => Self::Lengthscale(1),
            "lengthscale_t" => Self::Lengthscale(2),
            "noise" => Self::Noise,
            _ => match s.strip_prefix("a_").map(str::parse) {
                Some(Ok(j)) => Self::Weight(j),
                _ => return Err(Error::Parameter(format!("unknown parameter name {s:?}"))),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoregParams {
    pub kernel: KernelParams,
    pub weights: CoregWeights,
    pub noise: NoiseModel,
}

impl CoregParams {
    fn to_unconstrained(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 + N_LENGTHSCALES + self.weights.len());
        v.push(self.kernel.variance().ln());
        v.extend(self.kernel.lengthscales().iter().map(|l| l.ln()));
        v.push(self.noise.variance.ln());
        v.extend_from_slice(self.weights.values());
        v
    }

    fn from_unconstrained(v: &[f64], references: &BTreeSet<usize>) -> Result<Self> {
        let ls = v[1..=N_LENGTHSCALES].iter().map(|l| l.exp()).collect();
        let kernel = KernelParams::new(v[0].exp(), ls)?;
        let noise = NoiseModel::new(v[1 + N_LENGTHSCALES].exp())?;
        let mut a = v[2 + N_LENGTHSCALES..].to_vec();
        for &r in references {
            a[r] = 1.0;
        }
        let weights = CoregWeights::new(a, references.clone())?;
        Ok(Self {
            kernel,
            weights,
            noise,
        })
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Perturbed restarts on top of the unperturbed run.
    pub restarts: usize,
    pub seed: u64,
    /// Standard deviation of restart perturbations in unconstrained space.
    pub perturbation: f64,
    pub lbfgs: LbfgsOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 3,
            seed: 0,
            perturbation: 0.3,
            lbfgs: LbfgsOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CoregFit {
    pub params: CoregParams,
    pub log_likelihood: f64,
    pub initial_log_likelihood: f64,
}

/// Log marginal likelihood of the coregional model and its gradient with
/// respect to
/// `[ln variance, ln l_x, ln l_y, ln l_t, ln noise, a_0, .., a_{M-1}]`.
pub fn coreg_objective(data: &Dataset, params: &CoregParams) -> Result<(f64, Vec<f64>)> {
    let points = data.points();
    let sensors = data.sensors();
    let m = params.weights.len();
    if m != data.n_sensors {
        return Err(Error::Shape(format!(
            "{m} coregional weights for {} sensors",
            data.n_sensors
        )));
    }
    let a = params.weights.values();
    let n = points.len();
    let y = DVector::from_vec(data.values());

    let keq = eq_gram(&points, &params.kernel)?;
    let mut cov = DMatrix::from_fn(n, n, |i, j| keq[(i, j)] * a[sensors[i]] * a[sensors[j]]);
    for i in 0..n {
        cov[(i, i)] += params.noise.variance;
    }
    let factor = Factor::new(cov)?;
    let ll = factor.log_normal_density(&y);

    // dL/dθ = Σ_ij G_ij ∂A_ij/∂θ with G = (αα^T − A^{-1}) / 2.
    let alpha = factor.solve(&y);
    let mut g = factor.inverse();
    for j in 0..n {
        for i in 0..n {
            g[(i, j)] = 0.5 * (alpha[i] * alpha[j] - g[(i, j)]);
        }
    }

    let ls = params.kernel.lengthscales();
    let mut grad = vec![0.0; 2 + N_LENGTHSCALES + m];
    for j in 0..n {
        for i in 0..n {
            let gk = g[(i, j)] * keq[(i, j)];
            let b = a[sensors[i]] * a[sensors[j]];
            grad[0] += gk * b;
            for (d, l) in ls.iter().enumerate() {
                let u = (points[i].coord(d) - points[j].coord(d)) / l;
                grad[1 + d] += gk * b * u * u;
            }
            // ∂(a_p a_q)/∂a_k; the symmetric half is picked up at (j, i).
            grad[2 + N_LENGTHSCALES + sensors[i]] += 2.0 * gk * a[sensors[j]];
        }
    }
    grad[1 + N_LENGTHSCALES] = params.noise.variance * g.trace();
    Ok((ll, grad))
}

/// Maximizes the log marginal likelihood over the parameters not in `frozen`.
///
/// Reference weights are always held at 1, whether or not they are listed.
pub fn ml_fit_coreg(
    data: &Dataset,
    init: &CoregParams,
    frozen: &BTreeSet<CoregParam>,
    opts: &FitOptions,
) -> Result<CoregFit> {
    let references = init.weights.references().clone();
    if references.is_empty() {
        return Err(Error::Parameter("no reference sensor to anchor the fit".into()));
    }
    let mut fixed = frozen.clone();
    fixed.extend(references.iter().map(|&r| CoregParam::Weight(r)));
    if !fixed.contains(&CoregParam::Noise) && init.noise.variance <= 0.0 {
        return Err(Error::Parameter(
            "noise variance must be positive to be optimized".into(),
        ));
    }

    let full0 = init.to_unconstrained();
    let m = init.weights.len();
    let all = [CoregParam::Variance]
        .into_iter()
        .chain((0..N_LENGTHSCALES).map(CoregParam::Lengthscale))
        .chain([CoregParam::Noise])
        .chain((0..m).map(CoregParam::Weight));
    let free: Vec<usize> = all.filter(|p| !fixed.contains(p)).map(CoregParam::slot).collect();

    let (initial_ll, _) = coreg_objective(data, init)?;
    let assemble = |x: &[f64]| {
        let mut full = full0.clone();
        for (&slot, &v) in free.iter().zip(x) {
            full[slot] = v;
        }
        full
    };
    let objective = |x: &[f64]| {
        let params = CoregParams::from_unconstrained(&assemble(x), &references).ok()?;
        let (ll, grad) = coreg_objective(data, &params).ok()?;
        Some((-ll, free.iter().map(|&s| -grad[s]).collect()))
    };

    let x0: Vec<f64> = free.iter().map(|&s| full0[s]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut first_err = None;
    for restart in 0..=opts.restarts {
        let start: Vec<f64> = if restart == 0 {
            x0.clone()
        } else {
            x0.iter()
                .map(|v| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    v + opts.perturbation * e
                })
                .collect()
        };
        match optim::minimize(objective, &start, &opts.lbfgs) {
            Ok(min) => {
                log::debug!(
                    "restart {restart}: log likelihood {} after {} iterations",
                    -min.value,
                    min.iterations
                );
                if best.as_ref().is_none_or(|(_, v)| min.value < *v) {
                    best = Some((min.x, min.value));
                }
            }
            Err(e) => {
                log::warn!("restart {restart} failed: {e}");
                first_err.get_or_insert(e);
            }
        }
    }

    let Some((x, value)) = best else {
        return Err(first_err.expect("at least one restart ran"));
    };
    let params = CoregParams::from_unconstrained(&assemble(&x), &references)?;
    Ok(CoregFit {
        params,
        log_likelihood: -value,
        initial_log_likelihood: initial_ll,
    })
}
