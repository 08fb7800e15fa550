use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::gp::{condition, Factor, GPPosterior, NoiseModel};
use crate::hmc::Target;
use crate::kernels::{eq_gram, eq_kernel, KernelParams, SpaceTimePoint};
use crate::{Error, Result};

/// Time-invariant weights: one scalar per sensor with a Gaussian prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianWeightPrior {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianWeightPrior {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(Error::Parameter(format!("prior mean {mean}")));
        }
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::Parameter(format!(
                "prior variance must be positive, got {variance}"
            )));
        }
        Ok(Self { mean, variance })
    }
}

/// Time-varying weights interpolated from pseudo-observations.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseWeightPrior {
    /// Virtual time points, indexed by sensor. Empty for sensors without a
    /// latent weight.
    pub inducing_times: Vec<Vec<f64>>,
    pub theta_w: KernelParams,
    pub mean: f64,
    pub jitter: f64,
}

impl SparseWeightPrior {
    pub fn new(
        inducing_times: Vec<Vec<f64>>,
        theta_w: KernelParams,
        mean: f64,
        jitter: f64,
    ) -> Result<Self> {
        if theta_w.lengthscales().len() != 1 {
            return Err(Error::Shape(
                "weight kernel must have a single (time) lengthscale".into(),
            ));
        }
        if !mean.is_finite() || !(jitter >= 0.0 && jitter.is_finite()) {
            return Err(Error::Parameter(format!(
                "weight prior mean {mean} / jitter {jitter}"
            )));
        }
        for (s, ts) in inducing_times.iter().enumerate() {
            if ts.iter().any(|t| !t.is_finite()) || ts.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Parameter(format!(
                    "virtual times of sensor {s} must be finite and strictly increasing"
                )));
            }
        }
        Ok(Self {
            inducing_times,
            theta_w,
            mean,
            jitter,
        })
    }

    /// Evenly spaced virtual times over each non-reference sensor's observed
    /// interval, no further apart than `spacing`.
    pub fn uniform_grid(
        data: &Dataset,
        theta_w: KernelParams,
        mean: f64,
        spacing: f64,
    ) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::Parameter(format!("grid spacing {spacing}")));
        }
        let times = (0..data.n_sensors)
            .map(|s| match data.time_span(s) {
                Some((lo, hi)) if !data.is_reference(s) => {
                    let n = ((hi - lo) / spacing).ceil() as usize;
                    if n == 0 {
                        vec![lo]
                    } else {
                        let h = (hi - lo) / n as f64;
                        (0..=n).map(|k| lo + k as f64 * h).collect()
                    }
                }
                _ => Vec::new(),
            })
            .collect();
        let jitter = theta_w.jitter();
        Self::new(times, theta_w, mean, jitter)
    }

    /// Grid with spacing half the weight lengthscale.
    pub fn default_grid(data: &Dataset, theta_w: KernelParams, mean: f64) -> Result<Self> {
        let spacing = theta_w.lengthscales()[0] / 2.0;
        Self::uniform_grid(data, theta_w, mean, spacing)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightPrior {
    Gaussian(GaussianWeightPrior),
    Sparse(SparseWeightPrior),
}

impl WeightPrior {
    pub fn mean(&self) -> f64 {
        match self {
            Self::Gaussian(g) => g.mean,
            Self::Sparse(s) => s.mean,
        }
    }
}

/// Where each sensor's latent variables live in the flat latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentLayout {
    blocks: Vec<Option<Range<usize>>>,
    dim: usize,
}

impl LatentLayout {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block(&self, sensor: usize) -> Option<Range<usize>> {
        self.blocks.get(sensor).cloned().flatten()
    }

    /// Sensors that carry latent variables, in order.
    pub fn latent_sensors(&self) -> impl Iterator<Item = usize> + '_ {
        self.blocks
            .iter()
            .enumerate()
            .filter_map(|(s, b)| b.as_ref().map(|_| s))
    }

    pub fn n_sensors(&self) -> usize {
        self.blocks.len()
    }
}

/// Affine map from the latent vector to one observation's weight.
#[derive(Debug, Clone)]
struct WeightRow {
    offset: f64,
    start: usize,
    coefs: Vec<f64>,
}

impl WeightRow {
    fn eval(&self, z: &[f64]) -> f64 {
        self.offset
            + self
                .coefs
                .iter()
                .zip(&z[self.start..])
                .map(|(c, v)| c * v)
                .sum::<f64>()
    }
}

/// Per-sensor pieces of the sparse weight GP.
#[derive(Debug, Clone)]
struct SparseBlock {
    times: Vec<f64>,
    /// Factor of `K(t_s, t_s) + jitter I`.
    factor: Factor,
}

/// Joint density of the calibration model for one (standardized) dataset,
/// with all kernel hyperparameters held fixed.
#[derive(Debug, Clone)]
pub struct CalibrationModel {
    prior: WeightPrior,
    theta_y: KernelParams,
    noise: NoiseModel,
    field_mean: f64,
    layout: LatentLayout,
    points: Vec<SpaceTimePoint>,
    y: DVector<f64>,
    k_field: DMatrix<f64>,
    rows: Vec<WeightRow>,
    sparse: Vec<Option<SparseBlock>>,
}

impl CalibrationModel {
    /// `field_mean` is the constant prior mean of the latent field, in the
    /// same units as the observations.
    pub fn new(
        data: &Dataset,
        prior: WeightPrior,
        theta_y: KernelParams,
        noise: NoiseModel,
        field_mean: f64,
    ) -> Result<Self> {
        if !field_mean.is_finite() {
            return Err(Error::Parameter(format!("field mean {field_mean}")));
        }
        let points = data.points();
        let k_field = eq_gram(&points, &theta_y)?;
        let observed = data.observed_sensors();

        let mut blocks = vec![None; data.n_sensors];
        let mut sparse = vec![None; data.n_sensors];
        let mut dim = 0;
        for s in 0..data.n_sensors {
            if data.is_reference(s) || !observed.contains(&s) {
                continue;
            }
            let len = match &prior {
                WeightPrior::Gaussian(_) => 1,
                WeightPrior::Sparse(sp) => {
                    let times = sp.inducing_times.get(s).cloned().unwrap_or_default();
                    if times.is_empty() {
                        return Err(Error::Parameter(format!(
                            "sensor {s} has observations but no virtual time points"
                        )));
                    }
                    let mut k = eq_gram(&times, &sp.theta_w)?;
                    for i in 0..k.nrows() {
                        k[(i, i)] += sp.jitter;
                    }
                    let len = times.len();
                    sparse[s] = Some(SparseBlock {
                        times,
                        factor: Factor::new(k)?,
                    });
                    len
                }
            };
            blocks[s] = Some(dim..dim + len);
            dim += len;
        }
        let layout = LatentLayout { blocks, dim };

        let mut rows = Vec::with_capacity(data.len());
        for o in &data.observations {
            let row = match (&layout.blocks[o.sensor], &sparse[o.sensor], &prior) {
                (None, _, _) => WeightRow {
                    offset: 1.0,
                    start: 0,
                    coefs: Vec::new(),
                },
                (Some(b), Some(block), WeightPrior::Sparse(sp)) => {
                    let coefs = interpolation_weights(block, &sp.theta_w, &[o.at.t])?;
                    let coefs: Vec<f64> = coefs.row(0).iter().copied().collect();
                    let offset = sp.mean * (1.0 - coefs.iter().sum::<f64>());
                    WeightRow {
                        offset,
                        start: b.start,
                        coefs,
                    }
                }
                (Some(b), _, _) => WeightRow {
                    offset: 0.0,
                    start: b.start,
                    coefs: vec![1.0],
                },
            };
            rows.push(row);
        }

        Ok(Self {
            prior,
            theta_y,
            noise,
            field_mean,
            layout,
            points,
            y: DVector::from_vec(data.values()),
            k_field,
            rows,
            sparse,
        })
    }

    pub fn layout(&self) -> &LatentLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn prior(&self) -> &WeightPrior {
        &self.prior
    }

    pub fn field_mean(&self) -> f64 {
        self.field_mean
    }

    /// Latent vector with every entry at the prior mean.
    pub fn prior_mean_state(&self) -> Vec<f64> {
        vec![self.prior.mean(); self.layout.dim]
    }

    /// Virtual times of a sensor's latent block (empty for Gaussian weights
    /// and for sensors without latents).
    pub fn inducing_times(&self, sensor: usize) -> &[f64] {
        self.sparse
            .get(sensor)
            .and_then(Option::as_ref)
            .map_or(&[], |b| b.times.as_slice())
    }

    fn check_state(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.layout.dim {
            return Err(Error::Shape(format!(
                "latent state has {} entries, model expects {}",
                z.len(),
                self.layout.dim
            )));
        }
        Ok(())
    }

    /// Weight of every observation, in dataset order.
    pub fn observation_weights(&self, z: &[f64]) -> Result<DVector<f64>> {
        self.check_state(z)?;
        Ok(DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|r| r.eval(z)),
        ))
    }

    /// Weight of `sensor` at arbitrary times.
    ///
    /// Reference sensors get 1; a non-reference sensor without observations
    /// (hence without latents) gets the prior mean.
    pub fn weight_at(&self, z: &[f64], sensor: usize, times: &[f64]) -> Result<Vec<f64>> {
        self.check_state(z)?;
        if sensor >= self.layout.n_sensors() {
            return Err(Error::Index {
                index: sensor,
                n_sensors: self.layout.n_sensors(),
            });
        }
        let Some(range) = self.layout.block(sensor) else {
            return Ok(vec![1.0; times.len()]);
        };
        let zs = &z[range];
        match (&self.prior, &self.sparse[sensor]) {
            (WeightPrior::Sparse(sp), Some(block)) => {
                let a = interpolation_weights(block, &sp.theta_w, times)?;
                let centered = DVector::from_iterator(zs.len(), zs.iter().map(|v| v - sp.mean));
                Ok((a * centered).iter().map(|v| v + sp.mean).collect())
            }
            _ => Ok(vec![zs[0]; times.len()]),
        }
    }

    fn log_prior_and_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let mut lp = 0.0;
        match &self.prior {
            WeightPrior::Gaussian(g) => {
                let ln_norm = -0.5 * (2.0 * std::f64::consts::PI * g.variance).ln();
                for (zi, gi) in z.iter().zip(grad.iter_mut()) {
                    let d = zi - g.mean;
                    lp += ln_norm - 0.5 * d * d / g.variance;
                    *gi -= d / g.variance;
                }
            }
            WeightPrior::Sparse(sp) => {
                for s in self.layout.latent_sensors() {
                    let range = self.layout.block(s).expect("latent sensor");
                    let block = self.sparse[s].as_ref().expect("sparse block");
                    let d = DVector::from_iterator(
                        range.len(),
                        z[range.clone()].iter().map(|v| v - sp.mean),
                    );
                    lp += block.factor.log_normal_density(&d);
                    let alpha = block.factor.solve(&d);
                    for (gi, a) in grad[range].iter_mut().zip(alpha.iter()) {
                        *gi -= a;
                    }
                }
            }
        }
        lp
    }

    fn field_covariance(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let n = w.len();
        let mut cov = DMatrix::from_fn(n, n, |i, j| w[i] * self.k_field[(i, j)] * w[j]);
        for i in 0..n {
            cov[(i, i)] += self.noise.variance;
        }
        cov
    }

    /// `log p(z) + log N(y; w ∘ m0, W K_f W + noise I)`. Returns `-inf` where
    /// the density cannot be evaluated.
    pub fn log_joint(&self, z: &[f64]) -> f64 {
        let mut scratch = vec![0.0; z.len()];
        self.eval(z, &mut scratch, false)
    }

    /// Gradient of [`Self::log_joint`] with respect to `z`.
    pub fn grad_log_joint(&self, z: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; z.len()];
        self.eval(z, &mut grad, true);
        grad
    }

    pub fn log_joint_and_grad(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; z.len()];
        let lp = self.eval(z, &mut grad, true);
        (lp, grad)
    }

    fn eval(&self, z: &[f64], grad: &mut [f64], with_grad: bool) -> f64 {
        if z.len() != self.layout.dim || z.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        let w = DVector::from_iterator(self.rows.len(), self.rows.iter().map(|r| r.eval(z)));
        let r = &self.y - &w * self.field_mean;
        let Ok(factor) = Factor::new(self.field_covariance(&w)) else {
            return f64::NEG_INFINITY;
        };
        let lp = factor.log_normal_density(&r) + self.log_prior_and_grad(z, grad);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        if !with_grad {
            return lp;
        }

        // ∂/∂w_n = Σ_k (α_n α_k − Σ⁻¹_nk) K_nk w_k + α_n m0
        let alpha = factor.solve(&r);
        let inv = factor.inverse();
        let n = w.len();
        let mut g_w = vec![0.0; n];
        for k in 0..n {
            let ak = alpha[k] * w[k];
            let wk = w[k];
            for (i, gi) in g_w.iter_mut().enumerate() {
                *gi += (alpha[i] * ak - inv[(i, k)] * wk) * self.k_field[(i, k)];
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            let gi = g_w[i] + alpha[i] * self.field_mean;
            for (c, g) in row.coefs.iter().zip(&mut grad[row.start..]) {
                *g += c * gi;
            }
        }
        lp
    }

    /// Posterior of the latent field at `query`, given the weights implied
    /// by `z`.
    pub fn predict_field(&self, z: &[f64], query: &[SpaceTimePoint]) -> Result<GPPosterior> {
        let w = self.observation_weights(z)?;
        let factor = Factor::new(self.field_covariance(&w))?;
        let mut k_cross = eq_kernel(&self.points, query, &self.theta_y)?;
        for (i, mut row) in k_cross.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let k_test = eq_gram(query, &self.theta_y)?;
        let r = &self.y - &w * self.field_mean;
        let mut post = condition(&factor, &k_cross, &k_test, &r);
        post.mean.add_scalar_mut(self.field_mean);
        Ok(post)
    }
}

/// `K(times, t_s) (K(t_s, t_s) + jitter I)^{-1}`.
fn interpolation_weights(
    block: &SparseBlock,
    theta_w: &KernelParams,
    times: &[f64],
) -> Result<DMatrix<f64>> {
    let k_ts = eq_kernel(&block.times, times, theta_w)?;
    Ok(block.factor.solve_matrix(&k_ts).transpose())
}

impl Target for CalibrationModel {
    fn dim(&self) -> usize {
        self.layout.dim
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.eval(x, grad, true)
    }
}
