//! Run configuration, read from TOML.
//!
//! Every section rejects unknown keys. Model hyperparameters (`[field]`,
//! `[noise]`) are in standardized units: measured values are divided by the
//! root-mean-square reference reading before inference.
//!
//! ```toml
//! version = 1
//! seed = 7
//!
//! [scenario]
//! kind = "two_sensor"
//!
//! [prior]
//! kind = "sparse_gp"
//! lengthscale = 4.0
//! ```

use std::path::{Path, PathBuf};

use netcal::calib::{GaussianWeightPrior, SparseWeightPrior, WeightPrior};
use netcal::data::Dataset;
use netcal::gp::NoiseModel;
use netcal::hmc::HmcConfig;
use netcal::kernels::{KernelParams, SpaceTimePoint};
use netcal::sim::{self, FieldSpec, Layout};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Observations file to calibrate; mutually exclusive with `[scenario]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioSection>,
    #[serde(default)]
    pub prior: PriorSection,
    #[serde(default)]
    pub field: FieldSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub hmc: HmcSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predict: Option<PredictSection>,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioSection {
    TwoSensor {
        #[serde(default = "two_sensor_span")]
        span: [f64; 2],
        #[serde(default = "two_sensor_cadence")]
        cadence: f64,
        #[serde(default = "default_noise_sd")]
        noise_sd: f64,
        #[serde(default = "two_sensor_field")]
        field: FieldSpecSection,
        #[serde(default = "two_sensor_bias")]
        bias: f64,
        #[serde(default = "one")]
        speed: f64,
    },
    Network {
        #[serde(default = "network_span")]
        span: [f64; 2],
        #[serde(default = "one")]
        cadence: f64,
        #[serde(default = "default_noise_sd")]
        noise_sd: f64,
        #[serde(default = "network_field")]
        field: FieldSpecSection,
        #[serde(default = "network_weights")]
        weights: Vec<f64>,
        #[serde(default = "network_max_speed")]
        max_speed: f64,
    },
    Clogging {
        #[serde(default = "clogging_span")]
        span: [f64; 2],
        #[serde(default = "one")]
        cadence: f64,
        #[serde(default = "default_noise_sd")]
        noise_sd: f64,
        #[serde(default = "clogging_field")]
        field: FieldSpecSection,
        #[serde(default = "one")]
        initial_weight: f64,
        #[serde(default = "clogged_weight")]
        clogged_weight: f64,
        #[serde(default = "maintenance_time")]
        maintenance_time: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpecSection {
    Smooth {
        mean: f64,
        amplitude: f64,
        period: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        wavelength: Option<f64>,
    },
    Gp {
        mean: f64,
        variance: f64,
        lengthscales: [f64; 3],
    },
}

fn one() -> f64 {
    1.0
}
fn default_noise_sd() -> f64 {
    0.5
}
fn two_sensor_span() -> [f64; 2] {
    [-1.0, 10.0]
}
fn two_sensor_cadence() -> f64 {
    4.0
}
fn two_sensor_bias() -> f64 {
    3.0
}
fn network_span() -> [f64; 2] {
    [0.0, 20.0]
}
fn network_max_speed() -> f64 {
    5.0
}
fn clogging_span() -> [f64; 2] {
    [0.0, 60.0]
}
fn clogged_weight() -> f64 {
    0.4
}
fn maintenance_time() -> f64 {
    40.0
}

fn field_section(spec: FieldSpec) -> FieldSpecSection {
    match spec {
        FieldSpec::Smooth {
            mean,
            amplitude,
            period,
            wavelength,
        } => FieldSpecSection::Smooth {
            mean,
            amplitude,
            period,
            wavelength,
        },
        FieldSpec::Gp { params, mean } => FieldSpecSection::Gp {
            mean,
            variance: params.variance(),
            lengthscales: [
                params.lengthscales()[0],
                params.lengthscales()[1],
                params.lengthscales()[2],
            ],
        },
    }
}

fn two_sensor_field() -> FieldSpecSection {
    field_section(sim::ScenarioConfig::two_sensor().field)
}
fn network_field() -> FieldSpecSection {
    field_section(sim::ScenarioConfig::network().field)
}
fn clogging_field() -> FieldSpecSection {
    field_section(sim::ScenarioConfig::clogging().field)
}
fn network_weights() -> Vec<f64> {
    sim::NetworkLayout::default().weights
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSection {
    Gaussian {
        #[serde(default = "one")]
        mean: f64,
        #[serde(default = "gaussian_prior_variance")]
        variance: f64,
    },
    SparseGp {
        #[serde(default = "one")]
        mean: f64,
        #[serde(default = "sparse_prior_variance")]
        variance: f64,
        #[serde(default = "sparse_prior_lengthscale")]
        lengthscale: f64,
        /// Virtual-time spacing; defaults to half the lengthscale.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spacing: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        jitter: Option<f64>,
    },
}

fn gaussian_prior_variance() -> f64 {
    25.0
}
fn sparse_prior_variance() -> f64 {
    4.0
}
fn sparse_prior_lengthscale() -> f64 {
    4.0
}

impl Default for PriorSection {
    fn default() -> Self {
        Self::Gaussian {
            mean: 1.0,
            variance: gaussian_prior_variance(),
        }
    }
}

/// Field prior mean: the mean reference reading, or a fixed value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldMean {
    Value(f64),
    Named(FieldMeanName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldMeanName {
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSection {
    #[serde(default = "field_variance")]
    pub variance: f64,
    /// x, y (km) and t.
    #[serde(default = "field_lengthscales")]
    pub lengthscales: [f64; 3],
    #[serde(default = "field_mean")]
    pub mean: FieldMean,
}

fn field_variance() -> f64 {
    0.1
}
fn field_lengthscales() -> [f64; 3] {
    [2.0, 2.0, 1.0]
}
fn field_mean() -> FieldMean {
    FieldMean::Named(FieldMeanName::Reference)
}

impl Default for FieldSection {
    fn default() -> Self {
        Self {
            variance: field_variance(),
            lengthscales: field_lengthscales(),
            mean: field_mean(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default = "noise_variance")]
    pub variance: f64,
}

fn noise_variance() -> f64 {
    4e-4
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            variance: noise_variance(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmcSection {
    #[serde(default = "step_size")]
    pub step_size: f64,
    #[serde(default = "n_leapfrog")]
    pub n_leapfrog: usize,
    #[serde(default = "n_samples")]
    pub n_samples: usize,
    #[serde(default = "n_burnin")]
    pub n_burnin: usize,
    #[serde(default = "n_chains")]
    pub chains: usize,
    #[serde(default)]
    pub adapt: bool,
    #[serde(default = "target_accept")]
    pub target_accept: f64,
    /// Keep every `thin`-th draw in `chains.csv`.
    #[serde(default = "thin")]
    pub thin: usize,
    /// Standard deviation of the per-chain perturbation of the initial state.
    #[serde(default = "init_jitter")]
    pub init_jitter: f64,
    /// Relative half-width of the per-iteration step-size draw.
    #[serde(default = "step_jitter")]
    pub step_jitter: f64,
    #[serde(default)]
    pub precondition: Precondition,
}

/// Linear reparametrization applied before sampling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precondition {
    /// Whiten with a Gaussian approximation at the posterior mode.
    #[default]
    Laplace,
    None,
}

fn step_size() -> f64 {
    0.05
}
fn n_leapfrog() -> usize {
    10
}
fn n_samples() -> usize {
    1000
}
fn n_burnin() -> usize {
    500
}
fn n_chains() -> usize {
    4
}
fn target_accept() -> f64 {
    0.8
}
fn thin() -> usize {
    1
}
fn init_jitter() -> f64 {
    0.1
}
fn step_jitter() -> f64 {
    0.2
}

impl Default for HmcSection {
    fn default() -> Self {
        Self {
            step_size: step_size(),
            n_leapfrog: n_leapfrog(),
            n_samples: n_samples(),
            n_burnin: n_burnin(),
            chains: n_chains(),
            adapt: false,
            target_accept: target_accept(),
            thin: thin(),
            init_jitter: init_jitter(),
            step_jitter: step_jitter(),
            precondition: Precondition::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictSection {
    /// Explicit query points `[x_km, y_km, t]`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSection>,
    /// Upper bound on the pooled weight draws used, taken at an even stride.
    #[serde(default = "max_draws")]
    pub max_draws: usize,
}

fn max_draws() -> usize {
    1000
}

/// Cartesian grid; each axis is `[start, stop, count]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub x: [f64; 3],
    pub y: [f64; 3],
    pub t: [f64; 3],
}

fn axis(name: &str, [lo, hi, n]: [f64; 3]) -> Result<Vec<f64>, CliError> {
    if !(n >= 1.0 && n.fract() == 0.0) || !lo.is_finite() || !hi.is_finite() {
        return Err(CliError::Config(format!(
            "predict.grid.{name}: expected [start, stop, count] with integer count >= 1"
        )));
    }
    let n = n as usize;
    Ok(if n == 1 {
        vec![lo]
    } else {
        (0..n)
            .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
            .collect()
    })
}

impl PredictSection {
    pub fn query_points(&self) -> Result<Vec<SpaceTimePoint>, CliError> {
        let mut out: Vec<SpaceTimePoint> = self
            .points
            .iter()
            .map(|&[x, y, t]| SpaceTimePoint::new(x, y, t))
            .collect();
        if let Some(g) = &self.grid {
            let (xs, ys, ts) = (axis("x", g.x)?, axis("y", g.y)?, axis("t", g.t)?);
            for &t in &ts {
                for &y in &ys {
                    for &x in &xs {
                        out.push(SpaceTimePoint::new(x, y, t));
                    }
                }
            }
        }
        if out.iter().any(|p| !p.is_finite()) {
            return Err(CliError::Config("predict: non-finite query point".into()));
        }
        Ok(out)
    }
}

fn positive(field: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{field} must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "version: unsupported schema version {} (expected {SCHEMA_VERSION})",
                self.version
            )));
        }
        if self.scenario.is_some() && self.data.is_some() {
            return Err(CliError::Config(
                "give either [scenario] or data, not both".into(),
            ));
        }
        match &self.prior {
            PriorSection::Gaussian { variance, mean } => {
                positive("prior.variance", *variance)?;
                if !mean.is_finite() {
                    return Err(CliError::Config("prior.mean must be finite".into()));
                }
            }
            PriorSection::SparseGp {
                variance,
                lengthscale,
                spacing,
                jitter,
                mean,
            } => {
                positive("prior.variance", *variance)?;
                positive("prior.lengthscale", *lengthscale)?;
                if let Some(s) = spacing {
                    positive("prior.spacing", *s)?;
                }
                if let Some(j) = jitter {
                    if !(*j >= 0.0 && j.is_finite()) {
                        return Err(CliError::Config("prior.jitter must be >= 0".into()));
                    }
                }
                if !mean.is_finite() {
                    return Err(CliError::Config("prior.mean must be finite".into()));
                }
            }
        }
        positive("field.variance", self.field.variance)?;
        for (l, name) in self.field.lengthscales.iter().zip(["x", "y", "t"]) {
            positive(&format!("field.lengthscales.{name}"), *l)?;
        }
        if let FieldMean::Value(v) = self.field.mean {
            if !v.is_finite() {
                return Err(CliError::Config("field.mean must be finite".into()));
            }
        }
        if !(self.noise.variance >= 0.0 && self.noise.variance.is_finite()) {
            return Err(CliError::Config("noise.variance must be >= 0".into()));
        }
        let h = &self.hmc;
        positive("hmc.step_size", h.step_size)?;
        for (name, v) in [
            ("hmc.n_leapfrog", h.n_leapfrog),
            ("hmc.n_samples", h.n_samples),
            ("hmc.chains", h.chains),
            ("hmc.thin", h.thin),
        ] {
            if v == 0 {
                return Err(CliError::Config(format!("{name} must be at least 1")));
            }
        }
        if !(h.target_accept > 0.0 && h.target_accept < 1.0) {
            return Err(CliError::Config("hmc.target_accept must lie in (0, 1)".into()));
        }
        if !(h.init_jitter >= 0.0 && h.init_jitter.is_finite()) {
            return Err(CliError::Config("hmc.init_jitter must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&h.step_jitter) {
            return Err(CliError::Config("hmc.step_jitter must lie in [0, 1)".into()));
        }
        if let Some(s) = &self.scenario {
            s.to_scenario(self.seed)?
                .validate()
                .map_err(|e| CliError::Config(format!("scenario: {e}")))?;
        }
        if let Some(p) = &self.predict {
            if p.max_draws == 0 {
                return Err(CliError::Config("predict.max_draws must be at least 1".into()));
            }
            p.query_points()?;
        }
        Ok(())
    }

    /// SHA-256 of the resolved configuration (defaults filled in). The
    /// output directory is left out: it does not affect any result.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&Self {
            out: None,
            ..self.clone()
        })
        .expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn scenario(&self) -> Result<sim::ScenarioConfig, CliError> {
        match &self.scenario {
            Some(s) => s.to_scenario(self.seed),
            None => Err(CliError::Config("missing [scenario] section".into())),
        }
    }

    pub fn weight_prior(&self, data: &Dataset) -> Result<WeightPrior, CliError> {
        let prior = match &self.prior {
            PriorSection::Gaussian { mean, variance } => {
                WeightPrior::Gaussian(GaussianWeightPrior::new(*mean, *variance)?)
            }
            PriorSection::SparseGp {
                mean,
                variance,
                lengthscale,
                spacing,
                jitter,
            } => {
                let theta_w = KernelParams::new(*variance, vec![*lengthscale])?;
                let spacing = spacing.unwrap_or(lengthscale / 2.0);
                let mut sp = SparseWeightPrior::uniform_grid(data, theta_w, *mean, spacing)?;
                if let Some(j) = jitter {
                    sp.jitter = *j;
                }
                WeightPrior::Sparse(sp)
            }
        };
        Ok(prior)
    }

    pub fn theta_y(&self) -> Result<KernelParams, CliError> {
        Ok(KernelParams::new(
            self.field.variance,
            self.field.lengthscales.to_vec(),
        )?)
    }

    pub fn noise_model(&self) -> Result<NoiseModel, CliError> {
        Ok(NoiseModel::new(self.noise.variance)?)
    }

    pub fn hmc_config(&self) -> HmcConfig {
        HmcConfig {
            step_size: self.hmc.step_size,
            n_leapfrog: self.hmc.n_leapfrog,
            n_samples: self.hmc.n_samples,
            n_burnin: self.hmc.n_burnin,
            seed: self.seed,
            mass: None,
            adapt: self.hmc.adapt,
            target_accept: self.hmc.target_accept,
            step_jitter: self.hmc.step_jitter,
        }
    }
}

fn to_field(spec: &FieldSpecSection) -> Result<FieldSpec, CliError> {
    Ok(match *spec {
        FieldSpecSection::Smooth {
            mean,
            amplitude,
            period,
            wavelength,
        } => {
            positive("scenario.field.period", period)?;
            if let Some(w) = wavelength {
                positive("scenario.field.wavelength", w)?;
            }
            FieldSpec::Smooth {
                mean,
                amplitude,
                period,
                wavelength,
            }
        }
        FieldSpecSection::Gp {
            mean,
            variance,
            lengthscales,
        } => FieldSpec::Gp {
            params: KernelParams::new(variance, lengthscales.to_vec())
                .map_err(|e| CliError::Config(format!("scenario.field: {e}")))?,
            mean,
        },
    })
}

fn noise_from_sd(sd: f64) -> Result<NoiseModel, CliError> {
    if !(sd >= 0.0 && sd.is_finite()) {
        return Err(CliError::Config(format!(
            "scenario.noise_sd must be >= 0, got {sd}"
        )));
    }
    Ok(NoiseModel { variance: sd * sd })
}

impl ScenarioSection {
    pub fn to_scenario(&self, seed: u64) -> Result<sim::ScenarioConfig, CliError> {
        let cfg = match self {
            Self::TwoSensor {
                span,
                cadence,
                noise_sd,
                field,
                bias,
                speed,
            } => sim::ScenarioConfig {
                seed,
                field: to_field(field)?,
                noise: noise_from_sd(*noise_sd)?,
                cadence: *cadence,
                span: (span[0], span[1]),
                layout: Layout::TwoSensor(sim::TwoSensorLayout {
                    bias: *bias,
                    speed: *speed,
                }),
            },
            Self::Network {
                span,
                cadence,
                noise_sd,
                field,
                weights,
                max_speed,
            } => sim::ScenarioConfig {
                seed,
                field: to_field(field)?,
                noise: noise_from_sd(*noise_sd)?,
                cadence: *cadence,
                span: (span[0], span[1]),
                layout: Layout::Network(sim::NetworkLayout {
                    weights: weights.clone(),
                    max_speed: *max_speed,
                    ..Default::default()
                }),
            },
            Self::Clogging {
                span,
                cadence,
                noise_sd,
                field,
                initial_weight,
                clogged_weight,
                maintenance_time,
            } => sim::ScenarioConfig {
                seed,
                field: to_field(field)?,
                noise: noise_from_sd(*noise_sd)?,
                cadence: *cadence,
                span: (span[0], span[1]),
                layout: Layout::Clogging(sim::CloggingLayout {
                    initial_weight: *initial_weight,
                    clogged_weight: *clogged_weight,
                    maintenance_time: *maintenance_time,
                    ..Default::default()
                }),
            },
        };
        cfg.validate()
            .map_err(|e| CliError::Config(format!("scenario: {e}")))?;
        Ok(cfg)
    }
}
