//! The `simulate`, `calibrate` and `predict` commands.
//!
//! Each `cmd_*` function writes its artifacts into the output directory.
//! The steps they are built from are public so tests can run the pipeline
//! in memory.

use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use netcal::calib::{negative_fraction, posterior_summary, BandSummary, CalibrationModel, Standardization, WeightPrior};
use netcal::data::Dataset;
use netcal::hmc::{self, diagnostics, Affine, Chain};
use netcal::kernels::SpaceTimePoint;
use netcal::sim::{self, Simulation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::config::{FieldMean, Precondition, RunConfig};
use crate::io;
use crate::CliError;

/// Seed offset for the initial-state perturbation of the chains.
const INIT_STREAM: u64 = 0x1417;

pub const OBSERVATIONS_CSV: &str = "observations.csv";
pub const TRUTH_CSV: &str = "truth.csv";
pub const CHAINS_CSV: &str = "chains.csv";
pub const WEIGHT_SUMMARY_CSV: &str = "weight_summary.csv";
pub const FIELD_POSTERIOR_CSV: &str = "field_posterior.csv";
pub const CALIBRATION_SUMMARY_JSON: &str = "calibration_summary.json";
pub const PREDICTION_SUMMARY_JSON: &str = "prediction_summary.json";

/// `<command>_manifest.json`, so commands sharing a directory keep their own.
pub fn manifest_name(command: &str) -> String {
    format!("{command}_manifest.json")
}

pub const WEIGHT_SUMMARY_HEADER: [&str; 8] =
    ["sensor_id", "t", "median", "std_err", "lower", "upper", "q025", "q975"];
pub const FIELD_POSTERIOR_HEADER: [&str; 9] =
    ["x_km", "y_km", "t", "median", "std_err", "lower", "upper", "q025", "q975"];

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub chains: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub chains_n: Option<usize>,
}

/// Reads the config (or the all-defaults config) and applies overrides.
pub fn resolve_config(path: Option<&Path>, ov: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::from_toml(&format!("version = {}\n", crate::config::SCHEMA_VERSION))?,
    };
    if let Some(seed) = ov.seed {
        cfg.seed = seed;
    }
    if let Some(n) = ov.chains_n {
        cfg.hmc.chains = n;
    }
    if let Some(d) = &ov.data {
        cfg.data = Some(d.clone());
        cfg.scenario = None;
    }
    if let Some(o) = &ov.out {
        cfg.out = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Config(format!("output directory {}: {e}", dir.display())))?;
    Ok(dir)
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    netcal_version: &'a str,
    outputs: &'a [&'a str],
}

fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, outputs: &[&str]) -> Result<(), CliError> {
    io::write_json(
        &dir.join(manifest_name(command)),
        &Manifest {
            command,
            config_hash: cfg.hash(),
            seed: cfg.seed,
            netcal_version: env!("CARGO_PKG_VERSION"),
            outputs,
        },
    )
}

pub fn simulate(cfg: &RunConfig) -> Result<Simulation, CliError> {
    let scenario = cfg.scenario()?;
    Ok(sim::simulate(&scenario)?)
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let sim = simulate(cfg)?;
    let dir = output_dir(cfg)?;
    io::write_observations(&dir.join(OBSERVATIONS_CSV), &sim.dataset)?;
    io::write_truth(&dir.join(TRUTH_CSV), &sim)?;
    write_manifest(&dir, "simulate", cfg, &[OBSERVATIONS_CSV, TRUTH_CSV])?;
    info!(
        "simulated {} observations from {} sensors into {}",
        sim.dataset.len(),
        sim.dataset.n_sensors,
        dir.display()
    );
    Ok(dir)
}

/// The dataset named by the config, or a fresh simulation of its scenario.
pub fn load_data(cfg: &RunConfig) -> Result<Dataset, CliError> {
    match (&cfg.data, &cfg.scenario) {
        (Some(path), _) => io::read_observations(path),
        (None, Some(_)) => Ok(simulate(cfg)?.dataset),
        (None, None) => Err(CliError::Config("no data: pass --data or add a [scenario] section".into())),
    }
}

/// A calibration model built on standardized data.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub data: Dataset,
    pub standardization: Standardization,
    pub model: CalibrationModel,
}

pub fn prepare(cfg: &RunConfig, data: &Dataset) -> Result<Prepared, CliError> {
    if !data.observations.iter().any(|o| data.is_reference(o.sensor)) {
        return Err(CliError::NoReference);
    }
    let standardization = Standardization::from_reference(data)?;
    let scaled = standardization.apply(data);
    let field_mean = match cfg.field.mean {
        FieldMean::Value(v) => v,
        FieldMean::Named(_) => standardization.reference_mean(data),
    };
    let prior = cfg.weight_prior(&scaled)?;
    let model = CalibrationModel::new(&scaled, prior, cfg.theta_y()?, cfg.noise_model()?, field_mean)?;
    debug!(
        "standardized by {:.6}; field mean {:.6}; {} latent values",
        standardization.scale,
        field_mean,
        model.dim()
    );
    Ok(Prepared {
        data: data.clone(),
        standardization,
        model,
    })
}

/// `center` plus a small seeded perturbation, one per chain.
pub fn initial_states(cfg: &RunConfig, center: &[f64]) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(INIT_STREAM));
    let normal = Normal::new(0.0, cfg.hmc.init_jitter).expect("validated jitter");
    (0..cfg.hmc.chains)
        .map(|_| center.iter().map(|m| m + normal.sample(&mut rng)).collect())
        .collect()
}

pub fn run_chains(cfg: &RunConfig, model: &CalibrationModel) -> Result<Vec<Chain>, CliError> {
    if model.dim() == 0 {
        return Ok(Vec::new());
    }
    let prior_mean = model.prior_mean_state();
    let laplace = match cfg.hmc.precondition {
        Precondition::None => None,
        Precondition::Laplace => match hmc::laplace_approximation(model, &prior_mean) {
            Ok(l) => Some(l),
            Err(e) => {
                warn!("no Laplace preconditioning ({e}); sampling unwhitened");
                None
            }
        },
    };
    let chains = match laplace {
        Some(l) => {
            debug!("posterior mode {:?} (converged: {})", l.mode, l.converged);
            let whitened = Affine::new(model, l.mode, l.scale)?;
            let inits = initial_states(cfg, &vec![0.0; model.dim()]);
            let mut chains = hmc::sample_chains(&whitened, &inits, &cfg.hmc_config())?;
            for c in &mut chains {
                for z in &mut c.samples {
                    *z = whitened.to_original(z);
                }
            }
            chains
        }
        None => hmc::sample_chains(model, &initial_states(cfg, &prior_mean), &cfg.hmc_config())?,
    };
    for (c, chain) in chains.iter().enumerate() {
        info!(
            "chain {c}: accept rate {:.3}, step size {:.4}",
            chain.accept_rate, chain.step_size
        );
    }
    Ok(chains)
}

/// Posterior band of one sensor's weight at one time (`None` for
/// time-invariant weights).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightRow {
    pub sensor: usize,
    pub t: Option<f64>,
    pub band: BandSummary,
}

fn distinct_times(data: &Dataset, sensor: usize) -> Vec<f64> {
    let mut ts: Vec<f64> = data
        .observations
        .iter()
        .filter(|o| o.sensor == sensor)
        .map(|o| o.at.t)
        .collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts
}

/// Weight bands for every non-reference sensor with latents, at each of its
/// observation times.
pub fn weight_table(prepared: &Prepared, chains: &[Chain]) -> Result<Vec<WeightRow>, CliError> {
    let model = &prepared.model;
    let mut rows = Vec::new();
    for s in model.layout().latent_sensors() {
        let times = match model.prior() {
            WeightPrior::Gaussian(_) => vec![None],
            WeightPrior::Sparse(_) => distinct_times(&prepared.data, s).into_iter().map(Some).collect(),
        };
        let query: Vec<f64> = times.iter().map(|t| t.unwrap_or(0.0)).collect();
        let bands = posterior_summary(chains, |z| {
            model.weight_at(z, s, &query).expect("state from this model")
        })?;
        rows.extend(times.into_iter().zip(bands).map(|(t, band)| WeightRow { sensor: s, t, band }));
    }
    Ok(rows)
}

fn band_cells(b: &BandSummary) -> [String; 6] {
    [b.median, b.std_err, b.lower(), b.upper(), b.q025, b.q975].map(io::fmt_f64)
}

pub fn write_weight_table(path: &Path, rows: &[WeightRow]) -> Result<(), CliError> {
    io::write_table(
        path,
        &WEIGHT_SUMMARY_HEADER,
        rows.iter().map(|r| {
            let mut row = vec![r.sensor.to_string(), r.t.map(io::fmt_f64).unwrap_or_default()];
            row.extend(band_cells(&r.band));
            row
        }),
    )
}

#[derive(Debug, Serialize)]
struct ChainSummary {
    accept_rate: f64,
    step_size: f64,
    min_ess: f64,
}

#[derive(Debug, Serialize)]
struct SensorSummary {
    sensor_id: usize,
    median_min: f64,
    median_max: f64,
    mean_std_err: f64,
    max_negative_fraction: f64,
}

#[derive(Debug, Serialize)]
struct CalibrationSummary {
    config_hash: String,
    seed: u64,
    n_observations: usize,
    n_sensors: usize,
    reference_sensors: Vec<usize>,
    scale: f64,
    field_mean: f64,
    latent_dim: usize,
    chains: Vec<ChainSummary>,
    weights: Vec<SensorSummary>,
}

fn sensor_summaries(prepared: &Prepared, chains: &[Chain], rows: &[WeightRow]) -> Vec<SensorSummary> {
    let model = &prepared.model;
    model
        .layout()
        .latent_sensors()
        .map(|s| {
            let bands: Vec<&BandSummary> = rows.iter().filter(|r| r.sensor == s).map(|r| &r.band).collect();
            let query: Vec<f64> = rows.iter().filter(|r| r.sensor == s).map(|r| r.t.unwrap_or(0.0)).collect();
            let neg = negative_fraction(chains, |z| model.weight_at(z, s, &query).expect("state from this model"));
            SensorSummary {
                sensor_id: s,
                median_min: bands.iter().map(|b| b.median).fold(f64::INFINITY, f64::min),
                median_max: bands.iter().map(|b| b.median).fold(f64::NEG_INFINITY, f64::max),
                mean_std_err: bands.iter().map(|b| b.std_err).sum::<f64>() / bands.len().max(1) as f64,
                max_negative_fraction: neg.into_iter().fold(0.0, f64::max),
            }
        })
        .collect()
}

/// Output of a calibration run, kept in memory.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub prepared: Prepared,
    /// Full (unthinned) post-burn-in chains.
    pub chains: Vec<Chain>,
    pub weights: Vec<WeightRow>,
}

pub fn calibrate(cfg: &RunConfig, data: &Dataset) -> Result<Calibration, CliError> {
    let prepared = prepare(cfg, data)?;
    let chains = run_chains(cfg, &prepared.model)?;
    let weights = if chains.is_empty() {
        Vec::new()
    } else {
        weight_table(&prepared, &chains)?
    };
    Ok(Calibration {
        prepared,
        chains,
        weights,
    })
}

pub fn cmd_calibrate(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let data = load_data(cfg)?;
    let cal = calibrate(cfg, &data)?;
    let dir = output_dir(cfg)?;
    let model = &cal.prepared.model;
    io::write_chains(&dir.join(CHAINS_CSV), &cal.chains, model.layout(), cfg.hmc.thin)?;
    write_weight_table(&dir.join(WEIGHT_SUMMARY_CSV), &cal.weights)?;
    let summary = CalibrationSummary {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        n_observations: data.len(),
        n_sensors: data.n_sensors,
        reference_sensors: data.reference_sensors.iter().copied().collect(),
        scale: cal.prepared.standardization.scale,
        field_mean: model.field_mean(),
        latent_dim: model.dim(),
        chains: cal
            .chains
            .iter()
            .map(|c| {
                let d = diagnostics(c);
                ChainSummary {
                    accept_rate: c.accept_rate,
                    step_size: c.step_size,
                    min_ess: d.ess.into_iter().fold(f64::INFINITY, f64::min),
                }
            })
            .collect(),
        weights: sensor_summaries(&cal.prepared, &cal.chains, &cal.weights),
    };
    io::write_json(&dir.join(CALIBRATION_SUMMARY_JSON), &summary)?;
    write_manifest(&dir, "calibrate", cfg, &[CHAINS_CSV, WEIGHT_SUMMARY_CSV, CALIBRATION_SUMMARY_JSON])?;
    info!(
        "calibrated {} sensors ({} latent values) into {}",
        summary.weights.len(),
        model.dim(),
        dir.display()
    );
    Ok(dir)
}

/// Pooled field posterior at one query point, in measured units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldRow {
    pub at: SpaceTimePoint,
    pub band: BandSummary,
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Quantile of an equal-weight mixture of normals, by bisection.
fn mixture_quantile(means: &[f64], sds: &[f64], q: f64) -> f64 {
    let cdf = |x: f64| {
        means
            .iter()
            .zip(sds)
            .map(|(&m, &s)| {
                if s > 0.0 {
                    normal_cdf((x - m) / s)
                } else if x >= m {
                    1.0
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            / means.len() as f64
    };
    let spread = |sign: f64| {
        means
            .iter()
            .zip(sds)
            .map(|(&m, &s)| m + sign * 10.0 * s)
            .fold(sign * f64::NEG_INFINITY, |a, b| if sign > 0.0 { a.max(b) } else { a.min(b) })
    };
    let (mut lo, mut hi) = (spread(-1.0), spread(1.0));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Draws used for prediction: at most `max` of the pooled draws, at an even
/// stride.
fn prediction_draws(chains: &[Chain], max: usize) -> Vec<&[f64]> {
    let pooled: Vec<&[f64]> = chains.iter().flat_map(|c| c.samples.iter().map(Vec::as_slice)).collect();
    let stride = pooled.len().div_ceil(max.max(1)).max(1);
    pooled.into_iter().step_by(stride).collect()
}

/// Field posterior at `query`, pooling the per-draw Gaussian posteriors.
pub fn field_table(
    prepared: &Prepared,
    chains: &[Chain],
    query: &[SpaceTimePoint],
    max_draws: usize,
) -> Result<Vec<FieldRow>, CliError> {
    let model = &prepared.model;
    let empty: Vec<f64> = Vec::new();
    let mut draws = prediction_draws(chains, max_draws);
    if draws.is_empty() {
        if model.dim() > 0 {
            return Err(CliError::Mismatch("no weight samples to predict with".into()));
        }
        draws.push(&empty);
    }
    let n = query.len();
    let mut means = vec![Vec::with_capacity(draws.len()); n];
    let mut sds = vec![Vec::with_capacity(draws.len()); n];
    for z in &draws {
        let post = model.predict_field(z, query)?;
        let var = post.variances();
        for j in 0..n {
            means[j].push(post.mean[j]);
            sds[j].push(var[j].max(0.0).sqrt());
        }
    }
    let scale = prepared.standardization.scale;
    Ok((0..n)
        .map(|j| {
            let m = &means[j];
            let s = &sds[j];
            let k = m.len() as f64;
            let mean = m.iter().sum::<f64>() / k;
            let var = s.iter().map(|v| v * v).sum::<f64>() / k
                + m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k;
            FieldRow {
                at: query[j],
                band: BandSummary {
                    median: mixture_quantile(m, s, 0.5) * scale,
                    std_err: var.sqrt() * scale,
                    mean: mean * scale,
                    q025: mixture_quantile(m, s, 0.025) * scale,
                    q975: mixture_quantile(m, s, 0.975) * scale,
                },
            }
        })
        .collect())
}

pub fn write_field_table(path: &Path, rows: &[FieldRow]) -> Result<(), CliError> {
    io::write_table(
        path,
        &FIELD_POSTERIOR_HEADER,
        rows.iter().map(|r| {
            let mut row = vec![io::fmt_f64(r.at.x), io::fmt_f64(r.at.y), io::fmt_f64(r.at.t)];
            row.extend(band_cells(&r.band));
            row
        }),
    )
}

#[derive(Debug, Serialize)]
struct PredictionSummary {
    config_hash: String,
    seed: u64,
    n_query: usize,
    n_draws: usize,
    scale: f64,
    max_std_err: f64,
}

pub fn cmd_predict(cfg: &RunConfig, chains_path: &Path) -> Result<PathBuf, CliError> {
    let query = cfg
        .predict
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [predict] section with query points".into()))?;
    let points = query.query_points()?;
    let data = load_data(cfg)?;
    let prepared = prepare(cfg, &data)?;
    let chains = io::read_chains(chains_path, prepared.model.layout())?;
    let rows = field_table(&prepared, &chains, &points, query.max_draws)?;
    let dir = output_dir(cfg)?;
    write_field_table(&dir.join(FIELD_POSTERIOR_CSV), &rows)?;
    io::write_json(
        &dir.join(PREDICTION_SUMMARY_JSON),
        &PredictionSummary {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            n_query: rows.len(),
            n_draws: prediction_draws(&chains, query.max_draws).len().max(1),
            scale: prepared.standardization.scale,
            max_std_err: rows.iter().map(|r| r.band.std_err).fold(0.0, f64::max),
        },
    )?;
    write_manifest(&dir, "predict", cfg, &[FIELD_POSTERIOR_CSV, PREDICTION_SUMMARY_JSON])?;
    info!("predicted {} points into {}", rows.len(), dir.display());
    Ok(dir)
}
