//! Independent oracles and statistical checks shared by the integration
//! tests and the acceptance suite.
//!
//! Everything here recomputes quantities from scratch with explicit inverses
//! and determinants instead of the library's Cholesky paths.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use netcal::calib::{CalibrationModel, GaussianWeightPrior, SparseWeightPrior, WeightPrior};
use netcal::data::{Dataset, Observation};
use netcal::gp::{self, CoregParam, CoregParams, FitOptions, NoiseModel};
use netcal::hmc::{self, FnTarget, HmcConfig, Target};
use netcal::kernels::{eq_gram, eq_kernel, CoregWeights, KernelParams, SpaceTimePoint};
use netcal::sim::{sample_true_field, FieldSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Outcome of one check: pass flag plus the numbers behind it.
#[derive(Debug, Clone)]
pub struct Check {
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }

    pub fn all(parts: Vec<Check>) -> Check {
        let passed = parts.iter().all(|c| c.passed);
        let detail = parts
            .iter()
            .map(|c| c.detail.as_str())
            .collect::<Vec<_>>()
            .join("; ");
        Check::new(passed, detail)
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<SpaceTimePoint> {
    (0..n)
        .map(|_| {
            SpaceTimePoint::new(
                rng.random_range(0.0..5.0),
                rng.random_range(0.0..5.0),
                rng.random_range(0.0..10.0),
            )
        })
        .collect()
}

pub fn random_space_time_params(rng: &mut ChaCha8Rng) -> KernelParams {
    KernelParams::new(
        rng.random_range(0.5..2.0),
        vec![
            rng.random_range(1.0..3.0),
            rng.random_range(1.0..3.0),
            rng.random_range(1.0..3.0),
        ],
    )
    .unwrap()
}

// ---------------------------------------------------------------------------
// Dense GP oracles

pub fn naive_lml(k: &DMatrix<f64>, y: &DVector<f64>, noise: f64) -> f64 {
    let n = y.len();
    let a = k + DMatrix::identity(n, n) * noise;
    let inv = a.clone().try_inverse().expect("invertible");
    -0.5 * y.dot(&(&inv * y)) - 0.5 * a.determinant().ln() - 0.5 * n as f64 * (2.0 * PI).ln()
}

pub fn naive_posterior(
    k: &DMatrix<f64>,
    k_cross: &DMatrix<f64>,
    k_test: &DMatrix<f64>,
    y: &DVector<f64>,
    noise: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = y.len();
    let inv = (k + DMatrix::identity(n, n) * noise)
        .try_inverse()
        .expect("invertible");
    let mean = k_cross.transpose() * &inv * y;
    let cov = k_test - k_cross.transpose() * &inv * k_cross;
    (mean, cov)
}

fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

/// LML and posterior against explicit-inverse formulas on random problems
/// with up to 20 training points.
pub fn gp_dense_oracle(instances: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    let mut worst_lml = 0.0f64;
    let mut worst_post = 0.0f64;
    for _ in 0..instances {
        let n = r.random_range(2..=20);
        let q = r.random_range(1..=5);
        let params = random_space_time_params(&mut r);
        let noise = r.random_range(0.05..0.5);
        let train = random_points(&mut r, n);
        let test = random_points(&mut r, q);
        let k = eq_gram(&train, &params).unwrap();
        let ks = eq_kernel(&train, &test, &params).unwrap();
        let kss = eq_gram(&test, &params).unwrap();
        let y = DVector::from_fn(n, |_, _| normal(&mut r));
        let nm = NoiseModel::new(noise).unwrap();

        let lml = gp::log_marginal_likelihood(&k, &y, nm).unwrap();
        worst_lml = worst_lml.max(rel(lml, naive_lml(&k, &y, noise), 1e-300));

        let post = gp::posterior(&k, &ks, &kss, &y, nm).unwrap();
        let (mean, cov) = naive_posterior(&k, &ks, &kss, &y, noise);
        let scale = params.variance();
        for j in 0..q {
            worst_post = worst_post.max(rel(post.mean[j], mean[j], scale));
            for i in 0..q {
                worst_post = worst_post.max(rel(post.cov[(i, j)], cov[(i, j)], scale));
            }
        }
    }
    Check::new(
        worst_lml <= 1e-8 && worst_post <= 1e-8,
        format!(
            "{instances} instances: max rel err LML {worst_lml:.2e}, posterior {worst_post:.2e} (tol 1e-8)"
        ),
    )
}

// ---------------------------------------------------------------------------
// Calibration-model oracles

/// A random calibration problem: sensor 0 is the reference.
pub struct Instance {
    pub data: Dataset,
    pub prior: WeightPrior,
    pub theta_y: KernelParams,
    pub noise: f64,
    pub field_mean: f64,
}

impl Instance {
    pub fn model(&self) -> CalibrationModel {
        CalibrationModel::new(
            &self.data,
            self.prior.clone(),
            self.theta_y.clone(),
            NoiseModel::new(self.noise).unwrap(),
            self.field_mean,
        )
        .unwrap()
    }
}

/// `n` observations over `m` sensors; every sensor observed at least once
/// when `n >= m`. `sparse` picks the time-varying weight prior.
pub fn random_instance(r: &mut ChaCha8Rng, n: usize, m: usize, sparse: bool) -> Instance {
    let points = random_points(r, n);
    let theta_y = random_space_time_params(r);
    let field_mean = r.random_range(-1.0..2.0);
    let observations: Vec<Observation> = points
        .iter()
        .enumerate()
        .map(|(i, &at)| {
            let sensor = i % m;
            let w = if sensor == 0 { 1.0 } else { r.random_range(0.5..3.0) };
            Observation {
                sensor,
                at,
                value: w * (field_mean + normal(r)) + 0.2 * normal(r),
            }
        })
        .collect();
    let data = Dataset::new(observations, m, BTreeSet::from([0])).unwrap();
    let prior = if sparse {
        let theta_w = KernelParams::new(r.random_range(0.5..2.0), vec![r.random_range(2.0..5.0)]).unwrap();
        let spacing = theta_w.lengthscales()[0] / 2.0;
        let mut p = SparseWeightPrior::uniform_grid(&data, theta_w, 1.0, spacing).unwrap();
        p.jitter = 1e-6;
        WeightPrior::Sparse(p)
    } else {
        WeightPrior::Gaussian(GaussianWeightPrior::new(1.0, r.random_range(1.0..25.0)).unwrap())
    };
    Instance {
        data,
        prior,
        theta_y,
        noise: r.random_range(0.02..0.2),
        field_mean,
    }
}

/// Latent sensors and block sizes, derived from the definitions rather than
/// from the model.
fn blocks(inst: &Instance) -> Vec<(usize, usize)> {
    let observed: BTreeSet<usize> = inst.data.observations.iter().map(|o| o.sensor).collect();
    let mut start = 0;
    let mut out = Vec::new();
    for s in observed {
        if inst.data.is_reference(s) {
            continue;
        }
        let len = match &inst.prior {
            WeightPrior::Gaussian(_) => 1,
            WeightPrior::Sparse(p) => p.inducing_times[s].len(),
        };
        out.push((s, start));
        start += len;
    }
    out
}

pub fn latent_dim(inst: &Instance) -> usize {
    match &inst.prior {
        WeightPrior::Gaussian(_) => blocks(inst).len(),
        WeightPrior::Sparse(p) => blocks(inst).iter().map(|&(s, _)| p.inducing_times[s].len()).sum(),
    }
}

fn sparse_cov(p: &SparseWeightPrior, s: usize) -> DMatrix<f64> {
    let ts = &p.inducing_times[s];
    let v = p.theta_w.variance();
    let l = p.theta_w.lengthscales()[0];
    DMatrix::from_fn(ts.len(), ts.len(), |i, j| {
        v * (-0.5 * ((ts[i] - ts[j]) / l).powi(2)).exp() + if i == j { p.jitter } else { 0.0 }
    })
}

/// Weight of every observation implied by `z`.
pub fn naive_weights(inst: &Instance, z: &[f64]) -> Vec<f64> {
    let blocks = blocks(inst);
    inst.data
        .observations
        .iter()
        .map(|o| {
            let Some(&(_, start)) = blocks.iter().find(|(s, _)| *s == o.sensor) else {
                return if inst.data.is_reference(o.sensor) { 1.0 } else { inst.prior.mean() };
            };
            match &inst.prior {
                WeightPrior::Gaussian(_) => z[start],
                WeightPrior::Sparse(p) => {
                    let ts = &p.inducing_times[o.sensor];
                    let inv = sparse_cov(p, o.sensor).try_inverse().unwrap();
                    let v = p.theta_w.variance();
                    let l = p.theta_w.lengthscales()[0];
                    let k = DVector::from_fn(ts.len(), |i, _| {
                        v * (-0.5 * ((o.at.t - ts[i]) / l).powi(2)).exp()
                    });
                    let d = DVector::from_fn(ts.len(), |i, _| z[start + i] - p.mean);
                    p.mean + (k.transpose() * inv * d)[0]
                }
            }
        })
        .collect()
}

fn log_mvn(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = x.len() as f64;
    let d = x - mean;
    let inv = cov.clone().try_inverse().unwrap();
    -0.5 * d.dot(&(&inv * &d)) - 0.5 * cov.determinant().ln() - 0.5 * n * (2.0 * PI).ln()
}

pub fn naive_log_prior(inst: &Instance, z: &[f64]) -> f64 {
    match &inst.prior {
        WeightPrior::Gaussian(g) => z
            .iter()
            .map(|v| -0.5 * (2.0 * PI * g.variance).ln() - 0.5 * (v - g.mean).powi(2) / g.variance)
            .sum(),
        WeightPrior::Sparse(p) => blocks(inst)
            .iter()
            .map(|&(s, start)| {
                let n = p.inducing_times[s].len();
                let x = DVector::from_column_slice(&z[start..start + n]);
                log_mvn(&x, &DVector::from_element(n, p.mean), &sparse_cov(p, s))
            })
            .sum(),
    }
}

/// Field term by Bayes' rule at `f = m0`:
/// `log p(y) = log p(y | f) + log p(f) − log p(f | y)`,
/// which never forms the marginal covariance of `y`.
pub fn bayes_field_term(inst: &Instance, w: &[f64]) -> f64 {
    let n = w.len();
    let k = eq_gram(&inst.data.points(), &inst.theta_y).unwrap();
    let y = DVector::from_vec(inst.data.values());
    let wv = DVector::from_column_slice(w);
    let f = DVector::from_element(n, inst.field_mean);
    let s2 = inst.noise;

    let lik: f64 = (0..n)
        .map(|i| -0.5 * (2.0 * PI * s2).ln() - 0.5 * (y[i] - w[i] * f[i]).powi(2) / s2)
        .sum();
    let prior = log_mvn(&f, &f, &k);
    let k_inv = k.clone().try_inverse().unwrap();
    let prec = &k_inv + DMatrix::from_diagonal(&wv.component_mul(&wv)) / s2;
    let cov = prec.try_inverse().unwrap();
    let mean = &cov * (&k_inv * &f + wv.component_mul(&y) / s2);
    lik + prior - log_mvn(&f, &mean, &cov)
}

pub fn naive_log_joint(inst: &Instance, z: &[f64]) -> f64 {
    naive_log_prior(inst, z) + bayes_field_term(inst, &naive_weights(inst, z))
}

pub fn random_state(r: &mut ChaCha8Rng, inst: &Instance) -> Vec<f64> {
    (0..latent_dim(inst))
        .map(|_| inst.prior.mean() + 0.5 * normal(r))
        .collect()
}

/// `grad_log_joint` against central differences (step 1e-5) on random
/// instances with up to 30 observations and 4 sensors.
pub fn gradient_fd_oracle(instances: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let n = r.random_range(6..=30);
        let m = r.random_range(2..=4);
        let inst = random_instance(&mut r, n, m, i % 2 == 0);
        let model = inst.model();
        let z = random_state(&mut r, &inst);
        let g = model.grad_log_joint(&z);
        for j in 0..z.len() {
            let h = 1e-5;
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[j] += h;
            zm[j] -= h;
            let fd = (model.log_joint(&zp) - model.log_joint(&zm)) / (2.0 * h);
            worst = worst.max((g[j] - fd).abs() / fd.abs().max(1.0));
        }
    }
    Check::new(
        worst < 1e-4,
        format!("{instances} instances: max rel gradient err {worst:.2e} (tol 1e-4)"),
    )
}

/// Integrate forward, flip the momentum, integrate back.
pub fn leapfrog_round_trip<T: Target + ?Sized>(target: &T, x0: &[f64], p0: &[f64], step: f64, n: usize) -> f64 {
    let d = x0.len();
    let inv_mass = vec![1.0; d];
    let mut x = x0.to_vec();
    let mut p = p0.to_vec();
    let mut g = vec![0.0; d];
    target.log_density_grad(&x, &mut g);
    hmc::leapfrog(target, &mut x, &mut p, &mut g, step, n, &inv_mass);
    p.iter_mut().for_each(|v| *v = -*v);
    hmc::leapfrog(target, &mut x, &mut p, &mut g, step, n, &inv_mass);
    let err = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    let ex = x.iter().zip(x0).map(|(&a, &b)| err(a, b)).fold(0.0, f64::max);
    let ep = p.iter().zip(p0).map(|(&a, &b)| err(-a, b)).fold(0.0, f64::max);
    ex.max(ep)
}

pub fn leapfrog_reversibility(seed: u64) -> Check {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for i in 0..5 {
        let inst = random_instance(&mut r, 20, 3, i % 2 == 0);
        let model = inst.model();
        let z = random_state(&mut r, &inst);
        let p: Vec<f64> = z.iter().map(|_| normal(&mut r)).collect();
        worst = worst.max(leapfrog_round_trip(&model, &z, &p, 0.01, 25));
    }
    Check::new(worst <= 1e-8, format!("max round-trip rel err {worst:.2e} (tol 1e-8)"))
}

/// Field posterior against explicit inverses.
pub fn naive_predict(inst: &Instance, z: &[f64], query: &[SpaceTimePoint]) -> (DVector<f64>, DMatrix<f64>) {
    let w = DVector::from_vec(naive_weights(inst, z));
    let n = w.len();
    let pts = inst.data.points();
    let k = eq_gram(&pts, &inst.theta_y).unwrap();
    let ks = eq_kernel(&pts, query, &inst.theta_y).unwrap();
    let kss = eq_gram(query, &inst.theta_y).unwrap();
    let wm = DMatrix::from_diagonal(&w);
    let sigma = &wm * &k * &wm + DMatrix::identity(n, n) * inst.noise;
    let inv = sigma.try_inverse().unwrap();
    let y = DVector::from_vec(inst.data.values());
    let r = y - &w * inst.field_mean;
    let cross = &wm * ks;
    let mean = cross.transpose() * &inv * r;
    let mean = mean.add_scalar(inst.field_mean);
    let cov = kss - cross.transpose() * &inv * &cross;
    (mean, cov)
}

// ---------------------------------------------------------------------------
// Coregionalized fit

/// 25 co-located time points from one seeded field draw; sensor 1 reads
/// `factor` times the truth, both with noise of 2% of the field's RMS.
pub fn colocated_pair(seed: u64, factor: f64) -> Dataset {
    let times: Vec<f64> = (0..25).map(|k| 0.5 * k as f64).collect();
    let pts: Vec<SpaceTimePoint> = times.iter().map(|&t| SpaceTimePoint::new(0.0, 0.0, t)).collect();
    let field = FieldSpec::Gp {
        params: KernelParams::space_time(1.0, 1.0, 2.0).unwrap(),
        mean: 0.0,
    };
    let f = sample_true_field(&field, &pts, seed).unwrap();
    let rms = (f.iter().map(|v| v * v).sum::<f64>() / f.len() as f64).sqrt();
    let mut r = rng(seed ^ 0xabc);
    let mut obs = Vec::new();
    for (i, &at) in pts.iter().enumerate() {
        for (sensor, w) in [(0usize, 1.0), (1, factor)] {
            obs.push(Observation {
                sensor,
                at,
                value: w * f[i] + 0.02 * rms * normal(&mut r),
            });
        }
    }
    Dataset::new(obs, 2, BTreeSet::from([0])).unwrap()
}

pub fn coreg_recovery(seed: u64) -> Check {
    let data = colocated_pair(seed, 3.0);
    let init = CoregParams {
        kernel: KernelParams::new(1.0, vec![1.0, 1.0, 1.0]).unwrap(),
        weights: CoregWeights::ones(2, BTreeSet::from([0])).unwrap(),
        noise: NoiseModel::new(0.01).unwrap(),
    };
    // Every point shares one location, so spatial lengthscales are moot.
    let frozen = BTreeSet::from([CoregParam::Lengthscale(0), CoregParam::Lengthscale(1)]);
    let fit = gp::ml_fit_coreg(&data, &init, &frozen, &FitOptions::default()).unwrap();
    let a = fit.params.weights.values();
    Check::new(
        a[0] == 1.0 && (2.7..=3.3).contains(&a[1]),
        format!("{} observations: a1 = {}, a2 = {:.4} (want a1 = 1, a2 in [2.7, 3.3])", data.len(), a[0], a[1]),
    )
}

// ---------------------------------------------------------------------------
// Sampler statistics

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

pub fn standard_normal_5d(seed: u64) -> Check {
    let target = FnTarget::new(
        5,
        |x: &[f64]| -0.5 * x.iter().map(|v| v * v).sum::<f64>(),
        |x: &[f64], g: &mut [f64]| {
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi = -xi;
            }
        },
    );
    let mut r = rng(seed);
    let inits: Vec<Vec<f64>> = (0..4).map(|_| (0..5).map(|_| 2.0 * normal(&mut r)).collect()).collect();
    let config = HmcConfig {
        step_size: 0.25,
        n_leapfrog: 8,
        n_samples: 2000,
        n_burnin: 500,
        seed,
        ..HmcConfig::default()
    };
    let chains = hmc::sample_chains(&target, &inits, &config).unwrap();
    let mut worst_mean = 0.0f64;
    let mut var_range = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ok = true;
    for chain in &chains {
        for d in 0..5 {
            let (m, v) = mean_var(&chain.coordinate(d));
            worst_mean = worst_mean.max(m.abs());
            var_range = (var_range.0.min(v), var_range.1.max(v));
            ok &= (-0.1..=0.1).contains(&m) && (0.8..=1.2).contains(&v);
        }
    }
    Check::new(
        ok,
        format!(
            "4 chains x 2000: max |mean| {worst_mean:.3}, variances in [{:.3}, {:.3}]",
            var_range.0, var_range.1
        ),
    )
}

/// Unnormalized double-well log density with modes at ±1.
pub fn double_well_log_density(x: f64) -> f64 {
    -2.0 * (x * x - 1.0).powi(2)
}

/// Histogram TV distance against Simpson-integrated bin masses.
pub fn double_well_tv(seed: u64, n_samples: usize) -> Check {
    let target = FnTarget::new(
        1,
        |x: &[f64]| double_well_log_density(x[0]),
        |x: &[f64], g: &mut [f64]| g[0] = -8.0 * x[0] * (x[0] * x[0] - 1.0),
    );
    let config = HmcConfig {
        step_size: 0.2,
        n_leapfrog: 12,
        n_samples,
        n_burnin: 1000,
        seed,
        ..HmcConfig::default()
    };
    let chain = hmc::sample(&target, &[0.5], &config).unwrap();

    let (lo, hi, bins) = (-2.4, 2.4, 24);
    let width = (hi - lo) / bins as f64;
    let simpson = |a: f64, b: f64| {
        let k = 200;
        let h = (b - a) / k as f64;
        let f = |x: f64| double_well_log_density(x).exp();
        let mut s = f(a) + f(b);
        for i in 1..k {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let z = simpson(-6.0, 6.0);
    let mut expected: Vec<f64> = (0..bins)
        .map(|b| simpson(lo + b as f64 * width, lo + (b + 1) as f64 * width) / z)
        .collect();
    expected.push(1.0 - expected.iter().sum::<f64>());

    let mut counts = vec![0usize; bins + 1];
    for s in &chain.samples {
        let x = s[0];
        let b = if (lo..hi).contains(&x) {
            ((x - lo) / width) as usize
        } else {
            bins
        };
        counts[b.min(bins)] += 1;
    }
    let n = chain.len() as f64;
    let tv = 0.5
        * counts
            .iter()
            .zip(&expected)
            .map(|(&c, &p)| (c as f64 / n - p).abs())
            .sum::<f64>();
    Check::new(
        tv < 0.05,
        format!("{} samples: TV distance {tv:.4} (tol 0.05), accept rate {:.2}", chain.len(), chain.accept_rate),
    )
}
