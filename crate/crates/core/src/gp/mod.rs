//! Dense Gaussian process primitives.

mod fit;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::kernels::RELATIVE_JITTER;
use crate::{Error, Result};

pub use fit::{coreg_objective, ml_fit_coreg, CoregFit, CoregParam, CoregParams, FitOptions};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Extra attempts after the first jittered factorization, each at 10x the
/// previous jitter.
const JITTER_RETRIES: usize = 3;

/// Observation noise `epsilon ~ N(0, variance)`, shared by all sensors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub variance: f64,
}

impl NoiseModel {
    pub fn new(variance: f64) -> Result<Self> {
        if !(variance >= 0.0 && variance.is_finite()) {
            return Err(Error::Parameter(format!(
                "noise variance must be non-negative, got {variance}"
            )));
        }
        Ok(Self { variance })
    }
}

/// Gaussian posterior over a set of test points.
#[derive(Debug, Clone, PartialEq)]
pub struct GPPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GPPosterior {
    pub fn variances(&self) -> DVector<f64> {
        self.cov.diagonal()
    }

    pub fn std_devs(&self) -> DVector<f64> {
        self.cov.diagonal().map(|v| v.max(0.0).sqrt())
    }
}

/// Cholesky factor of a symmetric matrix, plus whatever jitter it took to get it.
#[derive(Clone, Debug)]
pub struct Factor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl Factor {
    /// Factorizes `a`, adding diagonal jitter only when the plain factorization
    /// fails. Jitter starts at `1e-8 * mean(diag)` and grows 10x per retry.
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Shape(format!("cannot factorize {:?} matrix", a.shape())));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical { jitter: 0.0 });
        }
        if let Some(chol) = Cholesky::new(a.clone()) {
            return Ok(Self { chol, jitter: 0.0 });
        }
        let n = a.nrows().max(1);
        let scale = (a.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
        let mut jitter = RELATIVE_JITTER * scale;
        for attempt in 0..=JITTER_RETRIES {
            let mut b = a.clone();
            for i in 0..b.nrows() {
                b[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(b) {
                log::trace!("factorized with jitter {jitter:e} after {attempt} retries");
                return Ok(Self { chol, jitter });
            }
            if attempt < JITTER_RETRIES {
                jitter *= 10.0;
            }
        }
        Err(Error::Numerical { jitter })
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `L^{-1} b` for the lower factor `L`.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal")
    }

    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `log N(r; 0, A)` where `A` is the factorized matrix.
    pub fn log_normal_density(&self, r: &DVector<f64>) -> f64 {
        let alpha = self.solve(r);
        -0.5 * r.dot(&alpha) - 0.5 * self.log_det() - 0.5 * r.len() as f64 * LN_2PI
    }
}

fn with_noise(k: &DMatrix<f64>, noise: NoiseModel) -> DMatrix<f64> {
    let mut a = k.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += noise.variance;
    }
    a
}

fn check_square(k: &DMatrix<f64>, n: usize, what: &str) -> Result<()> {
    if k.shape() != (n, n) {
        return Err(Error::Shape(format!(
            "{what} is {:?}, expected ({n}, {n})",
            k.shape()
        )));
    }
    Ok(())
}

/// `log N(y; 0, K + noise I)`.
pub fn log_marginal_likelihood(k: &DMatrix<f64>, y: &DVector<f64>, noise: NoiseModel) -> Result<f64> {
    check_square(k, y.len(), "covariance")?;
    Ok(Factor::new(with_noise(k, noise))?.log_normal_density(y))
}

/// Conditions a zero-mean GP on `y` observed with noise.
///
/// `k_cross` is train x test.
pub fn posterior(
    k_train: &DMatrix<f64>,
    k_cross: &DMatrix<f64>,
    k_test: &DMatrix<f64>,
    y: &DVector<f64>,
    noise: NoiseModel,
) -> Result<GPPosterior> {
    let n = y.len();
    check_square(k_train, n, "training covariance")?;
    if k_cross.nrows() != n {
        return Err(Error::Shape(format!(
            "cross covariance has {} rows for {n} training points",
            k_cross.nrows()
        )));
    }
    check_square(k_test, k_cross.ncols(), "test covariance")?;

    let factor = Factor::new(with_noise(k_train, noise))?;
    Ok(condition(&factor, k_cross, k_test, y))
}

pub(crate) fn condition(
    factor: &Factor,
    k_cross: &DMatrix<f64>,
    k_test: &DMatrix<f64>,
    y: &DVector<f64>,
) -> GPPosterior {
    let alpha = factor.solve(y);
    let mean = k_cross.tr_mul(&alpha);
    let v = factor.solve_lower(k_cross);
    let mut cov = k_test - v.tr_mul(&v);
    symmetrize(&mut cov);
    GPPosterior { mean, cov }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}
