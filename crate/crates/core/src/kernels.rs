//! Exponentiated-quadratic kernels and rank-1 coregionalization.
//!
//! The EQ convention used throughout is
//! `k(p, q) = variance * exp(-0.5 * sum_d ((p_d - q_d) / l_d)^2)`
//! with one lengthscale per input dimension.

use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Relative diagonal stabilizer for square Gram matrices.
pub const RELATIVE_JITTER: f64 = 1e-8;

/// A location in space (km) and time.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpaceTimePoint {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

impl SpaceTimePoint {
    pub const fn new(x: f64, y: f64, t: f64) -> Self {
        Self { x, y, t }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.t.is_finite()
    }

    pub fn spatial_distance(&self, other: &Self) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Something an EQ kernel can be evaluated on.
pub trait KernelInput {
    const DIM: usize;
    fn coord(&self, d: usize) -> f64;
}

impl KernelInput for SpaceTimePoint {
    const DIM: usize = 3;

    fn coord(&self, d: usize) -> f64 {
        match d {
            0 => self.x,
            1 => self.y,
            _ => self.t,
        }
    }
}

/// Bare times, used by the weight GP.
impl KernelInput for f64 {
    const DIM: usize = 1;

    fn coord(&self, _d: usize) -> f64 {
        *self
    }
}

/// Signal variance and per-dimension lengthscales of an EQ kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    variance: f64,
    lengthscales: Vec<f64>,
}

impl KernelParams {
    pub fn new(variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::Parameter(format!(
                "kernel variance must be positive, got {variance}"
            )));
        }
        if lengthscales.is_empty() {
            return Err(Error::Parameter("no lengthscales given".into()));
        }
        if let Some(l) = lengthscales.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::Parameter(format!(
                "lengthscales must be positive, got {l}"
            )));
        }
        Ok(Self {
            variance,
            lengthscales,
        })
    }

    /// Space-time kernel with one spatial scale shared by x and y.
    pub fn space_time(variance: f64, space: f64, time: f64) -> Result<Self> {
        Self::new(variance, vec![space, space, time])
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn jitter(&self) -> f64 {
        RELATIVE_JITTER * self.variance
    }

    fn check_dim<P: KernelInput>(&self) -> Result<()> {
        if self.lengthscales.len() != P::DIM {
            return Err(Error::Shape(format!(
                "{} lengthscales for {}-dimensional inputs",
                self.lengthscales.len(),
                P::DIM
            )));
        }
        Ok(())
    }

    #[inline]
    fn eval<P: KernelInput>(&self, p: &P, q: &P) -> f64 {
        let r2: f64 = self
            .lengthscales
            .iter()
            .enumerate()
            .map(|(d, l)| {
                let u = (p.coord(d) - q.coord(d)) / l;
                u * u
            })
            .sum();
        self.variance * (-0.5 * r2).exp()
    }
}

/// Cross-covariance `K[i, j] = k(p_i, q_j)`.
pub fn eq_kernel<P: KernelInput>(p: &[P], q: &[P], params: &KernelParams) -> Result<DMatrix<f64>> {
    params.check_dim::<P>()?;
    Ok(DMatrix::from_fn(p.len(), q.len(), |i, j| {
        params.eval(&p[i], &q[j])
    }))
}

/// Gram matrix `k(p_i, p_j)`, exactly symmetric. No jitter is added.
pub fn eq_gram<P: KernelInput>(p: &[P], params: &KernelParams) -> Result<DMatrix<f64>> {
    params.check_dim::<P>()?;
    let n = p.len();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        k[(j, j)] = params.variance;
        for i in (j + 1)..n {
            let v = params.eval(&p[i], &p[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Per-sensor scalars `a` of the rank-1 coregionalization `a a^T`.
///
/// Reference sensors carry `a = 1` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct CoregWeights {
    values: Vec<f64>,
    references: BTreeSet<usize>,
}

impl CoregWeights {
    pub fn new(values: Vec<f64>, references: BTreeSet<usize>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("non-finite coregional weight {v}")));
        }
        for &r in &references {
            match values.get(r) {
                None => {
                    return Err(Error::Index {
                        index: r,
                        n_sensors: values.len(),
                    })
                }
                Some(&v) if v != 1.0 => {
                    return Err(Error::Parameter(format!(
                        "reference sensor {r} must have weight 1, got {v}"
                    )))
                }
                _ => {}
            }
        }
        Ok(Self { values, references })
    }

    /// All-ones weights for `n` sensors.
    pub fn ones(n: usize, references: BTreeSet<usize>) -> Result<Self> {
        Self::new(vec![1.0; n], references)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn references(&self) -> &BTreeSet<usize> {
        &self.references
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_reference(&self, sensor: usize) -> bool {
        self.references.contains(&sensor)
    }
}

/// `B = a a^T`.
pub fn coreg_matrix(a: &CoregWeights) -> DMatrix<f64> {
    let v = &a.values;
    DMatrix::from_fn(v.len(), v.len(), |i, j| v[i] * v[j])
}

fn check_sensors(sensor_of: &[usize], n_sensors: usize) -> Result<()> {
    match sensor_of.iter().find(|&&s| s >= n_sensors) {
        Some(&index) => Err(Error::Index { index, n_sensors }),
        None => Ok(()),
    }
}

/// `B[sensor_of[i], sensor_of[j]]` expanded to observation level.
pub fn expanded_coreg(sensor_of: &[usize], a: &CoregWeights) -> Result<DMatrix<f64>> {
    check_sensors(sensor_of, a.len())?;
    let v = &a.values;
    let n = sensor_of.len();
    Ok(DMatrix::from_fn(n, n, |i, j| v[sensor_of[i]] * v[sensor_of[j]]))
}

/// EQ Gram matrix of `points` multiplied element-wise by the coregionalization
/// matrix indexed through `sensor_of`.
pub fn combined_covariance(
    points: &[SpaceTimePoint],
    sensor_of: &[usize],
    params: &KernelParams,
    a: &CoregWeights,
) -> Result<DMatrix<f64>> {
    if points.len() != sensor_of.len() {
        return Err(Error::Shape(format!(
            "{} points but {} sensor labels",
            points.len(),
            sensor_of.len()
        )));
    }
    let b = expanded_coreg(sensor_of, a)?;
    let k = eq_gram(points, params)?;
    Ok(k.component_mul(&b))
}
