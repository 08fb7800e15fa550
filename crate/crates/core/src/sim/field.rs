use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::gp::Factor;
use crate::kernels::{eq_gram, KernelParams, SpaceTimePoint};
use crate::Result;

/// How the simulated pollution field is generated.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldSpec {
    /// One seeded draw from a GP with an EQ kernel around a constant mean.
    Gp { params: KernelParams, mean: f64 },
    /// A fixed sum of two travelling sinusoids, confined to
    /// `mean ± amplitude`. With `wavelength = None` the field is the same
    /// everywhere in space.
    Smooth {
        mean: f64,
        amplitude: f64,
        period: f64,
        wavelength: Option<f64>,
    },
}

impl FieldSpec {
    /// Smallest and largest value the field can take, if bounded.
    pub fn bounds(&self) -> Option<(f64, f64)> {
        match self {
            Self::Smooth {
                mean, amplitude, ..
            } => Some((mean - amplitude.abs(), mean + amplitude.abs())),
            Self::Gp { .. } => None,
        }
    }
}

fn smooth(mean: f64, amplitude: f64, period: f64, wavelength: Option<f64>, p: &SpaceTimePoint) -> f64 {
    use std::f64::consts::TAU;
    let (px, py) = match wavelength {
        Some(l) => (p.x / l, p.y / l),
        None => (0.0, 0.0),
    };
    let slow = (TAU * p.t / period + px).sin();
    let fast = (TAU * p.t / (0.43 * period) + 1.3 + py).sin();
    mean + amplitude * (0.6 * slow + 0.4 * fast)
}

/// True field values at `points`. GP draws are reproducible from `seed`.
pub fn sample_true_field(field: &FieldSpec, points: &[SpaceTimePoint], seed: u64) -> Result<Vec<f64>> {
    match field {
        FieldSpec::Smooth {
            mean,
            amplitude,
            period,
            wavelength,
        } => Ok(points
            .iter()
            .map(|p| smooth(*mean, *amplitude, *period, *wavelength, p))
            .collect()),
        FieldSpec::Gp { params, mean } => {
            let mut k = eq_gram(points, params)?;
            for i in 0..k.nrows() {
                k[(i, i)] += params.jitter();
            }
            let l = Factor::new(k)?.lower();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e = DVector::from_fn(points.len(), |_, _| StandardNormal.sample(&mut rng));
            Ok((l * e).iter().map(|v| v + mean).collect())
        }
    }
}
