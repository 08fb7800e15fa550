use crate::data::Dataset;
use crate::{Error, Result};

/// Rescaling of measured values by the root-mean-square of the reference
/// readings.
///
/// Only a scale is removed. Subtracting an offset would break the
/// multiplicative measurement model, so the field keeps a non-zero prior
/// mean instead (see [`Standardization::reference_mean`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardization {
    pub scale: f64,
}

impl Standardization {
    pub fn from_reference(data: &Dataset) -> Result<Self> {
        let refs: Vec<f64> = data
            .observations
            .iter()
            .filter(|o| data.is_reference(o.sensor))
            .map(|o| o.value)
            .collect();
        if refs.is_empty() {
            return Err(Error::Parameter("no reference observations".into()));
        }
        let rms = (refs.iter().map(|v| v * v).sum::<f64>() / refs.len() as f64).sqrt();
        if !(rms > 0.0 && rms.is_finite()) {
            return Err(Error::Parameter(format!("reference readings have scale {rms}")));
        }
        Ok(Self { scale: rms })
    }

    pub fn apply(&self, data: &Dataset) -> Dataset {
        data.scaled(1.0 / self.scale)
    }

    /// Mean reference reading in standardized units.
    pub fn reference_mean(&self, data: &Dataset) -> f64 {
        let (sum, n) = data
            .observations
            .iter()
            .filter(|o| data.is_reference(o.sensor))
            .fold((0.0, 0usize), |(s, n), o| (s + o.value, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64 / self.scale
        }
    }
}
