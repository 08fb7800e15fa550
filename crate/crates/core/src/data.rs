//! Observations and datasets.

use std::collections::BTreeSet;

use crate::kernels::SpaceTimePoint;
use crate::{Error, Result};

/// One reading from one sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub sensor: usize,
    pub at: SpaceTimePoint,
    /// Measured concentration (µg/m³ in the raw data).
    pub value: f64,
}

/// Readings from a network of `n_sensors` instruments.
///
/// Ground truth never lives here; simulations keep it in
/// [`crate::sim::Truth`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub observations: Vec<Observation>,
    pub n_sensors: usize,
    pub reference_sensors: BTreeSet<usize>,
}

impl Dataset {
    pub fn new(
        observations: Vec<Observation>,
        n_sensors: usize,
        reference_sensors: BTreeSet<usize>,
    ) -> Result<Self> {
        for o in &observations {
            if o.sensor >= n_sensors {
                return Err(Error::Index {
                    index: o.sensor,
                    n_sensors,
                });
            }
            if !o.value.is_finite() || !o.at.is_finite() {
                return Err(Error::Parameter(format!(
                    "non-finite observation for sensor {}",
                    o.sensor
                )));
            }
        }
        if let Some(&r) = reference_sensors.iter().find(|&&r| r >= n_sensors) {
            return Err(Error::Index {
                index: r,
                n_sensors,
            });
        }
        Ok(Self {
            observations,
            n_sensors,
            reference_sensors,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn is_reference(&self, sensor: usize) -> bool {
        self.reference_sensors.contains(&sensor)
    }

    pub fn points(&self) -> Vec<SpaceTimePoint> {
        self.observations.iter().map(|o| o.at).collect()
    }

    pub fn sensors(&self) -> Vec<usize> {
        self.observations.iter().map(|o| o.sensor).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.value).collect()
    }

    /// Sensors that actually appear in the observations.
    pub fn observed_sensors(&self) -> BTreeSet<usize> {
        self.observations.iter().map(|o| o.sensor).collect()
    }

    /// `(min, max)` observation time of one sensor, if it has any readings.
    pub fn time_span(&self, sensor: usize) -> Option<(f64, f64)> {
        self.observations
            .iter()
            .filter(|o| o.sensor == sensor)
            .map(|o| o.at.t)
            .fold(None, |acc, t| match acc {
                None => Some((t, t)),
                Some((lo, hi)) => Some((lo.min(t), hi.max(t))),
            })
    }

    /// Same dataset with every measured value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for o in &mut out.observations {
            o.value *= factor;
        }
        out
    }
}
