use crate::kernels::SpaceTimePoint;
use crate::{Error, Result};

/// Piecewise-linear path through space-time waypoints. Before the first and
/// after the last waypoint the sensor stays put.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    waypoints: Vec<SpaceTimePoint>,
}

impl Trajectory {
    pub fn new(waypoints: Vec<SpaceTimePoint>) -> Result<Self> {
        if waypoints.is_empty() {
            return Err(Error::Parameter("trajectory needs a waypoint".into()));
        }
        if waypoints.iter().any(|w| !w.is_finite()) {
            return Err(Error::Parameter("non-finite waypoint".into()));
        }
        if waypoints.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(Error::Parameter(
                "waypoint times must be strictly increasing".into(),
            ));
        }
        Ok(Self { waypoints })
    }

    /// A sensor that never moves.
    pub fn stationary(x: f64, y: f64) -> Self {
        Self {
            waypoints: vec![SpaceTimePoint::new(x, y, 0.0)],
        }
    }

    pub fn waypoints(&self) -> &[SpaceTimePoint] {
        &self.waypoints
    }

    pub fn position(&self, t: f64) -> SpaceTimePoint {
        let w = &self.waypoints;
        let first = w[0];
        let last = w[w.len() - 1];
        if t <= first.t {
            return SpaceTimePoint::new(first.x, first.y, t);
        }
        if t >= last.t {
            return SpaceTimePoint::new(last.x, last.y, t);
        }
        let k = w.partition_point(|p| p.t <= t);
        let (a, b) = (w[k - 1], w[k]);
        let s = (t - a.t) / (b.t - a.t);
        SpaceTimePoint::new(a.x + s * (b.x - a.x), a.y + s * (b.y - a.y), t)
    }

    /// Largest speed over any segment.
    pub fn max_speed(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| w[0].spatial_distance(&w[1]) / (w[1].t - w[0].t))
            .fold(0.0, f64::max)
    }

    /// Total time in `[t0, t1]` spent within `tol` km of `(x, y)`, measured
    /// on a grid of step `dt`.
    pub fn dwell_time(&self, x: f64, y: f64, tol: f64, (t0, t1): (f64, f64), dt: f64) -> f64 {
        let site = SpaceTimePoint::new(x, y, 0.0);
        let n = ((t1 - t0) / dt).round() as usize;
        (0..n)
            .filter(|&k| {
                let t = t0 + (k as f64 + 0.5) * dt;
                self.position(t).spatial_distance(&site) <= tol
            })
            .count() as f64
            * dt
    }
}
