//! Simulated sensor networks with known ground truth.
//!
//! Three scenarios:
//! - `two_sensor`: a reference and a 3x-biased low-cost unit, co-located for
//!   `t <= 0`, after which the low-cost unit drives away.
//! - `network`: a static reference (sensor 0), two mobile low-cost units
//!   (1, 2) and four static low-cost units (3-6). Mobile 2 spends longer at
//!   the reference than mobile 1 and visits 3 and 4; mobile 1 visits 5 and 6.
//! - `clogging`: a low-cost unit next to the reference whose weight decays
//!   until a maintenance visit restores it.
//!
//! Readings are `true_weight(t) * true_field(x, t) + noise`.

mod field;
mod trajectory;

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, Observation};
use crate::gp::NoiseModel;
use crate::kernels::SpaceTimePoint;
use crate::{Error, Result};

pub use field::{sample_true_field, FieldSpec};
pub use trajectory::Trajectory;

/// Seed offset separating the field draw from the noise stream.
const FIELD_STREAM: u64 = 0x5eed_f1e1d;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensorRole {
    Reference,
    Static,
    Mobile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoSensorLayout {
    /// True weight of the low-cost unit.
    pub bias: f64,
    /// Speed (km per time unit) at which it leaves after `t = 0`.
    pub speed: f64,
}

impl Default for TwoSensorLayout {
    fn default() -> Self {
        Self {
            bias: 3.0,
            speed: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkLayout {
    /// `(x, y)` of the reference instrument.
    pub reference_site: (f64, f64),
    /// `(x, y)` of static low-cost sensors 3, 4, 5, 6.
    pub static_sites: Vec<(f64, f64)>,
    /// Routes of mobile sensors 1 and 2.
    pub routes: Vec<Trajectory>,
    /// True weights of sensors 1..=6.
    pub weights: Vec<f64>,
    /// Fastest allowed mobile speed (km per time unit).
    pub max_speed: f64,
    /// Distance (km) within which two sensors count as co-located.
    pub colocation_tolerance: f64,
}

impl Default for NetworkLayout {
    fn default() -> Self {
        let p = SpaceTimePoint::new;
        let reference = (2.0, 2.0);
        let sites = vec![(8.0, 2.0), (8.0, 8.0), (2.0, 8.0), (5.0, 9.0)];
        // Mobile 1: short stop at the reference, then sensors 5 and 6.
        let mobile1 = Trajectory::new(vec![
            p(2.0, 2.0, 0.0),
            p(2.0, 2.0, 2.0),
            p(2.0, 8.0, 4.0),
            p(2.0, 8.0, 8.0),
            p(5.0, 9.0, 10.0),
            p(5.0, 9.0, 20.0),
        ])
        .expect("static route");
        // Mobile 2: long stop at the reference, then sensors 3 and 4, and back.
        let mobile2 = Trajectory::new(vec![
            p(2.0, 2.0, 0.0),
            p(2.0, 2.0, 6.0),
            p(8.0, 2.0, 8.0),
            p(8.0, 2.0, 11.0),
            p(8.0, 8.0, 13.0),
            p(8.0, 8.0, 16.0),
            p(2.0, 2.0, 18.0),
            p(2.0, 2.0, 20.0),
        ])
        .expect("static route");
        Self {
            reference_site: reference,
            static_sites: sites,
            routes: vec![mobile1, mobile2],
            weights: vec![1.4, 0.7, 2.0, 1.3, 0.6, 2.5],
            max_speed: 5.0,
            colocation_tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CloggingLayout {
    pub initial_weight: f64,
    /// Weight reached just before maintenance.
    pub clogged_weight: f64,
    pub maintenance_time: f64,
    /// Distance (km) between the reference and the degrading unit.
    pub offset_km: f64,
}

impl Default for CloggingLayout {
    fn default() -> Self {
        Self {
            initial_weight: 1.0,
            clogged_weight: 0.4,
            maintenance_time: 40.0,
            offset_km: 0.2,
        }
    }
}

impl CloggingLayout {
    /// Linear decay from the start of the span, reset to the initial weight
    /// at maintenance, then decaying again at the same rate.
    pub fn weight(&self, t: f64, start: f64) -> f64 {
        let rate = (self.initial_weight - self.clogged_weight) / (self.maintenance_time - start);
        let since = if t < self.maintenance_time {
            t - start
        } else {
            t - self.maintenance_time
        };
        self.initial_weight - rate * since.max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layout {
    TwoSensor(TwoSensorLayout),
    Network(NetworkLayout),
    Clogging(CloggingLayout),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub field: FieldSpec,
    pub noise: NoiseModel,
    /// Observations per time unit, per sensor.
    pub cadence: f64,
    pub span: (f64, f64),
    pub layout: Layout,
}

impl ScenarioConfig {
    pub fn two_sensor() -> Self {
        Self {
            seed: 1,
            field: FieldSpec::Smooth {
                mean: 25.0,
                amplitude: 10.0,
                period: 6.0,
                wavelength: None,
            },
            noise: NoiseModel { variance: 0.25 },
            cadence: 4.0,
            span: (-1.0, 10.0),
            layout: Layout::TwoSensor(TwoSensorLayout::default()),
        }
    }

    pub fn network() -> Self {
        Self {
            seed: 1,
            field: FieldSpec::Smooth {
                mean: 25.0,
                amplitude: 10.0,
                period: 12.0,
                wavelength: Some(4.0),
            },
            noise: NoiseModel { variance: 0.25 },
            cadence: 1.0,
            span: (0.0, 20.0),
            layout: Layout::Network(NetworkLayout::default()),
        }
    }

    pub fn clogging() -> Self {
        Self {
            seed: 1,
            field: FieldSpec::Smooth {
                mean: 25.0,
                amplitude: 12.0,
                period: 9.0,
                wavelength: Some(5.0),
            },
            noise: NoiseModel { variance: 0.25 },
            cadence: 1.0,
            span: (0.0, 60.0),
            layout: Layout::Clogging(CloggingLayout::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (t0, t1) = self.span;
        if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
            return Err(Error::Parameter(format!("time span [{t0}, {t1}]")));
        }
        if !(self.cadence > 0.0 && self.cadence.is_finite()) {
            return Err(Error::Parameter(format!("cadence {}", self.cadence)));
        }
        match &self.layout {
            Layout::TwoSensor(l) => {
                if !(t0 < 0.0 && t1 > 0.0) {
                    return Err(Error::Parameter(
                        "two-sensor span must straddle t = 0".into(),
                    ));
                }
                if l.speed.is_nan() || l.speed <= 0.0 {
                    return Err(Error::Parameter("OPC speed must be positive".into()));
                }
            }
            Layout::Network(l) => {
                if l.static_sites.len() != 4 || l.routes.len() != 2 || l.weights.len() != 6 {
                    return Err(Error::Parameter(
                        "network needs 4 static sites, 2 routes and 6 weights".into(),
                    ));
                }
                for (k, r) in l.routes.iter().enumerate() {
                    if r.max_speed() > l.max_speed {
                        return Err(Error::Parameter(format!(
                            "route {} moves at {:.3} km/unit, above max speed {}",
                            k + 1,
                            r.max_speed(),
                            l.max_speed
                        )));
                    }
                }
            }
            Layout::Clogging(l) => {
                if !(l.maintenance_time > t0 && l.maintenance_time < t1) {
                    return Err(Error::Parameter(
                        "maintenance must happen inside the span".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Observation times `t0, t0 + 1/cadence, ...` up to `t1`.
    pub fn times(&self) -> Vec<f64> {
        let (t0, t1) = self.span;
        let n = ((t1 - t0) * self.cadence + 1e-9).floor() as usize;
        (0..=n).map(|k| t0 + k as f64 / self.cadence).collect()
    }

    pub fn n_sensors(&self) -> usize {
        match self.layout {
            Layout::TwoSensor(_) | Layout::Clogging(_) => 2,
            Layout::Network(_) => 7,
        }
    }

    /// Path of each sensor.
    pub fn trajectories(&self) -> Vec<Trajectory> {
        match &self.layout {
            Layout::TwoSensor(l) => {
                let (_, t1) = self.span;
                let p = SpaceTimePoint::new;
                vec![
                    Trajectory::stationary(0.0, 0.0),
                    Trajectory::new(vec![p(0.0, 0.0, 0.0), p(l.speed * t1, 0.0, t1)])
                        .expect("increasing times"),
                ]
            }
            Layout::Network(l) => {
                let mut out = vec![Trajectory::stationary(l.reference_site.0, l.reference_site.1)];
                out.extend(l.routes.iter().cloned());
                out.extend(l.static_sites.iter().map(|&(x, y)| Trajectory::stationary(x, y)));
                out
            }
            Layout::Clogging(l) => vec![
                Trajectory::stationary(0.0, 0.0),
                Trajectory::stationary(l.offset_km, 0.0),
            ],
        }
    }

    pub fn roles(&self) -> Vec<SensorRole> {
        match self.layout {
            Layout::TwoSensor(_) => vec![SensorRole::Reference, SensorRole::Mobile],
            Layout::Clogging(_) => vec![SensorRole::Reference, SensorRole::Static],
            Layout::Network(_) => {
                let mut r = vec![SensorRole::Reference, SensorRole::Mobile, SensorRole::Mobile];
                r.extend([SensorRole::Static; 4]);
                r
            }
        }
    }

    /// True weight of `sensor` at time `t`.
    pub fn true_weight(&self, sensor: usize, t: f64) -> f64 {
        if sensor == 0 {
            return 1.0;
        }
        match &self.layout {
            Layout::TwoSensor(l) => l.bias,
            Layout::Network(l) => l.weights[sensor - 1],
            Layout::Clogging(l) => l.weight(t, self.span.0),
        }
    }
}

/// Ground truth for each observation, in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub field: Vec<f64>,
    pub weight: Vec<f64>,
    pub noise: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub dataset: Dataset,
    pub truth: Truth,
    pub roles: Vec<SensorRole>,
}

/// Generates any scenario. Observations are ordered by time, then sensor.
pub fn simulate(config: &ScenarioConfig) -> Result<Simulation> {
    config.validate()?;
    let trajectories = config.trajectories();
    let m = trajectories.len();

    let mut sensors = Vec::new();
    let mut points = Vec::new();
    for t in config.times() {
        for (s, tr) in trajectories.iter().enumerate() {
            sensors.push(s);
            points.push(tr.position(t));
        }
    }
    let field = sample_true_field(
        &config.field,
        &points,
        config.seed.wrapping_add(FIELD_STREAM),
    )?;

    let sd = config.noise.variance.sqrt();
    let normal = Normal::new(0.0, sd).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let n = points.len();
    let mut observations = Vec::with_capacity(n);
    let mut truth = Truth {
        field: Vec::with_capacity(n),
        weight: Vec::with_capacity(n),
        noise: Vec::with_capacity(n),
    };
    for i in 0..n {
        let w = config.true_weight(sensors[i], points[i].t);
        let e = normal.sample(&mut rng);
        observations.push(Observation {
            sensor: sensors[i],
            at: points[i],
            value: w * field[i] + e,
        });
        truth.field.push(field[i]);
        truth.weight.push(w);
        truth.noise.push(e);
    }

    let dataset = Dataset::new(observations, m, BTreeSet::from([0]))?;
    Ok(Simulation {
        dataset,
        truth,
        roles: config.roles(),
    })
}

pub fn gen_two_sensor(config: &ScenarioConfig) -> Result<Simulation> {
    expect_layout(matches!(config.layout, Layout::TwoSensor(_)), "two_sensor")?;
    simulate(config)
}

pub fn gen_network(config: &ScenarioConfig) -> Result<Simulation> {
    expect_layout(matches!(config.layout, Layout::Network(_)), "network")?;
    simulate(config)
}

pub fn gen_clogging(config: &ScenarioConfig) -> Result<Simulation> {
    expect_layout(matches!(config.layout, Layout::Clogging(_)), "clogging")?;
    simulate(config)
}

fn expect_layout(ok: bool, kind: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Parameter(format!("scenario is not {kind}")))
    }
}
