//! CSV and JSON artifacts.
//!
//! Floats are written with 17 significant digits so every value reads back
//! to the identical `f64`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use netcal::calib::LatentLayout;
use netcal::data::{Dataset, Observation};
use netcal::hmc::Chain;
use netcal::kernels::SpaceTimePoint;
use netcal::sim::Simulation;
use serde::Serialize;

use crate::CliError;

pub const OBSERVATIONS_HEADER: [&str; 6] = ["sensor_id", "x_km", "y_km", "t", "value", "is_reference"];
pub const TRUTH_HEADER: [&str; 4] = ["sensor_id", "t", "true_field", "true_weight"];
pub const CHAINS_HEADER: [&str; 5] = ["chain_id", "sample_idx", "sensor_id", "ts_idx", "z_value"];

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))
}

fn check_header(path: &Path, rdr: &mut csv::Reader<std::fs::File>, want: &[&str]) -> Result<(), CliError> {
    let got = rdr.headers().map_err(|e| CliError::io(path, e))?;
    if got.iter().ne(want.iter().copied()) {
        return Err(CliError::io(
            path,
            format!("expected header {}, found {}", want.join(","), got.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    let line = rec.position().map_or(0, |p| p.line());
    let raw = rec.get(i).ok_or_else(|| CliError::io(path, format!("line {line}: missing {name}")))?;
    raw.trim()
        .parse()
        .map_err(|e| CliError::io(path, format!("line {line}: bad {name} {raw:?}: {e}")))
}

/// Generic table writer: a header plus pre-formatted rows.
pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| CliError::io(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_observations(path: &Path, data: &Dataset) -> Result<(), CliError> {
    let rows = data.observations.iter().map(|o| {
        vec![
            o.sensor.to_string(),
            fmt_f64(o.at.x),
            fmt_f64(o.at.y),
            fmt_f64(o.at.t),
            fmt_f64(o.value),
            u8::from(data.is_reference(o.sensor)).to_string(),
        ]
    });
    write_table(path, &OBSERVATIONS_HEADER, rows)
}

/// Reads a dataset. Sensors are numbered `0..=max id`; a sensor is a
/// reference if its rows say so, and all its rows must agree.
pub fn read_observations(path: &Path) -> Result<Dataset, CliError> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &OBSERVATIONS_HEADER)?;
    let mut observations = Vec::new();
    let mut flags: BTreeMap<usize, bool> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        let sensor: usize = field(path, &rec, 0, "sensor_id")?;
        let at = SpaceTimePoint::new(
            field(path, &rec, 1, "x_km")?,
            field(path, &rec, 2, "y_km")?,
            field(path, &rec, 3, "t")?,
        );
        let value = field(path, &rec, 4, "value")?;
        let is_ref = match field::<u8>(path, &rec, 5, "is_reference")? {
            0 => false,
            1 => true,
            v => return Err(CliError::io(path, format!("is_reference must be 0 or 1, got {v}"))),
        };
        if *flags.entry(sensor).or_insert(is_ref) != is_ref {
            return Err(CliError::io(path, format!("sensor {sensor} has inconsistent is_reference flags")));
        }
        observations.push(Observation { sensor, at, value });
    }
    let n_sensors = flags.keys().next_back().map_or(0, |&m| m + 1);
    let references: BTreeSet<usize> = flags.iter().filter(|(_, &r)| r).map(|(&s, _)| s).collect();
    Dataset::new(observations, n_sensors, references).map_err(|e| CliError::io(path, e))
}

pub fn write_truth(path: &Path, sim: &Simulation) -> Result<(), CliError> {
    let rows = sim.dataset.observations.iter().enumerate().map(|(i, o)| {
        vec![
            o.sensor.to_string(),
            fmt_f64(o.at.t),
            fmt_f64(sim.truth.field[i]),
            fmt_f64(sim.truth.weight[i]),
        ]
    });
    write_table(path, &TRUTH_HEADER, rows)
}

/// `(sensor, index within the sensor's block)` for each latent coordinate.
fn coordinate_labels(layout: &LatentLayout) -> Vec<(usize, usize)> {
    let mut labels = vec![(0, 0); layout.dim()];
    for s in layout.latent_sensors() {
        let block = layout.block(s).expect("latent sensor has a block");
        for (k, i) in block.enumerate() {
            labels[i] = (s, k);
        }
    }
    labels
}

/// Long-format samples, keeping every `thin`-th draw.
pub fn write_chains(path: &Path, chains: &[Chain], layout: &LatentLayout, thin: usize) -> Result<(), CliError> {
    let labels = coordinate_labels(layout);
    let rows = chains.iter().enumerate().flat_map(|(c, chain)| {
        let labels = &labels;
        chain
            .samples
            .iter()
            .enumerate()
            .step_by(thin.max(1))
            .flat_map(move |(i, z)| {
                labels.iter().zip(z).map(move |(&(s, k), v)| {
                    vec![c.to_string(), i.to_string(), s.to_string(), k.to_string(), fmt_f64(*v)]
                })
            })
    });
    write_table(path, &CHAINS_HEADER, rows)
}

/// Reads samples written by [`write_chains`], checking that each draw covers
/// exactly the latent coordinates of `layout`.
pub fn read_chains(path: &Path, layout: &LatentLayout) -> Result<Vec<Chain>, CliError> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &CHAINS_HEADER)?;
    let index: BTreeMap<(usize, usize), usize> = coordinate_labels(layout)
        .into_iter()
        .enumerate()
        .map(|(i, label)| (label, i))
        .collect();
    let mut draws: BTreeMap<(usize, usize), Vec<Option<f64>>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        let chain: usize = field(path, &rec, 0, "chain_id")?;
        let sample: usize = field(path, &rec, 1, "sample_idx")?;
        let sensor: usize = field(path, &rec, 2, "sensor_id")?;
        let ts: usize = field(path, &rec, 3, "ts_idx")?;
        let value: f64 = field(path, &rec, 4, "z_value")?;
        let &i = index.get(&(sensor, ts)).ok_or_else(|| {
            CliError::Mismatch(format!(
                "chains have a latent value for sensor {sensor}, index {ts}, which the dataset does not define"
            ))
        })?;
        let slot = draws.entry((chain, sample)).or_insert_with(|| vec![None; layout.dim()]);
        if slot[i].replace(value).is_some() {
            return Err(CliError::Mismatch(format!(
                "duplicate value for chain {chain}, sample {sample}, sensor {sensor}, index {ts}"
            )));
        }
    }
    let mut chains: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for ((chain, sample), slot) in draws {
        let z: Option<Vec<f64>> = slot.into_iter().collect();
        let z = z.ok_or_else(|| {
            CliError::Mismatch(format!(
                "chain {chain}, sample {sample} lacks latent values the dataset requires"
            ))
        })?;
        chains.entry(chain).or_default().push(z);
    }
    if layout.dim() > 0 && chains.is_empty() {
        return Err(CliError::Mismatch("chains file holds no samples".into()));
    }
    Ok(chains
        .into_values()
        .map(|samples| Chain {
            log_densities: vec![f64::NAN; samples.len()],
            samples,
            accept_rate: f64::NAN,
            step_size: f64::NAN,
            inv_mass: vec![1.0; layout.dim()],
        })
        .collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
