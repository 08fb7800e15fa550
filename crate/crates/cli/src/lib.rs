//! Command-line pipeline for the netcal calibration engine.
//!
//! Three commands share one TOML [`config::RunConfig`]:
//! `simulate` writes a synthetic dataset, `calibrate` samples sensor weights
//! with HMC and `predict` turns the weight samples into field predictions.

pub mod commands;
pub mod config;
pub mod io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("no reference sensor in the data")]
    NoReference,

    #[error("sampler initialization failed: {0}")]
    SamplerInit(String),

    #[error("artifact mismatch: {0}")]
    Mismatch(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error(transparent)]
    Model(netcal::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::NoReference => 3,
            Self::SamplerInit(_) => 4,
            Self::Mismatch(_) => 5,
            Self::Io { .. } | Self::Model(_) => 1,
        }
    }

    pub(crate) fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        Self::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}

impl From<netcal::Error> for CliError {
    fn from(e: netcal::Error) -> Self {
        match e {
            netcal::Error::SamplerInit(msg) => Self::SamplerInit(msg),
            netcal::Error::Parameter(msg) => Self::Config(msg),
            other => Self::Model(other),
        }
    }
}
