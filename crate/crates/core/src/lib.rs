//! Simulation twin of an in-hive XY robot: stage, controller, routine
//! generators and the analysis toolkit.

// NaN-rejecting guards are written as `!(x > 0.0)` throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use thiserror::Error;

pub mod cli;
pub mod config;
pub mod controller;
pub mod dance;
pub mod maw;
pub mod metrics;
pub mod mosaic;
pub mod pipeline;
pub mod raster;
pub mod scan;
pub mod service;
pub mod spectrum;
pub mod stage;
pub mod synth;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Maw(#[from] maw::MawError),
    #[error(transparent)]
    Stage(#[from] stage::StageError),
    #[error(transparent)]
    Controller(#[from] controller::ControllerError),
    #[error(transparent)]
    Dance(#[from] dance::DanceError),
    #[error(transparent)]
    Scan(#[from] scan::ScanError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Spectrum(#[from] spectrum::SpectrumError),
    #[error(transparent)]
    Mosaic(#[from] mosaic::MosaicError),
    #[error(transparent)]
    Raster(#[from] raster::RasterError),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// Error name of the originating module.
    pub fn name(&self) -> &'static str {
        match self {
            Error::Maw(e) => e.name(),
            Error::Stage(e) => e.name(),
            Error::Controller(e) => e.name(),
            Error::Dance(e) => e.name(),
            Error::Scan(e) => e.name(),
            Error::Metrics(e) => e.name(),
            Error::Spectrum(e) => e.name(),
            Error::Mosaic(e) => e.name(),
            Error::Raster(e) => e.name(),
            Error::Config(_) => "ConfigError",
            Error::Io(_) => "IoError",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
