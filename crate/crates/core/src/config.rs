//! Combined configuration file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::ControllerConfig;
use crate::dance::DanceParams;
use crate::maw::MawParams;
use crate::metrics::{Matching, DEFAULT_PHASE_SAMPLES, DEFAULT_PX_PER_MM};
use crate::mosaic::RegisterOptions;
use crate::scan::{CaptureTiming, GridSpec};
use crate::spectrum::DEFAULT_SNR_THRESHOLD;
use crate::stage::StageConfig;
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub px_per_mm: f64,
    pub phase_samples: usize,
    pub matching: Matching,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { px_per_mm: DEFAULT_PX_PER_MM, phase_samples: DEFAULT_PHASE_SAMPLES, matching: Matching::Phase }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrumConfig {
    pub fps: f64,
    pub snr_threshold: f64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig { fps: 120.0, snr_threshold: DEFAULT_SNR_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MosaicConfig {
    /// Tile image pixels per stage millimetre.
    pub px_per_mm: f64,
    pub search_radius: i64,
    pub min_confidence: f64,
}

impl Default for MosaicConfig {
    fn default() -> Self {
        let r = RegisterOptions::default();
        MosaicConfig { px_per_mm: 12.0, search_radius: r.search_radius, min_confidence: r.min_confidence }
    }
}

impl MosaicConfig {
    pub fn register_options(&self) -> RegisterOptions {
        RegisterOptions { search_radius: self.search_radius, min_confidence: self.min_confidence }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub stage: StageConfig,
    pub maw: MawParams,
    pub dance: DanceParams,
    pub scan: GridSpec,
    pub capture: CaptureTiming,
    pub flapper_hz: f64,
    pub flapper_during_waggle: bool,
    pub metrics: MetricsConfig,
    pub spectrum: SpectrumConfig,
    pub mosaic: MosaicConfig,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        let c = ControllerConfig::default();
        Config {
            stage: c.stage,
            maw: MawParams::default(),
            dance: c.dance,
            scan: c.scan,
            capture: c.capture,
            flapper_hz: c.flapper_hz,
            flapper_during_waggle: c.flapper_during_waggle,
            metrics: MetricsConfig::default(),
            spectrum: SpectrumConfig::default(),
            mosaic: MosaicConfig::default(),
            seed: 1,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn controller(&self) -> ControllerConfig {
        ControllerConfig {
            stage: self.stage,
            dance: self.dance,
            scan: self.scan,
            capture: self.capture,
            flapper_hz: self.flapper_hz,
            flapper_during_waggle: self.flapper_during_waggle,
        }
    }
}
