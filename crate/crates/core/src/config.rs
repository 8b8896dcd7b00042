//! Analysis configuration and threshold files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DEFAULT_CAPACITY, DEFAULT_MU};
use crate::regression::AlphaPolicy;
use crate::style::{StyleThresholds, DEFAULT_EPSILON};

pub const DEFAULT_WINDOW_S: f64 = 5.0;

/// Thresholds produced by the bundled calibration set with default
/// analysis parameters (`stylepredict calibrate`).
pub const DEFAULT_THRESHOLDS: StyleThresholds = StyleThresholds {
    degree: 0.5608292547788343,
    closeness: 0.036311498508930465,
    weaving_sharpness: 0.0059871516037402145,
};

/// Parameters of the analysis pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Squared-distance edge threshold, m^2.
    pub mu: f64,
    /// Window length, s.
    pub window_s: f64,
    /// Window stride, s; half the window when absent.
    pub stride_s: Option<f64>,
    /// Sharpness ball radius, s.
    pub epsilon: f64,
    pub alpha: AlphaPolicy,
    pub thresholds: StyleThresholds,
    /// Cumulative adjacency capacity.
    pub capacity: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            mu: DEFAULT_MU,
            window_s: DEFAULT_WINDOW_S,
            stride_s: None,
            epsilon: DEFAULT_EPSILON,
            alpha: AlphaPolicy::default(),
            thresholds: DEFAULT_THRESHOLDS,
            capacity: DEFAULT_CAPACITY,
        }
    }
}

impl AnalysisConfig {
    pub fn stride(&self) -> f64 {
        self.stride_s.unwrap_or(self.window_s / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mu", self.mu), ("window", self.window_s), ("stride", self.stride()), ("epsilon", self.epsilon)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("`{name}` must be positive and finite, got {v}")));
            }
        }
        if self.capacity == 0 {
            return Err(Error::Validation("capacity must be positive".into()));
        }
        self.alpha.validate()?;
        self.thresholds.validate()
    }

    /// Window and stride lengths in frames, each at least one frame.
    pub fn window_frames(&self, frame_rate_hz: f64) -> (u64, u64) {
        let w = (self.window_s * frame_rate_hz).round().max(1.0) as u64;
        let s = (self.stride() * frame_rate_hz).round().max(1.0) as u64;
        (w, s)
    }
}

/// Top-level TOML file accepted by the command line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub analysis: AnalysisConfig,
    /// Frame rate used when reading trajectory files, Hz.
    #[serde(default)]
    pub frame_rate_hz: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ConfigFile {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ConfigFile = toml::from_str(s)?;
        cfg.analysis.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Validation(format!("cannot read config `{}`: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }
}

/// Thresholds as written by calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdsFile {
    pub thresholds: StyleThresholds,
    /// Number of conservative agents the percentiles were taken over.
    pub conservative_agents: usize,
    pub percentile: f64,
}

impl ThresholdsFile {
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("thresholds serialise")
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let f: ThresholdsFile = toml::from_str(s)?;
        f.thresholds.validate()?;
        Ok(f)
    }
}
