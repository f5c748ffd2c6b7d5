//! Experiment configuration files (TOML).
//!
//! Every section and key is optional; omitted values take the desk defaults
//! below and the radio/battery defaults of [`ChannelConfig`] and
//! [`ComputePowerConfig`]. Unknown keys are rejected, and both parse and
//! validation errors name the offending key path.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{ChannelConfig, ComputePowerConfig};
use crate::learning::{ModelLayout, SyntheticBlobs};
use crate::strategies::TrainingPlan;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{origin}: at `{key}`: {message}")]
    Parse { origin: String, key: String, message: String },
    #[error("invalid config value `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot serialize config: {0}")]
    Serialize(String),
}

fn invalid(key: &str, message: impl ToString) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), message: message.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetConfig {
    pub n: usize,
    /// Width and height of the placement area, meters.
    pub area: (f64, f64),
    /// Shared flight altitude, meters.
    pub altitude: f64,
    /// Battery capacity per drone, Wh. Falls back to
    /// `compute.battery_capacity_wh`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capacity_wh: Option<f64>,
    /// Root seed of every random choice in a run.
    pub seed: u64,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self { n: 10, area: (10.0, 10.0), altitude: 0.0, capacity_wh: None, seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Gaussian blobs. `samples` defaults to enough examples for disjoint
    /// partitions plus the held-out split.
    Synthetic {
        #[serde(default = "default_features")]
        features: usize,
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        samples: Option<usize>,
    },
    /// `label,f1,f2,...` rows, no header. Relative paths resolve against the
    /// working directory.
    Csv { path: PathBuf },
}

fn default_features() -> usize {
    SyntheticBlobs::default().features
}
fn default_classes() -> usize {
    SyntheticBlobs::default().classes
}
fn default_separation() -> f64 {
    SyntheticBlobs::default().separation
}
fn default_noise() -> f64 {
    SyntheticBlobs::default().noise
}

impl Default for DataSource {
    fn default() -> Self {
        let b = SyntheticBlobs::default();
        DataSource::Synthetic {
            features: b.features,
            classes: b.classes,
            separation: b.separation,
            noise: b.noise,
            samples: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Examples per drone.
    pub per_drone: usize,
    /// Share of each partition drawn from a core common to all drones.
    pub overlap: f64,
    /// Share of the source held out for exchange scoring and metrics.
    pub eval_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { source: DataSource::default(), per_drone: 50, overlap: 0.0, eval_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Defaults to softmax regression sized from the data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout: Option<ModelLayout>,
    /// Wire width of one parameter, 4 or 8.
    pub bytes_per_value: usize,
    /// Priced size of one model message, bytes. Overrides the encoded size
    /// of the desk model, e.g. to price a full-size network.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_bytes_override: Option<u64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { layout: None, bytes_per_value: 4, model_bytes_override: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub fleet: FleetConfig,
    pub plan: TrainingPlan,
    pub channel: ChannelConfig,
    pub compute: ComputePowerConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            fleet: FleetConfig::default(),
            plan: TrainingPlan::default(),
            channel: ChannelConfig::default(),
            compute: ComputePowerConfig::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

/// Parses and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_toml(&text, &path.display().to_string())
}

pub(crate) fn parse_toml<T: serde::de::DeserializeOwned + Validate>(text: &str, origin: &str) -> Result<T, ConfigError> {
    let parse_error = |key: String, message: String| ConfigError::Parse { origin: origin.to_string(), key, message };
    let de = toml::Deserializer::parse(text).map_err(|e| parse_error(".".into(), e.to_string()))?;
    let value: T = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        parse_error(key, e.into_inner().to_string().trim().to_string())
    })?;
    value.validate()?;
    Ok(value)
}

pub(crate) trait Validate {
    fn validate(&self) -> Result<(), ConfigError>;
}

impl Validate for ExperimentConfig {
    fn validate(&self) -> Result<(), ConfigError> {
        ExperimentConfig::validate(self)
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        parse_toml(text, "<config>")
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::Serialize(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        fs::write(path, self.to_toml_string()?).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })
    }

    /// Battery capacity every drone starts with, Wh.
    pub fn capacity_wh(&self) -> f64 {
        self.fleet.capacity_wh.unwrap_or(self.compute.battery_capacity_wh)
    }

    /// The plan with its root seed taken from `fleet.seed`.
    pub fn seeded_plan(&self) -> TrainingPlan {
        TrainingPlan { seed: self.fleet.seed, ..self.plan.clone() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let f = &self.fleet;
        if f.n < 2 {
            return Err(invalid("fleet.n", format!("need at least 2 drones, got {}", f.n)));
        }
        if !(f.area.0 > 0.0 && f.area.1 > 0.0 && f.area.0.is_finite() && f.area.1.is_finite()) {
            return Err(invalid("fleet.area", format!("both dimensions must be positive, got {:?}", f.area)));
        }
        if !(f.altitude >= 0.0 && f.altitude.is_finite()) {
            return Err(invalid("fleet.altitude", format!("must be >= 0, got {}", f.altitude)));
        }
        if let Some(c) = f.capacity_wh {
            if !(c > 0.0 && c.is_finite()) {
                return Err(invalid("fleet.capacity_wh", format!("must be positive, got {c}")));
            }
        }
        self.plan.validate().map_err(|e| invalid("plan", e))?;
        self.channel.validate().map_err(|e| invalid("channel", e))?;
        self.compute.validate().map_err(|e| invalid("compute", e))?;

        let d = &self.data;
        if d.per_drone == 0 {
            return Err(invalid("data.per_drone", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&d.overlap) {
            return Err(invalid("data.overlap", format!("must be in [0, 1], got {}", d.overlap)));
        }
        if !(d.eval_fraction > 0.0 && d.eval_fraction < 1.0) {
            return Err(invalid("data.eval_fraction", format!("must be in (0, 1), got {}", d.eval_fraction)));
        }
        if let DataSource::Synthetic { features, classes, separation, noise, samples } = d.source {
            if features == 0 {
                return Err(invalid("data.source.features", "must be >= 1"));
            }
            if classes < 2 {
                return Err(invalid("data.source.classes", "must be >= 2"));
            }
            if !(separation >= 0.0 && separation.is_finite()) {
                return Err(invalid("data.source.separation", "must be >= 0"));
            }
            if !(noise >= 0.0 && noise.is_finite()) {
                return Err(invalid("data.source.noise", "must be >= 0"));
            }
            if samples.is_some_and(|s| s < 2) {
                return Err(invalid("data.source.samples", "must be >= 2"));
            }
            if let Some(layout) = self.model.layout {
                if layout.inputs() != features {
                    return Err(invalid(
                        "model.layout.inputs",
                        format!("model takes {} inputs but the data has {features} features", layout.inputs()),
                    ));
                }
                if layout.classes().is_some_and(|c| c < classes) {
                    return Err(invalid("model.layout.classes", format!("model has fewer than the data's {classes} classes")));
                }
            }
        }

        let m = &self.model;
        if let Some(layout) = m.layout {
            layout.validate().map_err(|e| invalid("model.layout", e))?;
        }
        if m.bytes_per_value != 4 && m.bytes_per_value != 8 {
            return Err(invalid("model.bytes_per_value", format!("must be 4 or 8, got {}", m.bytes_per_value)));
        }
        if m.model_bytes_override == Some(0) {
            return Err(invalid("model.model_bytes_override", "must be positive"));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(invalid("output_dir", "must not be empty"));
        }
        Ok(())
    }
}
