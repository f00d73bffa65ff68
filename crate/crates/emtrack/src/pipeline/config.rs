//! Pipeline configuration: documented JSON schema with full defaults,
//! unknown-key rejection and cross-validation on load.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{AcquisitionConfig, TrajectorySpec};
use crate::fieldmodel::{SensorSpec, TransmitterArray};
use crate::filter::build_demod;
use crate::igtlink::DEFAULT_PORT;
use crate::solver::{Bounds, SolverSettings};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerConfig {
    pub host: String,
    pub port: u16,
    pub device_name: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            host: "0.0.0.0".to_string(),
            port: DEFAULT_PORT,
            device_name: "Anser".to_string(),
        }
    }
}

impl ServerConfig {
    pub fn endpoint(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }
}

/// Solver settings plus the tracking-volume bounds, under the "solver" key.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    #[serde(flatten)]
    pub settings: SolverSettings,
    pub bounds: Bounds,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub array: TransmitterArray,
    pub sensor: SensorSpec,
    pub acquisition: AcquisitionConfig,
    pub solver: SolverConfig,
    pub server: ServerConfig,
    /// Simulation only: motion of the simulated sensor.
    pub trajectory: TrajectorySpec,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| ConfigError::Validation(msg);
        self.array.validate().map_err(|e| invalid(e.to_string()))?;
        self.sensor.validate().map_err(|e| invalid(e.to_string()))?;
        let max_freq = self
            .array
            .frequencies()
            .into_iter()
            .fold(0.0f64, f64::max);
        self.acquisition
            .validate(max_freq)
            .map_err(|e| invalid(e.to_string()))?;
        self.solver.settings.validate().map_err(invalid)?;
        self.solver.bounds.validate().map_err(invalid)?;
        self.trajectory
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        // Flags non-bin-aligned frequencies (warning only) and re-checks
        // Nyquist and duplicates through the filter's own guards.
        build_demod(
            &self.array.frequencies(),
            self.acquisition.frame_size,
            self.acquisition.sample_rate,
        )
        .map_err(|e| invalid(e.to_string()))?;
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

pub fn parse_config(text: &str) -> Result<PipelineConfig, ConfigError> {
    let config: PipelineConfig =
        serde_json::from_str(text).map_err(|err| ConfigError::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config<P: AsRef<Path>>(path: P) -> Result<PipelineConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::Pacing;

    #[test]
    fn empty_object_gives_full_defaults() {
        let config = parse_config("{}").unwrap();
        assert_eq!(config.array.len(), 8);
        assert_eq!(config.acquisition.sample_rate, 100_000.0);
        assert_eq!(config.acquisition.frame_size, 1000);
        assert_eq!(config.server.port, DEFAULT_PORT);
        assert_eq!(config.server.device_name, "Anser");
        assert_eq!(config.solver.settings.max_iterations, 300);
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let config = parse_config(
            r#"{"acquisition": {"frame_size": 500, "pacing": "unpaced"}}"#,
        )
        .unwrap();
        assert_eq!(config.acquisition.frame_size, 500);
        assert_eq!(config.acquisition.pacing, Pacing::Unpaced);
        assert_eq!(config.acquisition.sample_rate, 100_000.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = parse_config(r#"{"acquisiton": {}}"#).unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }), "{err}");
        let err = parse_config(r#"{"acquisition": {"frames": 2}}"#).unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }), "{err}");
    }

    #[test]
    fn parse_error_carries_position() {
        let err = parse_config("{\n  \"sensor\": nope\n}").unwrap_err();
        match err {
            ConfigError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn nyquist_violation_is_a_validation_error() {
        let mut config = PipelineConfig::default();
        config.array.coils[7].frequency = 60_000.0;
        let text = config.to_json_pretty();
        let err = parse_config(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Validation(_)), "{err}");
    }

    #[test]
    fn round_trip_reparses_equal() {
        let config = parse_config(r#"{"acquisition": {"frame_size": 2000}}"#).unwrap();
        let text = config.to_json_pretty();
        let again = parse_config(&text).unwrap();
        assert_eq!(text, again.to_json_pretty());
    }

    #[test]
    fn load_config_missing_file() {
        assert!(matches!(
            load_config("/nonexistent/path.json"),
            Err(ConfigError::Io { .. })
        ));
    }
}
