//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::impedance::ImpedanceConfig;
use crate::sim::{LearnerParams, SimConfig};
use crate::viapoint::CurvatureMode;

/// Via-point count per iteration: one value, or a schedule whose last entry
/// repeats.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ViaCount {
    Constant(usize),
    Schedule(Vec<usize>),
}

impl ViaCount {
    pub fn at(&self, iteration: usize) -> usize {
        match self {
            ViaCount::Constant(h) => *h,
            ViaCount::Schedule(s) => s.get(iteration).or(s.last()).copied().unwrap_or(0),
        }
    }

    fn values(&self) -> Vec<usize> {
        match self {
            ViaCount::Constant(h) => vec![*h],
            ViaCount::Schedule(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StyleConfig {
    /// Covariance diagonal floor (m² and s²).
    pub cov_floor: f64,
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    /// Learner observation noise, m² per axis.
    pub learner_noise: f64,
    /// Via-point observation noise, m² per axis.
    pub via_noise: f64,
    /// Kernel length-scale in seconds; stroke duration / z when unset.
    pub length_scale: Option<f64>,
    #[serde(with = "curvature_mode")]
    pub curvature: CurvatureMode,
    /// Draw teaching waypoints from the posterior instead of using its mean.
    pub sample_teaching: bool,
}

impl Default for StyleConfig {
    fn default() -> Self {
        Self {
            cov_floor: 1e-6,
            max_iterations: 200,
            relative_tolerance: 1e-6,
            learner_noise: 1e-4,
            via_noise: 1e-6,
            length_scale: None,
            curvature: CurvatureMode::Parametric,
            sample_teaching: false,
        }
    }
}

mod curvature_mode {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::viapoint::CurvatureMode;

    pub fn serialize<S: Serializer>(m: &CurvatureMode, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(match m {
            CurvatureMode::Parametric => "parametric",
            CurvatureMode::PerAxis => "per_axis",
        })
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CurvatureMode, D::Error> {
        match String::deserialize(d)?.as_str() {
            "parametric" => Ok(CurvatureMode::Parametric),
            "per_axis" => Ok(CurvatureMode::PerAxis),
            other => Err(serde::de::Error::unknown_variant(other, &["parametric", "per_axis"])),
        }
    }
}

/// Simulated participants: `per_level` learners at each proficiency level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RosterConfig {
    pub per_level: usize,
    /// RMS style distortion in meters for levels 0, 1, 2.
    pub distortion: [f64; 3],
    /// Writing-speed multiplier range.
    pub tempo: [f64; 2],
    pub learner: LearnerParams,
}

impl Default for RosterConfig {
    fn default() -> Self {
        Self {
            per_level: 5,
            distortion: [0.025, 0.015, 0.007],
            tempo: [0.8, 1.2],
            learner: LearnerParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Waypoints per character.
    pub n: usize,
    /// Writings kept in the learner dataset window.
    pub l: usize,
    pub h: ViaCount,
    /// Teaching iterations.
    pub m: usize,
    /// Mixture components.
    pub z: usize,
    /// Workspace width and height in meters.
    pub workspace: [f64; 2],
    /// Nominal seconds per stroke.
    pub stroke_duration: f64,
    /// Fraction of the way to the reference a free-copying learner moves.
    pub fc_shift_gain: f64,
    /// Master seeds; each runs the whole roster.
    pub seeds: Vec<u64>,
    /// Character file; the built-in set when unset.
    pub characters: Option<PathBuf>,
    /// Keep per-step interaction records in the report output.
    pub keep_records: bool,
    pub impedance: ImpedanceConfig<f64>,
    pub sim: SimConfig,
    pub style: StyleConfig,
    pub roster: RosterConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 200,
            l: 3,
            h: ViaCount::Constant(5),
            m: 9,
            z: 8,
            workspace: [0.35, 0.35],
            stroke_duration: 2.0,
            fc_shift_gain: 0.15,
            seeds: vec![1],
            characters: None,
            keep_records: false,
            impedance: ImpedanceConfig::default(),
            sim: SimConfig::default(),
            style: StyleConfig::default(),
            roster: RosterConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Parse(String),
    #[error("config: {0}")]
    Invalid(String),
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative character paths are relative to the config file.
        if let (Some(chars), Some(dir)) = (&cfg.characters, path.parent()) {
            if chars.is_relative() {
                cfg.characters = Some(dir.join(chars));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        for (name, v) in [("n", self.n), ("l", self.l), ("m", self.m), ("z", self.z)] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.h.values().is_empty() || self.h.values().contains(&0) {
            return bad("h must be at least 1".into());
        }
        if !(self.workspace[0] > 0.0 && self.workspace[1] > 0.0 && self.stroke_duration > 0.0) {
            return bad("workspace and stroke_duration must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.fc_shift_gain) {
            return bad("fc_shift_gain must lie in [0, 1]".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if !(self.roster.tempo[0] > 0.0 && self.roster.tempo[0] <= self.roster.tempo[1]) {
            return bad("tempo range must be positive and ordered".into());
        }
        if self.roster.distortion.iter().any(|d| !(*d >= 0.0)) {
            return bad("distortion must be non-negative".into());
        }
        let s = &self.style;
        if !(s.cov_floor > 0.0 && s.learner_noise > 0.0 && s.via_noise > 0.0 && s.relative_tolerance > 0.0) {
            return bad("style noise levels and tolerances must be positive".into());
        }
        if s.length_scale.is_some_and(|l| !(l > 0.0)) {
            return bad("length_scale must be positive".into());
        }
        self.impedance.validate().map_err(ConfigError::Invalid)?;
        self.roster
            .learner
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn workspace(&self) -> (f64, f64) {
        (self.workspace[0], self.workspace[1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_files_fill_in_defaults() {
        let cfg = ExperimentConfig::from_toml("m = 4\nh = [5, 8]\nseeds = [3, 4]\n[roster]\nper_level = 1\n").unwrap();
        assert_eq!(cfg.m, 4);
        assert_eq!(cfg.h.at(0), 5);
        assert_eq!(cfg.h.at(7), 8);
        assert_eq!(cfg.roster.per_level, 1);
        assert_eq!(cfg.n, 200);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(matches!(ExperimentConfig::from_toml("l = 0"), Err(ConfigError::Invalid(_))));
        assert!(matches!(ExperimentConfig::from_toml("h = 0"), Err(ConfigError::Invalid(_))));
        assert!(matches!(ExperimentConfig::from_toml("bogus = 1"), Err(ConfigError::Parse(_))));
        assert!(matches!(
            ExperimentConfig::from_toml("[style]\ncurvature = \"spline\""),
            Err(ConfigError::Parse(_))
        ));
    }
}
