//! Scenario files: every model parameter plus the sweep definition, in TOML.
//!
//! Sections may be omitted and keys may be left out; missing values take
//! their defaults, so an empty file describes the reference experiment.
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::SafetyParams;
use crate::driver_model::DriverParams;
use crate::engine::{ControlParams, ModelParams, SimConfig};
use crate::geometry::RoundaboutGeometry;
use crate::metrics::FuelModelCoefficients;
use crate::trajectory::ActuationLimits;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Actuation bounds and the rear-end safe distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitsSection {
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub standstill: f64,
    pub headway: f64,
}

impl Default for LimitsSection {
    fn default() -> Self {
        let (a, s) = (ActuationLimits::default(), SafetyParams::default());
        Self {
            u_min: a.u_min,
            u_max: a.u_max,
            v_min: a.v_min,
            v_max: a.v_max,
            standstill: s.standstill,
            headway: s.headway,
        }
    }
}

/// Run parameters shared by every point of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub step: f64,
    pub duration: f64,
    pub dispatch_window: f64,
    pub demand_per_approach: f64,
    pub total_vehicles: u32,
    pub min_generation_headway: f64,
    pub log_trajectory_every: f64,
    pub aggregate_every: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        let c = SimConfig::default();
        Self {
            step: c.step,
            duration: c.duration,
            dispatch_window: c.dispatch_window,
            demand_per_approach: c.demand_per_approach,
            total_vehicles: c.total_vehicles,
            min_generation_headway: c.min_generation_headway,
            log_trajectory_every: c.log_trajectory_every,
            aggregate_every: c.aggregate_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub mpr: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            mpr: vec![0.0, 0.2, 0.5, 0.8, 1.0],
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioFile {
    pub geometry: RoundaboutGeometry,
    pub limits: LimitsSection,
    pub driver: DriverParams,
    pub sim: SimSection,
    pub sweep: SweepSection,
    pub control: ControlParams,
    pub fuel: FuelModelCoefficients,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text)?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario fields are plain numbers and lists")
    }

    pub fn model(&self) -> ModelParams {
        let l = &self.limits;
        ModelParams {
            geometry: self.geometry.clone(),
            limits: ActuationLimits {
                u_min: l.u_min,
                u_max: l.u_max,
                v_min: l.v_min,
                v_max: l.v_max,
            },
            safety: SafetyParams {
                standstill: l.standstill,
                headway: l.headway,
            },
            driver: self.driver.clone(),
            control: self.control.clone(),
            fuel: self.fuel.clone(),
        }
    }

    pub fn sim_config(&self, mpr: f64, seed: u64) -> SimConfig {
        let s = &self.sim;
        SimConfig {
            step: s.step,
            duration: s.duration,
            dispatch_window: s.dispatch_window,
            demand_per_approach: s.demand_per_approach,
            total_vehicles: s.total_vehicles,
            mpr,
            seed,
            min_generation_headway: s.min_generation_headway,
            log_trajectory_every: s.log_trajectory_every,
            aggregate_every: s.aggregate_every,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.model().validate().map_err(ScenarioError::Invalid)?;
        self.sim_config(0.0, 0)
            .validate()
            .map_err(ScenarioError::Invalid)?;
        validate_sweep(&self.sweep.mpr, &self.sweep.seeds)
    }
}

pub fn validate_sweep(mpr: &[f64], seeds: &[u64]) -> Result<(), ScenarioError> {
    if mpr.is_empty() || seeds.is_empty() {
        return Err(ScenarioError::Invalid(
            "sweep.mpr and sweep.seeds must not be empty".into(),
        ));
    }
    if let Some(bad) = mpr.iter().find(|m| !(0.0..=1.0).contains(*m)) {
        return Err(ScenarioError::Invalid(format!(
            "sweep.mpr value {bad} is outside the range [0, 1]"
        )));
    }
    let mut sorted = mpr.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(ScenarioError::Invalid(
            "sweep.mpr contains duplicates".into(),
        ));
    }
    let mut seeds = seeds.to_vec();
    seeds.sort_unstable();
    if seeds.windows(2).any(|w| w[0] == w[1]) {
        return Err(ScenarioError::Invalid(
            "sweep.seeds contains duplicates".into(),
        ));
    }
    Ok(())
}
