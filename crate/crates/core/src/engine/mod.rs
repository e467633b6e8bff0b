//! Fixed-step simulation of the roundabout network.
//!
//! Each step selects an acceleration for every vehicle (planned trajectory,
//! car following, or the safety switch), integrates the double integrator
//! semi-implicitly, and fires zone-transition events into the coordinator.

mod arrivals;
mod log;
mod world;

pub use arrivals::{generate_arrivals, Arrival};
pub use log::{EventKind, RunLog, SimEvent, TrajectorySample, VehicleRecord};
pub use world::{merging_zone_occupancy, World};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::{CoordinatorError, SafetyParams};
use crate::driver_model::DriverParams;
use crate::geometry::RoundaboutGeometry;
use crate::metrics::FuelModelCoefficients;
use crate::trajectory::ActuationLimits;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Coordinator(#[from] CoordinatorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub step: f64,
    pub duration: f64,
    pub dispatch_window: f64,
    pub demand_per_approach: f64,
    pub total_vehicles: u32,
    pub mpr: f64,
    pub seed: u64,
    pub min_generation_headway: f64,
    pub log_trajectory_every: f64,
    pub aggregate_every: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            step: 0.05,
            duration: 1200.0,
            dispatch_window: 900.0,
            demand_per_approach: 800.0,
            total_vehicles: 400,
            mpr: 1.0,
            seed: 1,
            min_generation_headway: 1.0,
            log_trajectory_every: 1.0,
            aggregate_every: 60.0,
        }
    }
}

/// Number of `step`s in `period`, if `period` is a whole multiple of `step`.
fn whole_steps(period: f64, step: f64) -> Option<u64> {
    let n = (period / step).round();
    (n >= 1.0 && (n * step - period).abs() <= 1e-9 * period.max(1.0)).then_some(n as u64)
}

impl SimConfig {
    pub fn vehicles_per_approach(&self) -> usize {
        (self.total_vehicles / 2) as usize
    }

    pub fn total_steps(&self) -> u64 {
        (self.duration / self.step).round() as u64
    }

    pub fn steps_per_log(&self) -> u64 {
        whole_steps(self.log_trajectory_every, self.step).unwrap_or(1)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(format!("sim.step must be positive, got {}", self.step));
        }
        if whole_steps(self.duration, self.step).is_none() {
            return Err(format!(
                "sim.duration {} is not a whole number of steps of {}",
                self.duration, self.step
            ));
        }
        if !(self.dispatch_window > 0.0 && self.dispatch_window <= self.duration) {
            return Err(format!(
                "sim.dispatch_window must be in (0, duration], got {} (duration {})",
                self.dispatch_window, self.duration
            ));
        }
        if self.total_vehicles == 0 || !self.total_vehicles.is_multiple_of(2) {
            return Err(format!(
                "sim.total_vehicles must be a positive even count, got {}",
                self.total_vehicles
            ));
        }
        if !(self.demand_per_approach > 0.0) {
            return Err(format!(
                "sim.demand_per_approach must be positive, got {}",
                self.demand_per_approach
            ));
        }
        let expected = self.demand_per_approach * self.dispatch_window / 3600.0;
        let per_approach = self.vehicles_per_approach() as f64;
        if (expected - per_approach).abs() > 1.0 {
            return Err(format!(
                "demand {} veh/h over {} s gives {expected:.1} vehicles per approach, but total_vehicles implies {per_approach}",
                self.demand_per_approach, self.dispatch_window
            ));
        }
        if !(0.0..=1.0).contains(&self.mpr) {
            return Err(format!("mpr must be within [0, 1], got {}", self.mpr));
        }
        if !(self.min_generation_headway > 0.0) {
            return Err("sim.min_generation_headway must be positive".into());
        }
        if (per_approach + 1.0) * self.min_generation_headway >= self.dispatch_window {
            return Err(
                "sim.min_generation_headway leaves no room for the requested vehicles".into(),
            );
        }
        if whole_steps(self.log_trajectory_every, self.step).is_none() {
            return Err("sim.log_trajectory_every must be a whole number of steps".into());
        }
        if !(self.aggregate_every > 0.0)
            || whole_steps(self.aggregate_every, self.log_trajectory_every).is_none()
        {
            return Err(
                "sim.aggregate_every must be a whole number of trajectory logging periods".into(),
            );
        }
        Ok(())
    }
}

/// Tracking and coordination parameters of the CAV controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlParams {
    /// Position gain of the trajectory tracker, 1/s².
    pub k_p: f64,
    /// Speed gain of the trajectory tracker, 1/s.
    pub k_v: f64,
    /// Predecessor merge-time drift that triggers a replan, s.
    pub replan_threshold: f64,
    /// Multiple of the safe distance needed to leave follow mode.
    pub switch_hysteresis: f64,
    /// How far upstream of the merge a committed vehicle is projected onto
    /// the other approach, m.
    pub merge_lookahead: f64,
}

impl Default for ControlParams {
    fn default() -> Self {
        Self {
            k_p: 0.5,
            k_v: 1.0,
            replan_threshold: 0.5,
            switch_hysteresis: 1.2,
            merge_lookahead: 40.0,
        }
    }
}

impl ControlParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.k_p >= 0.0 && self.k_v >= 0.0) {
            return Err("control.k_p and control.k_v must be non-negative".into());
        }
        if !(self.replan_threshold > 0.0) {
            return Err("control.replan_threshold must be positive".into());
        }
        if !(self.switch_hysteresis >= 1.0) {
            return Err("control.switch_hysteresis must be at least 1".into());
        }
        if !(self.merge_lookahead >= 0.0) {
            return Err("control.merge_lookahead must be non-negative".into());
        }
        Ok(())
    }
}

/// Everything that parameterises the network and its vehicles.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParams {
    pub geometry: RoundaboutGeometry,
    pub limits: ActuationLimits,
    pub safety: SafetyParams,
    pub driver: DriverParams,
    pub control: ControlParams,
    pub fuel: FuelModelCoefficients,
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), String> {
        self.geometry.validate().map_err(|e| e.to_string())?;
        self.limits.validate()?;
        self.safety.validate()?;
        self.driver.validate()?;
        self.control.validate()?;
        self.fuel.validate()?;
        if self.limits.v_max < self.geometry.entry_speed_limit {
            return Err(format!(
                "limits.v_max ({}) must be at least geometry.entry_speed_limit ({})",
                self.limits.v_max, self.geometry.entry_speed_limit
            ));
        }
        Ok(())
    }
}

/// Runs one simulation from `t = 0` to `cfg.duration`.
pub fn run(cfg: &SimConfig, params: &ModelParams) -> Result<RunLog, EngineError> {
    cfg.validate().map_err(EngineError::Config)?;
    params.validate().map_err(EngineError::Config)?;
    let mut world = World::new(cfg.clone(), params.clone())?;
    for _ in 0..cfg.total_steps() {
        world.step()?;
    }
    Ok(world.finish())
}
