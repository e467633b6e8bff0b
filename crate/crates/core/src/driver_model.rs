//! Longitudinal behaviour of human-driven vehicles and the CAV safety switch.
//!
//! Car following uses the Intelligent Driver Model with the standstill
//! distance and time headway of the human driver parameter set. Eastbound
//! humans yield to circulating traffic with a critical-gap / follow-up rule.

use serde::{Deserialize, Serialize};

use crate::coordinator::SafetyParams;
use crate::geometry::Zone;
use crate::vehicle::Mode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriverParams {
    pub desired_speed_approach: f64,
    pub desired_speed_roundabout: f64,
    pub max_accel: f64,
    pub comfort_decel: f64,
    pub hard_decel: f64,
    pub standstill: f64,
    pub time_headway: f64,
    pub accel_exponent: f64,
    pub critical_gap: f64,
    pub follow_up_time: f64,
}

impl Default for DriverParams {
    fn default() -> Self {
        Self {
            desired_speed_approach: 15.6,
            desired_speed_roundabout: 8.9,
            max_accel: 3.0,
            comfort_decel: 2.5,
            hard_decel: 4.5,
            standstill: 1.5,
            time_headway: 1.2,
            accel_exponent: 4.0,
            critical_gap: 4.1,
            follow_up_time: 3.2,
        }
    }
}

impl DriverParams {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("desired_speed_approach", self.desired_speed_approach),
            ("desired_speed_roundabout", self.desired_speed_roundabout),
            ("max_accel", self.max_accel),
            ("comfort_decel", self.comfort_decel),
            ("hard_decel", self.hard_decel),
            ("standstill", self.standstill),
            ("time_headway", self.time_headway),
            ("accel_exponent", self.accel_exponent),
            ("critical_gap", self.critical_gap),
            ("follow_up_time", self.follow_up_time),
        ];
        if let Some((name, value)) = fields.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(format!("driver.{name} must be positive, got {value}"));
        }
        if self.comfort_decel > self.hard_decel {
            return Err("driver.comfort_decel must not exceed driver.hard_decel".into());
        }
        if self.critical_gap <= self.follow_up_time {
            return Err("driver.critical_gap must exceed driver.follow_up_time".into());
        }
        Ok(())
    }

    /// Desired speed in a zone. Upstream of the roundabout, drivers anticipate
    /// the lower circulating speed and brake comfortably toward it.
    pub fn desired_speed(&self, zone: Zone, distance_to_roundabout: f64) -> f64 {
        if zone.is_roundabout() {
            return self.desired_speed_roundabout;
        }
        if matches!(zone, Zone::ExitLeg) {
            return self.desired_speed_approach;
        }
        let anticipated = (self.desired_speed_roundabout.powi(2)
            + 2.0 * self.comfort_decel * distance_to_roundabout)
            .sqrt();
        self.desired_speed_approach.min(anticipated)
    }
}

/// The vehicle ahead as seen by a follower: spacing and speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    pub gap: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Following {
    pub accel: f64,
    /// The leader gap was non-positive and the vehicle brakes at its limit.
    pub emergency: bool,
}

pub fn car_following_accel(
    v: f64,
    leader: Option<Leader>,
    params: &DriverParams,
    desired_speed: f64,
) -> Following {
    let free = 1.0 - (v / desired_speed).powf(params.accel_exponent);
    let interaction = match leader {
        None => 0.0,
        Some(l) if l.gap <= 0.0 => {
            return Following {
                accel: -params.hard_decel,
                emergency: true,
            };
        }
        Some(l) => {
            let closing = v - l.speed;
            let desired_gap = params.standstill
                + (v * params.time_headway
                    + v * closing / (2.0 * (params.max_accel * params.comfort_decel).sqrt()))
                .max(0.0);
            (desired_gap / l.gap).powi(2)
        }
    };
    let accel =
        (params.max_accel * (free - interaction)).clamp(-params.hard_decel, params.max_accel);
    Following {
        accel,
        emergency: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapDecision {
    Proceed,
    Yield,
}

/// A conflicting (circulating) vehicle upstream of the merge point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conflicting {
    pub distance_to_merge: f64,
    pub v: f64,
}

/// Critical-gap decision for a vehicle waiting to enter the roundabout.
///
/// `last_proceed` is when the previous vehicle from the same approach
/// accepted its gap. An empty merging zone waives the follow-up time.
pub fn gap_acceptance(
    circulating: &[Conflicting],
    merge_zone_empty: bool,
    t: f64,
    last_proceed: Option<f64>,
    params: &DriverParams,
) -> GapDecision {
    let earliest = circulating
        .iter()
        .map(|c| c.distance_to_merge / c.v.max(1.0))
        .fold(f64::INFINITY, f64::min);
    let follow_up_elapsed = last_proceed.is_none_or(|tp| t - tp >= params.follow_up_time);
    if earliest > params.critical_gap && (follow_up_elapsed || merge_zone_empty) {
        GapDecision::Proceed
    } else {
        GapDecision::Yield
    }
}

/// On-off switch for a CAV behind a human-driven vehicle, with a hysteresis
/// band on the way back to optimal control.
pub fn cav_safety_switch(
    current: Mode,
    gap: f64,
    v: f64,
    params: &SafetyParams,
    hysteresis: f64,
) -> Mode {
    let threshold = params.safe_distance(v);
    match current {
        Mode::Follow if gap >= hysteresis * threshold => Mode::OptimalControl,
        Mode::Follow => Mode::Follow,
        _ if gap < threshold => Mode::Follow,
        _ => Mode::OptimalControl,
    }
}
