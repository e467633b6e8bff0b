//! One-dimensional path model of the two-approach roundabout.
//!
//! Each vehicle travels a fixed route parameterised by a scalar `s`, the
//! distance from its input point. Eastbound traffic passes straight through
//! the merging zone; westbound traffic enters the roundabout first and
//! circulates along `circulating_arc` before reaching the same merging zone.
//!
//! ```text
//! Eastbound: | entry | control (L) | merge (S) | exit leg |
//! Westbound: | entry | control (L) | circulating (L_r) | merge (S) | exit leg |
//! ```

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Approach {
    Eastbound,
    Westbound,
}

impl Approach {
    pub const ALL: [Approach; 2] = [Approach::Eastbound, Approach::Westbound];

    /// The merge-time offset indicator: 0 for the approach that merges at the
    /// control-zone exit, 1 for the approach that circulates first.
    pub fn lambda(self) -> u8 {
        match self {
            Approach::Eastbound => 0,
            Approach::Westbound => 1,
        }
    }

    /// Whether this approach gives way to the circulating stream at the
    /// merge.
    pub fn yields(self) -> bool {
        self == Approach::Eastbound
    }

    pub fn other(self) -> Approach {
        match self {
            Approach::Eastbound => Approach::Westbound,
            Approach::Westbound => Approach::Eastbound,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Approach::Eastbound => "EB",
            Approach::Westbound => "WB",
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Zone {
    EntryZone,
    ControlZone,
    CirculatingArc,
    MergingZone,
    ExitLeg,
}

impl Zone {
    pub fn as_str(self) -> &'static str {
        match self {
            Zone::EntryZone => "entry",
            Zone::ControlZone => "control",
            Zone::CirculatingArc => "circulating",
            Zone::MergingZone => "merging",
            Zone::ExitLeg => "exit",
        }
    }

    /// Zones inside the roundabout proper, where the imposed speed applies.
    pub fn is_roundabout(self) -> bool {
        matches!(self, Zone::CirculatingArc | Zone::MergingZone)
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoutePosition {
    pub approach: Approach,
    pub s: f64,
}

impl RoutePosition {
    pub fn new(approach: Approach, s: f64) -> Self {
        Self { approach, s }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("position s = {s} m is outside the {approach} route of length {length} m")]
    OutOfRoute {
        approach: Approach,
        s: f64,
        length: f64,
    },
    #[error("position s = {s} m is at or past the {approach} merging-zone entry")]
    NegativeDistance { approach: Approach, s: f64 },
    #[error("invalid geometry: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoundaboutGeometry {
    pub approach_length: f64,
    pub entry_zone_length: f64,
    pub control_zone_length: f64,
    pub circulating_arc: f64,
    pub merging_zone_arc: f64,
    pub perimeter: f64,
    pub roundabout_speed: f64,
    pub entry_speed_limit: f64,
    pub exit_leg_length: f64,
}

impl Default for RoundaboutGeometry {
    fn default() -> Self {
        Self {
            approach_length: 320.0,
            entry_zone_length: 20.0,
            control_zone_length: 300.0,
            circulating_arc: 100.0,
            merging_zone_arc: 12.0,
            perimeter: 200.0,
            roundabout_speed: 8.9,
            entry_speed_limit: 15.6,
            exit_leg_length: 100.0,
        }
    }
}

impl RoundaboutGeometry {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let lengths = [
            ("approach_length", self.approach_length),
            ("entry_zone_length", self.entry_zone_length),
            ("control_zone_length", self.control_zone_length),
            ("circulating_arc", self.circulating_arc),
            ("merging_zone_arc", self.merging_zone_arc),
            ("perimeter", self.perimeter),
            ("exit_leg_length", self.exit_leg_length),
        ];
        for (name, value) in lengths {
            if !value.is_finite() || value < 0.0 {
                return Err(GeometryError::Invalid(format!(
                    "{name} must be a finite non-negative length, got {value}"
                )));
            }
        }
        if self.control_zone_length <= 0.0 || self.merging_zone_arc <= 0.0 {
            return Err(GeometryError::Invalid(
                "control_zone_length and merging_zone_arc must be positive".into(),
            ));
        }
        if (self.entry_zone_length + self.control_zone_length - self.approach_length).abs() > 1e-9 {
            return Err(GeometryError::Invalid(format!(
                "entry_zone_length + control_zone_length must equal approach_length ({} + {} != {})",
                self.entry_zone_length, self.control_zone_length, self.approach_length
            )));
        }
        if !(self.merging_zone_arc <= self.circulating_arc
            && self.circulating_arc <= self.perimeter)
        {
            return Err(GeometryError::Invalid(format!(
                "merging_zone_arc <= circulating_arc <= perimeter violated ({} / {} / {})",
                self.merging_zone_arc, self.circulating_arc, self.perimeter
            )));
        }
        if !(self.roundabout_speed > 0.0 && self.roundabout_speed <= self.entry_speed_limit) {
            return Err(GeometryError::Invalid(format!(
                "0 < roundabout_speed <= entry_speed_limit violated ({} / {})",
                self.roundabout_speed, self.entry_speed_limit
            )));
        }
        Ok(())
    }

    pub fn route_length(&self, approach: Approach) -> f64 {
        self.merge_entry(approach) + self.merging_zone_arc + self.exit_leg_length
    }

    /// Route coordinate where the control zone begins.
    pub fn control_entry(&self) -> f64 {
        self.entry_zone_length
    }

    /// Route coordinate where the control zone ends (roundabout entry).
    pub fn control_exit(&self) -> f64 {
        self.approach_length
    }

    pub fn merge_entry(&self, approach: Approach) -> f64 {
        self.approach_length + f64::from(approach.lambda()) * self.circulating_arc
    }

    pub fn merge_exit(&self, approach: Approach) -> f64 {
        self.merge_entry(approach) + self.merging_zone_arc
    }

    /// Time spent between control-zone exit and merging-zone entry when
    /// cruising at the roundabout speed.
    pub fn merge_offset(&self, approach: Approach) -> f64 {
        f64::from(approach.lambda()) * self.circulating_arc / self.roundabout_speed
    }

    pub fn zone_of(&self, pos: RoutePosition) -> Result<Zone, GeometryError> {
        let length = self.route_length(pos.approach);
        if !(pos.s >= 0.0 && pos.s < length) {
            return Err(GeometryError::OutOfRoute {
                approach: pos.approach,
                s: pos.s,
                length,
            });
        }
        let s = pos.s;
        let zone = if s < self.entry_zone_length {
            Zone::EntryZone
        } else if s < self.approach_length {
            Zone::ControlZone
        } else if s < self.merge_entry(pos.approach) {
            Zone::CirculatingArc
        } else if s < self.merge_exit(pos.approach) {
            Zone::MergingZone
        } else {
            Zone::ExitLeg
        };
        Ok(zone)
    }

    pub fn distance_to_merge(&self, pos: RoutePosition) -> Result<f64, GeometryError> {
        let d = self.merge_entry(pos.approach) - pos.s;
        if d <= 0.0 {
            Err(GeometryError::NegativeDistance {
                approach: pos.approach,
                s: pos.s,
            })
        } else {
            Ok(d)
        }
    }

    /// Distance from `s` to the roundabout entry (control-zone exit), zero past it.
    pub fn distance_to_roundabout(&self, s: f64) -> f64 {
        (self.approach_length - s).max(0.0)
    }

    /// Speed limit governing a zone.
    pub fn speed_limit(&self, zone: Zone) -> f64 {
        if zone.is_roundabout() {
            self.roundabout_speed
        } else {
            self.entry_speed_limit
        }
    }

    /// Route traversal time at the zone speed limits.
    pub fn free_flow_time(&self, approach: Approach) -> f64 {
        let roundabout = self.merge_exit(approach) - self.approach_length;
        (self.approach_length + self.exit_leg_length) / self.entry_speed_limit
            + roundabout / self.roundabout_speed
    }
}
