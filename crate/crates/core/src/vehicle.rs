use serde::{Deserialize, Serialize};
use std::fmt;

use crate::geometry::{Approach, RoutePosition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VehicleId(pub u32);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VehicleClass {
    Cav,
    Human,
}

impl VehicleClass {
    pub fn as_str(self) -> &'static str {
        match self {
            VehicleClass::Cav => "CAV",
            VehicleClass::Human => "Human",
        }
    }
}

impl fmt::Display for VehicleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Uncontrolled,
    OptimalControl,
    Follow,
    HumanDriving,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Uncontrolled => "uncontrolled",
            Mode::OptimalControl => "optimal",
            Mode::Follow => "follow",
            Mode::HumanDriving => "human",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Kinematic state and mode of one vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: VehicleId,
    pub vclass: VehicleClass,
    pub pos: RoutePosition,
    pub v: f64,
    pub u: f64,
    pub mode: Mode,
    pub t_spawn: f64,
    pub t_enter_control: Option<f64>,
    pub t_exit_network: Option<f64>,
}

impl VehicleState {
    pub fn new(
        id: VehicleId,
        vclass: VehicleClass,
        approach: Approach,
        s: f64,
        v: f64,
        t_spawn: f64,
    ) -> Self {
        let mode = match vclass {
            VehicleClass::Cav => Mode::Uncontrolled,
            VehicleClass::Human => Mode::HumanDriving,
        };
        Self {
            id,
            vclass,
            pos: RoutePosition::new(approach, s),
            v,
            u: 0.0,
            mode,
            t_spawn,
            t_enter_control: None,
            t_exit_network: None,
        }
    }

    pub fn approach(&self) -> Approach {
        self.pos.approach
    }

    pub fn s(&self) -> f64 {
        self.pos.s
    }
}
