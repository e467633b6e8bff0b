use crate::coordinator::{QueueEntry, QueueEvent};
use crate::geometry::{Approach, Zone};
use crate::vehicle::{Mode, VehicleClass, VehicleId};

use super::SimConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Spawn,
    SpawnDelayed,
    EnterControl,
    Plan,
    Replan,
    PlanInfeasible,
    ModeChange,
    GapAccepted,
    MergeEntry,
    MergeExit,
    LateralConflict,
    EmergencyBrake,
    NegativeGap,
    Exit,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Spawn => "spawn",
            EventKind::SpawnDelayed => "spawn_delayed",
            EventKind::EnterControl => "enter_control",
            EventKind::Plan => "plan",
            EventKind::Replan => "replan",
            EventKind::PlanInfeasible => "plan_infeasible",
            EventKind::ModeChange => "mode_change",
            EventKind::GapAccepted => "gap_accepted",
            EventKind::MergeEntry => "merge_entry",
            EventKind::MergeExit => "merge_exit",
            EventKind::LateralConflict => "lateral_conflict",
            EventKind::EmergencyBrake => "emergency_brake",
            EventKind::NegativeGap => "negative_gap",
            EventKind::Exit => "exit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub t: f64,
    pub vehicle: VehicleId,
    pub kind: EventKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub vehicle: VehicleId,
    pub vclass: VehicleClass,
    pub approach: Approach,
    pub s: f64,
    pub v: f64,
    pub u: f64,
    pub mode: Mode,
    pub zone: Zone,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleRecord {
    pub id: VehicleId,
    pub vclass: VehicleClass,
    pub approach: Approach,
    /// Scheduled generation time (demand time).
    pub t_spawn: f64,
    /// Time the vehicle actually entered the network.
    pub t_insert: Option<f64>,
    pub t_enter_control: Option<f64>,
    pub tm: Option<f64>,
    pub tz: Option<f64>,
    pub t_merge_entry: Option<f64>,
    pub tf_exit: Option<f64>,
    pub t_exit_network: Option<f64>,
    pub fuel_ml: f64,
    /// Lowest speed observed between control-zone entry and merging-zone
    /// entry.
    pub min_speed_before_merge: Option<f64>,
    pub mode_changes: u32,
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub config: SimConfig,
    pub steps: u64,
    pub trajectories: Vec<TrajectorySample>,
    pub events: Vec<SimEvent>,
    pub vehicles: Vec<VehicleRecord>,
    pub queue_events: Vec<QueueEvent>,
    pub queue: Vec<QueueEntry>,
    /// Fuel burned per aggregation window, per approach, mL.
    pub window_fuel: Vec<[f64; 2]>,
    /// Vehicles inserted into the network.
    pub spawned: usize,
    pub exited: usize,
    /// Inserted vehicles still driving at the end.
    pub in_network: usize,
    /// Vehicles still in the network (or waiting to enter) at the end.
    pub residual: usize,
}

impl RunLog {
    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &SimEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// Every inserted vehicle either left or is still present, exactly once.
    pub fn conserved(&self) -> bool {
        let exited = self
            .vehicles
            .iter()
            .filter(|v| v.t_exit_network.is_some())
            .count();
        self.spawned == self.exited + self.in_network && exited == self.exited
    }

    pub fn total_fuel(&self) -> f64 {
        self.vehicles.iter().map(|v| v.fuel_ml).sum()
    }
}
