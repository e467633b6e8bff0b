//! FIFO merge scheduling for the control zone.
//!
//! Every vehicle crossing into the control zone gets the next queue id. CAVs
//! are assigned a merging-zone entry time `tm` that keeps either a rear-end
//! headway (same approach) or merging-zone exclusivity (different approach)
//! behind their predecessor, bounded by what the speed window allows. Human
//! vehicles hold estimates in the same queue so that a CAV behind one still
//! has a predecessor time to schedule against.
//!
//! Scheduled times live on a dyadic grid of `2^-20` s so that
//! `tm - tz` equals the circulating offset bit for bit.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

use crate::geometry::{Approach, RoundaboutGeometry, RoutePosition};
use crate::trajectory::{
    self, ActuationLimits, BoundaryConditions, TrajectoryCoefficients, TrajectoryError, Violation,
};
use crate::vehicle::{VehicleClass, VehicleId, VehicleState};

const TIME_GRID: f64 = 1_048_576.0;

/// Rounds a time to the scheduling grid.
pub fn quantize(t: f64) -> f64 {
    (t * TIME_GRID).round() / TIME_GRID
}

#[derive(Debug, Error, PartialEq)]
pub enum CoordinatorError {
    #[error("vehicle {0} is already registered")]
    AlreadyRegistered(VehicleId),
    #[error("queue entry {0} was already released")]
    AlreadyReleased(QueueId),
    #[error("queue entry {0} does not exist")]
    UnknownEntry(QueueId),
    #[error("scheduling order violated: {0}")]
    SchedulingOrderViolated(String),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QueueId(pub u32);

impl fmt::Display for QueueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetyParams {
    pub standstill: f64,
    pub headway: f64,
}

impl Default for SafetyParams {
    fn default() -> Self {
        Self {
            standstill: 1.5,
            headway: 1.2,
        }
    }
}

impl SafetyParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.standstill > 0.0 && self.headway > 0.0) {
            return Err(format!(
                "standstill and headway must be positive ({} / {})",
                self.standstill, self.headway
            ));
        }
        Ok(())
    }

    /// Speed-proportional rear-end safe distance.
    pub fn safe_distance(&self, v: f64) -> f64 {
        self.standstill + self.headway * v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueEntry {
    pub id: QueueId,
    pub vehicle: VehicleId,
    pub vclass: VehicleClass,
    pub approach: Approach,
    /// Control-zone entry time.
    pub t0: f64,
    pub v0: f64,
    pub lambda: u8,
    /// Planning average speed over the control zone.
    pub vbar: f64,
    pub tm: Option<f64>,
    pub tz: Option<f64>,
    pub tf_exit: Option<f64>,
    /// Observed merging-zone entry time.
    pub merge_entry: Option<f64>,
    /// `tm` holds an estimate rather than a command (human vehicles).
    pub estimated: bool,
    /// Ordering bound (predecessor `tm` plus separation) that the current
    /// schedule was computed against.
    pub bound_at_plan: Option<f64>,
    /// Waiting for a gap in the priority stream; vehicles of that stream do
    /// not schedule behind it.
    pub yielding: bool,
}

impl QueueEntry {
    pub fn is_released(&self) -> bool {
        self.tf_exit.is_some()
    }
}

/// Reference point for the scheduling bounds: either the control-zone entry
/// or, on a replan, the vehicle's current state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleBasis {
    pub t_ref: f64,
    /// Distance left to the control-zone exit.
    pub remaining: f64,
    pub vbar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueueEventKind {
    Register,
    Assign,
    Replan,
    Release,
}

impl QueueEventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            QueueEventKind::Register => "register",
            QueueEventKind::Assign => "assign",
            QueueEventKind::Replan => "replan",
            QueueEventKind::Release => "release",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueEvent {
    pub t: f64,
    pub kind: QueueEventKind,
    pub entry: QueueEntry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanReport {
    pub coeffs: TrajectoryCoefficients,
    pub violations: Vec<Violation>,
}

/// Estimated merging-zone entry of a human vehicle from its current state.
pub fn estimate_human_merge_time(
    state: &VehicleState,
    geom: &RoundaboutGeometry,
    now: f64,
    follow_up_time: f64,
) -> f64 {
    let distance = geom.distance_to_merge(state.pos).unwrap_or(0.0);
    let at_yield_line = state.approach() == Approach::Eastbound && distance <= 5.0 && state.v < 0.1;
    if at_yield_line {
        now + follow_up_time + geom.merging_zone_arc / geom.roundabout_speed
    } else {
        now + distance / state.v.max(1.0)
    }
}

#[derive(Debug, Clone)]
pub struct Coordinator {
    geom: RoundaboutGeometry,
    limits: ActuationLimits,
    safety: SafetyParams,
    follow_up_time: f64,
    entries: Vec<QueueEntry>,
    by_vehicle: BTreeMap<VehicleId, QueueId>,
    active: usize,
    log: Vec<QueueEvent>,
}

impl Coordinator {
    pub fn new(
        geom: RoundaboutGeometry,
        limits: ActuationLimits,
        safety: SafetyParams,
        follow_up_time: f64,
    ) -> Self {
        Self {
            geom,
            limits,
            safety,
            follow_up_time,
            entries: Vec::new(),
            by_vehicle: BTreeMap::new(),
            active: 0,
            log: Vec::new(),
        }
    }

    pub fn geometry(&self) -> &RoundaboutGeometry {
        &self.geom
    }

    pub fn safety(&self) -> &SafetyParams {
        &self.safety
    }

    /// Circulating offset `λ·L_r/v_r` on the scheduling grid.
    pub fn merge_offset(&self, approach: Approach) -> f64 {
        quantize(self.geom.merge_offset(approach))
    }

    pub fn entries(&self) -> &[QueueEntry] {
        &self.entries
    }

    pub fn entry(&self, id: QueueId) -> Result<&QueueEntry, CoordinatorError> {
        (id.0 as usize)
            .checked_sub(1)
            .and_then(|i| self.entries.get(i))
            .ok_or(CoordinatorError::UnknownEntry(id))
    }

    fn entry_mut(&mut self, id: QueueId) -> Result<&mut QueueEntry, CoordinatorError> {
        (id.0 as usize)
            .checked_sub(1)
            .and_then(|i| self.entries.get_mut(i))
            .ok_or(CoordinatorError::UnknownEntry(id))
    }

    pub fn lookup(&self, vehicle: VehicleId) -> Option<QueueId> {
        self.by_vehicle.get(&vehicle).copied()
    }

    /// Nearest earlier entry that `id` schedules behind. Yielding entries of
    /// the other approach are passed over.
    pub fn predecessor(&self, id: QueueId) -> Option<&QueueEntry> {
        let me = self.entry(id).ok()?;
        self.entries[..(id.0 as usize - 1)]
            .iter()
            .rev()
            .find(|e| !Self::transparent(e, me))
    }

    fn transparent(ahead: &QueueEntry, me: &QueueEntry) -> bool {
        ahead.yielding && ahead.approach != me.approach
    }

    /// Marks an entry as waiting for (or done waiting for) a gap.
    pub fn set_yielding(&mut self, id: QueueId, yielding: bool) -> Result<(), CoordinatorError> {
        self.entry_mut(id)?.yielding = yielding;
        Ok(())
    }

    pub fn active_len(&self) -> usize {
        self.active
    }

    pub fn log(&self) -> &[QueueEvent] {
        &self.log
    }

    fn record(&mut self, t: f64, kind: QueueEventKind, id: QueueId) {
        if let Ok(entry) = self.entry(id) {
            let entry = entry.clone();
            self.log.push(QueueEvent { t, kind, entry });
        }
    }

    fn basis_at_entry(&self, entry: &QueueEntry) -> ScheduleBasis {
        ScheduleBasis {
            t_ref: entry.t0,
            remaining: self.geom.control_zone_length,
            vbar: entry.vbar,
        }
    }

    /// Basis from a vehicle's current state, used when a CAV replans
    /// mid-zone.
    pub fn basis_from_state(&self, state: &VehicleState, now: f64) -> ScheduleBasis {
        ScheduleBasis {
            t_ref: now,
            remaining: (self.geom.control_exit() - state.s()).max(0.0),
            vbar: 0.5 * (state.v + self.geom.roundabout_speed),
        }
    }

    /// Appends a vehicle crossing the control-zone entry at `t`.
    pub fn register_arrival(
        &mut self,
        state: &VehicleState,
        t: f64,
    ) -> Result<QueueId, CoordinatorError> {
        if self.by_vehicle.contains_key(&state.id) {
            return Err(CoordinatorError::AlreadyRegistered(state.id));
        }
        let id = QueueId(self.entries.len() as u32 + 1);
        let approach = state.approach();
        let entry = QueueEntry {
            id,
            vehicle: state.id,
            vclass: state.vclass,
            approach,
            t0: t,
            v0: state.v,
            lambda: approach.lambda(),
            vbar: 0.5 * (state.v + self.geom.roundabout_speed),
            tm: None,
            tz: None,
            tf_exit: None,
            merge_entry: None,
            estimated: state.vclass == VehicleClass::Human,
            bound_at_plan: None,
            yielding: state.vclass == VehicleClass::Human && approach.yields(),
        };
        self.entries.push(entry);
        self.by_vehicle.insert(state.id, id);
        self.active += 1;
        self.record(t, QueueEventKind::Register, id);

        let entry = self.entry(id)?.clone();
        let (tm, pred_tm) = match state.vclass {
            VehicleClass::Human => (
                estimate_human_merge_time(state, &self.geom, t, self.follow_up_time),
                None,
            ),
            VehicleClass::Cav => match self.predecessor(id) {
                Some(pred) if !self.everything_ahead_released(id) => (
                    self.schedule_merge_time(&entry, pred)?,
                    Some(self.follow_bound(&entry, pred)?),
                ),
                _ => (self.first_vehicle_merge_time(&entry), None),
            },
        };
        self.assign(id, tm, pred_tm)?;
        self.record(t, QueueEventKind::Assign, id);
        Ok(id)
    }

    /// Desired exit for a vehicle that starts the recursion: keep the entry
    /// speed, limited to the admissible speed window.
    pub fn first_vehicle_merge_time(&self, entry: &QueueEntry) -> f64 {
        let l = self.geom.control_zone_length;
        let offset = self.merge_offset(entry.approach);
        let earliest = entry.t0 + l / self.limits.v_max + offset;
        let latest = entry.t0 + l / self.limits.v_min + offset;
        (entry.t0 + l / entry.v0.max(self.limits.v_min) + offset).clamp(earliest, latest)
    }

    pub fn schedule_merge_time(
        &self,
        entry: &QueueEntry,
        pred: &QueueEntry,
    ) -> Result<f64, CoordinatorError> {
        self.schedule_merge_time_from(entry, pred, self.basis_at_entry(entry))
    }

    /// Merge time against `pred` with the speed-window bounds taken from
    /// `basis`.
    pub fn schedule_merge_time_from(
        &self,
        entry: &QueueEntry,
        pred: &QueueEntry,
        basis: ScheduleBasis,
    ) -> Result<f64, CoordinatorError> {
        let follow = self.follow_bound(entry, pred)?;
        let offset = self.merge_offset(entry.approach);
        let ScheduleBasis {
            t_ref,
            remaining,
            vbar,
        } = basis;
        let latest = t_ref + remaining / self.limits.v_min + offset;
        let mean = t_ref + remaining / vbar + offset;
        let earliest = t_ref + remaining / self.limits.v_max + offset;
        Ok(follow.min(latest).max(mean).max(earliest))
    }

    /// Earliest merge time the ordering allows: the predecessor's slot plus
    /// separation.
    pub fn follow_bound(
        &self,
        entry: &QueueEntry,
        pred: &QueueEntry,
    ) -> Result<f64, CoordinatorError> {
        let in_between_transparent = (pred.id.0 + 1..entry.id.0).all(|k| {
            self.entries
                .get(k as usize - 1)
                .is_some_and(|e| Self::transparent(e, entry))
        });
        if pred.id.0 >= entry.id.0 || !in_between_transparent {
            return Err(CoordinatorError::SchedulingOrderViolated(format!(
                "entry {} scheduled against {} instead of its immediate predecessor",
                entry.id, pred.id
            )));
        }
        let pred_tm = pred.tm.ok_or_else(|| {
            CoordinatorError::SchedulingOrderViolated(format!(
                "predecessor {} has no merge time",
                pred.id
            ))
        })?;
        // A human predecessor's estimate can fall before an earlier CAV's
        // slot, so earlier planned slots bound the result as well.
        let ahead = self.entries[..(entry.id.0 as usize - 1).min(self.entries.len())]
            .iter()
            .filter(|e| !e.estimated && e.merge_entry.is_none() && !Self::transparent(e, entry))
            .filter_map(|e| e.tm.map(|tm| tm + self.separation(e, entry)))
            .fold(f64::NEG_INFINITY, f64::max);
        Ok((pred_tm + self.separation(pred, entry)).max(ahead))
    }

    /// Current ordering bound for a queued entry, if it has a predecessor.
    pub fn current_bound(&self, id: QueueId) -> Result<Option<f64>, CoordinatorError> {
        let entry = self.entry(id)?;
        match self.predecessor(id) {
            Some(pred) if pred.tm.is_some() && !self.everything_ahead_released(id) => {
                Ok(Some(self.follow_bound(entry, pred)?))
            }
            _ => Ok(None),
        }
    }

    /// Switches an entry between a tracked command and an estimate.
    pub fn set_estimated(&mut self, id: QueueId, estimated: bool) -> Result<(), CoordinatorError> {
        self.entry_mut(id)?.estimated = estimated;
        Ok(())
    }

    fn separation(&self, ahead: &QueueEntry, entry: &QueueEntry) -> f64 {
        let v_r = self.geom.roundabout_speed;
        if ahead.approach == entry.approach {
            self.safety.safe_distance(v_r) / v_r
        } else {
            self.geom.merging_zone_arc / v_r
        }
    }

    /// Sets `tm` and derives `tz` so that `tm - tz` is exactly the offset.
    pub fn assign(
        &mut self,
        id: QueueId,
        tm: f64,
        bound: Option<f64>,
    ) -> Result<(), CoordinatorError> {
        let offset = self.merge_offset(self.entry(id)?.approach);
        let entry = self.entry_mut(id)?;
        let tz = quantize(tm - offset);
        entry.tz = Some(tz);
        entry.tm = Some(tz + offset);
        entry.bound_at_plan = bound;
        Ok(())
    }

    /// Recomputes a CAV's merge time against its predecessor from its current
    /// state and logs the replan.
    pub fn reschedule(
        &mut self,
        id: QueueId,
        state: &VehicleState,
        now: f64,
    ) -> Result<f64, CoordinatorError> {
        let entry = self.entry(id)?.clone();
        let basis = self.basis_from_state(state, now);
        let (tm, pred_tm) = match self.predecessor(id) {
            Some(pred) if pred.tm.is_some() && !self.everything_ahead_released(id) => (
                self.schedule_merge_time_from(&entry, pred, basis)?,
                Some(self.follow_bound(&entry, pred)?),
            ),
            _ => {
                let offset = self.merge_offset(entry.approach);
                let earliest = basis.t_ref + basis.remaining / self.limits.v_max + offset;
                let latest = basis.t_ref + basis.remaining / self.limits.v_min + offset;
                (
                    (basis.t_ref + basis.remaining / basis.vbar + offset).clamp(earliest, latest),
                    None,
                )
            }
        };
        self.assign(id, tm, pred_tm)?;
        self.record(now, QueueEventKind::Replan, id);
        Ok(self.entry(id)?.tm.expect("just assigned"))
    }

    fn everything_ahead_released(&self, id: QueueId) -> bool {
        let Ok(me) = self.entry(id) else { return true };
        self.entries[..(id.0 as usize - 1)]
            .iter()
            .all(|e| e.is_released() || Self::transparent(e, me))
    }

    /// Updates a human vehicle's estimated merge time.
    pub fn update_estimate(&mut self, id: QueueId, tm_est: f64) -> Result<(), CoordinatorError> {
        self.assign(id, tm_est, None)
    }

    /// Stores the observed merging-zone entry time; for human vehicles the
    /// estimate becomes the observation.
    pub fn observe_merge_entry(&mut self, id: QueueId, t: f64) -> Result<(), CoordinatorError> {
        let estimated = self.entry(id)?.estimated;
        if estimated {
            self.assign(id, t, None)?;
        }
        self.entry_mut(id)?.merge_entry = Some(t);
        Ok(())
    }

    /// Minimum-energy plan from the vehicle's current state to the
    /// control-zone exit at `tz`, arriving at the roundabout speed.
    pub fn plan(
        &self,
        entry: &QueueEntry,
        state: &VehicleState,
        now: f64,
    ) -> Result<PlanReport, CoordinatorError> {
        let tz = entry.tz.ok_or_else(|| {
            CoordinatorError::SchedulingOrderViolated(format!(
                "entry {} has no exit time to plan for",
                entry.id
            ))
        })?;
        let bc = BoundaryConditions {
            t0: now,
            tf: tz,
            p0: state.s() - self.geom.control_entry(),
            v0: state.v,
            pf: self.geom.control_zone_length,
            vf: self.geom.roundabout_speed,
        };
        let coeffs = trajectory::solve_cubic(&bc)?;
        let violations = coeffs.check_feasible(&self.limits);
        Ok(PlanReport { coeffs, violations })
    }

    pub fn release(&mut self, id: QueueId, t: f64) -> Result<(), CoordinatorError> {
        let entry = self.entry_mut(id)?;
        if entry.tf_exit.is_some() {
            return Err(CoordinatorError::AlreadyReleased(id));
        }
        entry.tf_exit = Some(t);
        self.active -= 1;
        self.record(t, QueueEventKind::Release, id);
        Ok(())
    }

    /// Position of a vehicle measured from the control-zone entry.
    pub fn control_position(&self, pos: RoutePosition) -> f64 {
        pos.s - self.geom.control_entry()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn coordinator() -> Coordinator {
        Coordinator::new(
            RoundaboutGeometry::default(),
            ActuationLimits::default(),
            SafetyParams::default(),
            3.2,
        )
    }

    fn cav(id: u32, approach: Approach, v: f64) -> VehicleState {
        VehicleState::new(VehicleId(id), VehicleClass::Cav, approach, 20.0, v, 0.0)
    }

    fn entry(id: u32, approach: Approach, t0: f64, v0: f64, tm: Option<f64>) -> QueueEntry {
        QueueEntry {
            id: QueueId(id),
            vehicle: VehicleId(id),
            vclass: VehicleClass::Cav,
            approach,
            t0,
            v0,
            lambda: approach.lambda(),
            vbar: 0.5 * (v0 + 8.9),
            tm,
            tz: None,
            tf_exit: None,
            merge_entry: None,
            estimated: false,
            bound_at_plan: None,
            yielding: false,
        }
    }

    #[test]
    fn safe_distance_examples() {
        let p = SafetyParams::default();
        assert_eq!(p.safe_distance(0.0), 1.5);
        assert_relative_eq!(p.safe_distance(8.9), 12.18, epsilon = 1e-12);
        assert_relative_eq!(p.safe_distance(15.6), 20.22, epsilon = 1e-12);
    }

    #[test]
    fn first_vehicle_eastbound() {
        let mut c = coordinator();
        let id = c
            .register_arrival(&cav(7, Approach::Eastbound, 15.6), 0.0)
            .unwrap();
        assert_eq!(id, QueueId(1));
        let e = c.entry(id).unwrap();
        assert_relative_eq!(e.tm.unwrap(), 300.0 / 15.6, epsilon = 1e-6);
        assert_eq!(e.tz, e.tm);
        assert_relative_eq!(e.vbar, 12.25);
    }

    #[test]
    fn first_vehicle_westbound() {
        let mut c = coordinator();
        let id = c
            .register_arrival(&cav(1, Approach::Westbound, 15.6), 0.0)
            .unwrap();
        let e = c.entry(id).unwrap();
        assert_relative_eq!(e.tm.unwrap(), 30.467, epsilon = 1e-3);
        assert_eq!(
            e.tm.unwrap() - e.tz.unwrap(),
            c.merge_offset(Approach::Westbound)
        );
    }

    #[test]
    fn duplicate_registration() {
        let mut c = coordinator();
        let v = cav(1, Approach::Eastbound, 15.6);
        c.register_arrival(&v, 0.0).unwrap();
        assert_eq!(
            c.register_arrival(&v, 1.0),
            Err(CoordinatorError::AlreadyRegistered(VehicleId(1)))
        );
    }

    #[test]
    fn same_road_schedule() {
        let c = coordinator();
        let pred = entry(1, Approach::Eastbound, 30.0, 15.6, Some(50.0));
        let e = entry(2, Approach::Eastbound, 40.0, 15.6, None);
        assert_relative_eq!(
            c.schedule_merge_time(&e, &pred).unwrap(),
            40.0 + 300.0 / 12.25,
            epsilon = 1e-9
        );
        assert_relative_eq!(
            c.schedule_merge_time(&e, &pred).unwrap(),
            64.490,
            epsilon = 1e-3
        );
    }

    #[test]
    fn different_road_schedule() {
        let c = coordinator();
        let pred = entry(1, Approach::Westbound, 30.0, 15.6, Some(50.0));
        let e = entry(2, Approach::Eastbound, 40.0, 15.6, None);
        assert_relative_eq!(
            c.schedule_merge_time(&e, &pred).unwrap(),
            64.490,
            epsilon = 1e-3
        );

        let dense = entry(1, Approach::Westbound, 30.0, 15.6, Some(70.0));
        assert_relative_eq!(
            c.schedule_merge_time(&e, &dense).unwrap(),
            71.348,
            epsilon = 1e-3
        );

        let same = entry(1, Approach::Eastbound, 30.0, 15.6, Some(70.0));
        assert_relative_eq!(
            c.schedule_merge_time(&e, &same).unwrap(),
            70.0 + 12.18 / 8.9,
            epsilon = 1e-9
        );
    }

    #[test]
    fn yielding_entries_are_transparent_to_the_other_approach() {
        let mut c = coordinator();
        let human = VehicleState::new(
            VehicleId(1),
            VehicleClass::Human,
            Approach::Eastbound,
            20.0,
            15.6,
            0.0,
        );
        let h = c.register_arrival(&human, 0.0).unwrap();
        assert!(c.entry(h).unwrap().yielding);

        let w = c
            .register_arrival(&cav(2, Approach::Westbound, 15.6), 1.0)
            .unwrap();
        assert!(c.predecessor(w).is_none());
        // Nothing visible ahead: the westbound CAV keeps its own pace.
        let first = c.first_vehicle_merge_time(c.entry(w).unwrap());
        assert_eq!(c.entry(w).unwrap().tm, Some(quantize(first)));

        let e = c
            .register_arrival(&cav(3, Approach::Eastbound, 15.6), 2.0)
            .unwrap();
        assert_eq!(c.predecessor(e).map(|p| p.id), Some(w));

        c.set_yielding(h, false).unwrap();
        assert_eq!(c.predecessor(w).map(|p| p.id), Some(h));
    }

    #[test]
    fn latest_bound_caps_predecessor_term() {
        let c = coordinator();
        let pred = entry(1, Approach::Eastbound, 0.0, 15.6, Some(10_000.0));
        let e = entry(2, Approach::Eastbound, 40.0, 15.6, None);
        assert_relative_eq!(
            c.schedule_merge_time(&e, &pred).unwrap(),
            340.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn scheduling_errors() {
        let c = coordinator();
        let pred = entry(1, Approach::Eastbound, 30.0, 15.6, None);
        let e = entry(2, Approach::Eastbound, 40.0, 15.6, None);
        assert!(matches!(
            c.schedule_merge_time(&e, &pred),
            Err(CoordinatorError::SchedulingOrderViolated(_))
        ));
        let far = entry(5, Approach::Eastbound, 40.0, 15.6, None);
        let pred = entry(1, Approach::Eastbound, 30.0, 15.6, Some(1.0));
        assert!(matches!(
            c.schedule_merge_time(&far, &pred),
            Err(CoordinatorError::SchedulingOrderViolated(_))
        ));
    }

    #[test]
    fn human_estimates() {
        let g = RoundaboutGeometry::default();
        let mut h = VehicleState::new(
            VehicleId(1),
            VehicleClass::Human,
            Approach::Eastbound,
            170.0,
            15.6,
            0.0,
        );
        assert_relative_eq!(
            estimate_human_merge_time(&h, &g, 12.0, 3.2),
            21.615,
            epsilon = 1e-3
        );
        h.pos.s = 318.0;
        h.v = 0.0;
        assert_relative_eq!(
            estimate_human_merge_time(&h, &g, 30.0, 3.2),
            34.548,
            epsilon = 1e-3
        );
        h.pos.s = 170.0;
        h.v = 0.3;
        assert_relative_eq!(
            estimate_human_merge_time(&h, &g, 0.0, 3.2),
            150.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn constant_speed_plan() {
        let mut c = coordinator();
        let v = cav(1, Approach::Eastbound, 8.9);
        let id = c.register_arrival(&v, 0.0).unwrap();
        let e = c.entry(id).unwrap();
        assert_relative_eq!(e.tz.unwrap(), 300.0 / 8.9, epsilon = 1e-6);
        let plan = c.plan(e, &v, 0.0).unwrap();
        assert!(plan.coeffs.a.abs() < 1e-6 && plan.coeffs.b.abs() < 1e-6);
        assert!(plan.violations.is_empty());
    }

    #[test]
    fn decelerating_plan_and_mid_zone_replan() {
        let mut c = coordinator();
        let mut v = cav(1, Approach::Eastbound, 15.6);
        let id = c.register_arrival(&v, 0.0).unwrap();
        c.assign(id, 24.490, None).unwrap();
        let e = c.entry(id).unwrap().clone();
        let plan = c.plan(&e, &v, 0.0).unwrap();
        let end = plan.coeffs.eval(e.tz.unwrap()).unwrap();
        assert!((end.p - 300.0).abs() < 1e-6 && (end.v - 8.9).abs() < 1e-6);

        v.pos.s = 170.0;
        v.v = 11.0;
        let replan = c.plan(&e, &v, 10.0).unwrap();
        let start = replan.coeffs.eval(10.0).unwrap();
        assert_relative_eq!(start.p, 150.0, epsilon = 1e-9);
        assert_relative_eq!(start.v, 11.0, epsilon = 1e-9);
    }

    #[test]
    fn plan_degenerate_horizon() {
        let mut c = coordinator();
        let v = cav(1, Approach::Eastbound, 15.6);
        let id = c.register_arrival(&v, 0.0).unwrap();
        let e = c.entry(id).unwrap().clone();
        let late = e.tz.unwrap();
        assert!(matches!(
            c.plan(&e, &v, late),
            Err(CoordinatorError::Trajectory(
                TrajectoryError::DegenerateHorizon { .. }
            ))
        ));
    }

    #[test]
    fn release_twice() {
        let mut c = coordinator();
        let id = c
            .register_arrival(&cav(1, Approach::Eastbound, 15.6), 0.0)
            .unwrap();
        c.release(id, 20.0).unwrap();
        assert_eq!(c.entry(id).unwrap().tf_exit, Some(20.0));
        assert_eq!(c.active_len(), 0);
        assert_eq!(
            c.release(id, 21.0),
            Err(CoordinatorError::AlreadyReleased(id))
        );
    }

    proptest! {
        #[test]
        fn fifo_queue_properties(arrivals in proptest::collection::vec((0.0f64..6.0, any::<bool>(), 8.0f64..15.6), 1..60)) {
            let mut c = coordinator();
            let mut t = 0.0;
            for (k, (gap, wb, v0)) in arrivals.iter().enumerate() {
                t += gap + 1e-3;
                let approach = if *wb { Approach::Westbound } else { Approach::Eastbound };
                c.register_arrival(&cav(k as u32 + 1, approach, *v0), t).unwrap();
            }
            let l = 300.0;
            let entries = c.entries();
            for (i, e) in entries.iter().enumerate() {
                let tm = e.tm.unwrap();
                let tz = e.tz.unwrap();
                let offset = c.merge_offset(e.approach);
                prop_assert_eq!(tm - tz, offset);
                prop_assert!(e.t0 < tz && tz <= tm);
                prop_assert_eq!(e.lambda == 0, e.approach == Approach::Eastbound);
                prop_assert!(tm >= e.t0 + l / 15.6 + offset - 1e-5);
                prop_assert!(tm <= e.t0 + l / 1.0 + offset + 1e-5);
                if i > 0 {
                    let prev = &entries[i - 1];
                    prop_assert!(prev.t0 < e.t0);
                    prop_assert!(tm >= prev.tm.unwrap());
                    let sep = if prev.approach == e.approach { 12.18 / 8.9 } else { 12.0 / 8.9 };
                    prop_assert!(tm - prev.tm.unwrap() >= sep - 1e-5);
                }
            }
        }
    }
}
