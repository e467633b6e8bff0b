use std::collections::VecDeque;

use super::log::{EventKind, RunLog, SimEvent, TrajectorySample, VehicleRecord};
use super::{generate_arrivals, Arrival, EngineError, ModelParams, SimConfig};
use crate::coordinator::{estimate_human_merge_time, Coordinator, QueueId};
use crate::driver_model::{
    self, car_following_accel, cav_safety_switch, Conflicting, GapDecision, Leader,
};
use crate::geometry::{Approach, RoundaboutGeometry, Zone};
use crate::metrics::fuel_rate;
use crate::trajectory::{KinematicSample, TrajectoryCoefficients};
use crate::vehicle::{Mode, VehicleClass, VehicleId, VehicleState};

/// Minimum distance before the control-zone exit at which a CAV may still
/// (re)plan a trajectory.
const REPLAN_MARGIN: f64 = 10.0;
/// Shortest stay in follow mode before returning to optimal control, s.
const MIN_FOLLOW_DWELL: f64 = 1.0;

#[derive(Debug, Clone)]
struct Agent {
    state: VehicleState,
    queue: Option<QueueId>,
    plan: Option<TrajectoryCoefficients>,
    /// Inside the yield decision area of the eastbound entry.
    deciding: bool,
    /// Accepted a gap (eastbound vehicles not under optimal control).
    proceeded: bool,
    /// Position in the order of merging-zone entries.
    merge_rank: Option<u64>,
    /// Leader that put this CAV into follow mode.
    follow_target: Option<VehicleId>,
    /// Gave way to the priority stream; stays in follow mode until merged.
    gave_way: bool,
    /// Time of the last mode change.
    mode_since: f64,
}

impl Agent {
    /// Whether the vehicle holds the right to enter the merging zone.
    fn committed(&self) -> bool {
        self.state.approach() == Approach::Westbound
            || self.proceeded
            || self.state.mode == Mode::OptimalControl
    }
}

#[derive(Debug, Clone, Copy)]
struct Snap {
    approach: Approach,
    s: f64,
    v: f64,
    /// Signed distance past the merging-zone entry.
    m: f64,
    vclass: VehicleClass,
    committed: bool,
    /// CAV under optimal control, with its place in the merge sequence.
    scheduled: Option<u32>,
    /// Drives by car following inside the network (humans, CAVs in follow
    /// mode).
    following: bool,
}

#[derive(Debug, Clone, Copy)]
struct Crossing {
    t: f64,
    agent: usize,
    boundary: Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Boundary {
    ControlEntry,
    MergeEntry,
    MergeExit,
    RouteEnd,
}

/// Vehicles currently inside the merging zone.
pub fn merging_zone_occupancy(
    states: &[VehicleState],
    geom: &RoundaboutGeometry,
) -> Vec<(VehicleId, Approach)> {
    states
        .iter()
        .filter(|v| matches!(geom.zone_of(v.pos), Ok(Zone::MergingZone)))
        .map(|v| (v.id, v.approach()))
        .collect()
}

pub struct World {
    cfg: SimConfig,
    params: ModelParams,
    coordinator: Coordinator,
    pending: [VecDeque<(VehicleId, Arrival)>; 2],
    agents: Vec<Agent>,
    records: Vec<VehicleRecord>,
    step_index: u64,
    events: Vec<SimEvent>,
    trajectories: Vec<TrajectorySample>,
    window_fuel: Vec<[f64; 2]>,
    last_proceed: Option<f64>,
    merge_counter: u64,
    exited: usize,
    delay_logged: Vec<bool>,
}

impl World {
    pub fn new(cfg: SimConfig, params: ModelParams) -> Result<Self, EngineError> {
        let schedule = generate_arrivals(&cfg)?;
        let mut all: Vec<(Approach, Arrival)> = Approach::ALL
            .iter()
            .flat_map(|&a| schedule[a.index()].iter().map(move |arr| (a, *arr)))
            .collect();
        all.sort_by(|x, y| x.1.t.total_cmp(&y.1.t).then(x.0.cmp(&y.0)));

        let mut pending: [VecDeque<(VehicleId, Arrival)>; 2] = [VecDeque::new(), VecDeque::new()];
        let mut records = Vec::with_capacity(all.len());
        for (k, (approach, arrival)) in all.into_iter().enumerate() {
            let id = VehicleId(k as u32 + 1);
            pending[approach.index()].push_back((id, arrival));
            records.push(VehicleRecord {
                id,
                vclass: arrival.vclass,
                approach,
                t_spawn: arrival.t,
                t_insert: None,
                t_enter_control: None,
                tm: None,
                tz: None,
                t_merge_entry: None,
                tf_exit: None,
                t_exit_network: None,
                fuel_ml: 0.0,
                min_speed_before_merge: None,
                mode_changes: 0,
            });
        }
        let total = records.len();
        let windows = (cfg.duration / cfg.aggregate_every).ceil() as usize;
        let coordinator = Coordinator::new(
            params.geometry.clone(),
            params.limits.clone(),
            params.safety.clone(),
            params.driver.follow_up_time,
        );
        let mut world = Self {
            cfg,
            params,
            coordinator,
            pending,
            agents: Vec::new(),
            records,
            step_index: 0,
            events: Vec::new(),
            trajectories: Vec::new(),
            window_fuel: vec![[0.0; 2]; windows.max(1)],
            last_proceed: None,
            merge_counter: 0,
            exited: 0,
            delay_logged: vec![false; total],
        };
        world.log_samples();
        Ok(world)
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.cfg.step
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &VehicleState> {
        self.agents.iter().map(|a| &a.state)
    }

    pub fn coordinator(&self) -> &Coordinator {
        &self.coordinator
    }

    pub fn occupancy(&self) -> Vec<(VehicleId, Approach)> {
        let states: Vec<VehicleState> = self.vehicles().cloned().collect();
        merging_zone_occupancy(&states, &self.params.geometry)
    }

    fn event(&mut self, t: f64, vehicle: VehicleId, kind: EventKind, detail: impl Into<String>) {
        self.events.push(SimEvent {
            t,
            vehicle,
            kind,
            detail: detail.into(),
        });
    }

    fn record(&mut self, id: VehicleId) -> &mut VehicleRecord {
        &mut self.records[id.0 as usize - 1]
    }

    fn set_mode(&mut self, idx: usize, mode: Mode, t: f64, reason: &str) {
        let old = self.agents[idx].state.mode;
        if old == mode {
            return;
        }
        self.agents[idx].state.mode = mode;
        self.agents[idx].mode_since = t;
        if let Some(q) = self.agents[idx].queue {
            // Off the plan, the slot is only a guess at when the vehicle arrives.
            let _ = self
                .coordinator
                .set_estimated(q, mode != Mode::OptimalControl);
        }
        let id = self.agents[idx].state.id;
        self.record(id).mode_changes += 1;
        self.event(
            t,
            id,
            EventKind::ModeChange,
            format!("{old}->{mode} ({reason})"),
        );
    }

    fn spawn(&mut self, t: f64) {
        let geom = &self.params.geometry;
        let entry_speed = geom.entry_speed_limit;
        let clearance = self.params.safety.standstill + 2.0;
        for approach in Approach::ALL {
            while let Some(&(id, arrival)) = self.pending[approach.index()].front() {
                if arrival.t > t {
                    break;
                }
                let rear = self
                    .agents
                    .iter()
                    .filter(|a| a.state.approach() == approach)
                    .min_by(|x, y| x.state.s().total_cmp(&y.state.s()))
                    .map(|a| (a.state.s(), a.state.v));
                let mut s = entry_speed * (t - arrival.t);
                let mut v = entry_speed;
                if let Some((rear_s, rear_v)) = rear {
                    if rear_s < clearance {
                        if !self.delay_logged[id.0 as usize - 1] {
                            self.delay_logged[id.0 as usize - 1] = true;
                            self.event(
                                t,
                                id,
                                EventKind::SpawnDelayed,
                                format!("rear vehicle at {rear_s:.2} m"),
                            );
                        }
                        break;
                    }
                    s = s.min(rear_s - clearance);
                    if rear_s - s < self.params.safety.safe_distance(entry_speed) {
                        v = v.min(rear_v);
                    }
                }
                self.pending[approach.index()].pop_front();
                let state = VehicleState::new(id, arrival.vclass, approach, s, v, arrival.t);
                self.agents.push(Agent {
                    state,
                    queue: None,
                    plan: None,
                    deciding: false,
                    proceeded: false,
                    merge_rank: None,
                    follow_target: None,
                    gave_way: false,
                    mode_since: t,
                });
                self.record(id).t_insert = Some(t);
                self.event(
                    t,
                    id,
                    EventKind::Spawn,
                    format!("{} {approach} s={s:.3}", arrival.vclass),
                );
            }
        }
    }

    fn snapshot(&self) -> Vec<Snap> {
        let geom = &self.params.geometry;
        self.agents
            .iter()
            .map(|a| Snap {
                approach: a.state.approach(),
                s: a.state.s(),
                v: a.state.v,
                m: a.state.s() - geom.merge_entry(a.state.approach()),
                vclass: a.state.vclass,
                committed: a.committed(),
                following: a.state.vclass == VehicleClass::Human || a.state.mode == Mode::Follow,
                scheduled: a
                    .queue
                    .filter(|_| a.state.mode == Mode::OptimalControl)
                    .map(|q| q.0),
            })
            .collect()
    }

    /// Per approach, agent indices sorted by ascending position.
    fn ordering(snaps: &[Snap]) -> [Vec<usize>; 2] {
        let mut order: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for (i, s) in snaps.iter().enumerate() {
            order[s.approach.index()].push(i);
        }
        for list in &mut order {
            list.sort_by(|&x, &y| snaps[x].s.total_cmp(&snaps[y].s).then(x.cmp(&y)));
        }
        order
    }

    /// Nearest vehicle ahead: same-approach vehicles, other-approach
    /// vehicles already in the shared segment past the merge entry, and
    /// committed vehicles of the other approach projected onto this one
    /// near the merge.
    fn leaders(&self, snaps: &[Snap], order: &[Vec<usize>; 2]) -> Vec<Option<(usize, f64)>> {
        let lookahead = self.params.control.merge_lookahead;
        let mut rank = vec![0usize; snaps.len()];
        for list in order {
            for (r, &i) in list.iter().enumerate() {
                rank[i] = r;
            }
        }
        (0..snaps.len())
            .map(|i| {
                let me = snaps[i];
                let same = &order[me.approach.index()];
                let mut best: Option<(usize, f64)> =
                    same.get(rank[i] + 1).map(|&j| (j, snaps[j].s - me.s));

                let other = &order[me.approach.other().index()];
                let start = other.partition_point(|&j| snaps[j].m <= me.m);
                for &j in &other[start..] {
                    let them = snaps[j];
                    let visible = them.m >= 0.0
                        || (them.m >= -lookahead
                            && match me.approach {
                                // The circulating stream has priority: humans
                                // give way only to entering vehicles that
                                // accepted a gap, scheduled CAVs also to
                                // CAVs scheduled ahead of them.
                                Approach::Westbound => {
                                    them.committed
                                        && match (them.scheduled, self.agents[i].queue) {
                                            (None, _) => true,
                                            (Some(theirs), Some(mine)) => {
                                                me.vclass == VehicleClass::Cav && theirs < mine.0
                                            }
                                            (Some(_), None) => false,
                                        }
                                }
                                Approach::Eastbound => me.committed,
                            });
                    if visible {
                        let gap = them.m - me.m;
                        if best.is_none_or(|(_, g)| gap < g) {
                            best = Some((j, gap));
                        }
                        break;
                    }
                }
                best
            })
            .collect()
    }

    /// Re-estimates human merge times and replans CAVs whose predecessor
    /// time drifted.
    fn maintain_queue(&mut self, t: f64) -> Result<(), EngineError> {
        let geom = self.params.geometry.clone();
        let follow_up = self.params.driver.follow_up_time;
        let mut by_queue: Vec<(QueueId, usize)> = self
            .agents
            .iter()
            .enumerate()
            .filter_map(|(i, a)| a.queue.map(|q| (q, i)))
            .collect();
        by_queue.sort();

        // An entering vehicle queued behind one that has not accepted a gap
        // cannot merge before it either.
        let mut eastbound: Vec<usize> = (0..self.agents.len())
            .filter(|&i| self.agents[i].state.approach().yields() && self.agents[i].queue.is_some())
            .collect();
        eastbound.sort_by(|&a, &b| {
            self.agents[b]
                .state
                .s()
                .total_cmp(&self.agents[a].state.s())
        });
        let mut blocked = false;
        for i in eastbound {
            let agent = &self.agents[i];
            let q = agent.queue.expect("filtered on queue");
            if self.coordinator.entry(q)?.merge_entry.is_some() {
                continue;
            }
            blocked |= !agent.committed();
            self.coordinator.set_yielding(q, blocked)?;
        }

        for &(q, i) in &by_queue {
            let agent = &self.agents[i];
            let entry = self.coordinator.entry(q)?;
            if entry.merge_entry.is_some() {
                continue;
            }
            match (agent.state.vclass, agent.state.mode) {
                (VehicleClass::Human, _) | (VehicleClass::Cav, Mode::Follow) => {
                    let est = estimate_human_merge_time(&agent.state, &geom, t, follow_up);
                    self.coordinator.update_estimate(q, est)?;
                }
                (VehicleClass::Cav, Mode::OptimalControl) => {
                    if agent.state.s() > geom.control_exit() - REPLAN_MARGIN {
                        continue;
                    }
                    let at_plan = entry.bound_at_plan;
                    let now = self.coordinator.current_bound(q)?;
                    let drift = match (at_plan, now) {
                        (Some(a), Some(b)) => (a - b).abs() > self.params.control.replan_threshold,
                        (None, None) => false,
                        _ => true,
                    };
                    if drift {
                        let fmt =
                            |b: Option<f64>| b.map_or("none".to_string(), |b| format!("{b:.3}"));
                        self.replan(
                            i,
                            t,
                            &format!("ordering bound {}->{}", fmt(at_plan), fmt(now)),
                        )?;
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn replan(&mut self, i: usize, t: f64, reason: &str) -> Result<(), EngineError> {
        let q = self.agents[i].queue.expect("replanned vehicle is queued");
        let state = self.agents[i].state.clone();
        self.coordinator.reschedule(q, &state, t)?;
        self.plan_vehicle(i, q, &state, t, EventKind::Replan, reason)
    }

    /// Plans the trajectory for the current merge time. An infeasible plan is
    /// moved to the mean-speed time if that violates fewer bounds.
    fn plan_vehicle(
        &mut self,
        i: usize,
        q: QueueId,
        state: &VehicleState,
        t: f64,
        kind: EventKind,
        reason: &str,
    ) -> Result<(), EngineError> {
        let entry = self.coordinator.entry(q)?.clone();
        let mut report = match self.coordinator.plan(&entry, state, t) {
            Ok(report) => report,
            Err(e) => {
                self.event(t, state.id, EventKind::PlanInfeasible, e.to_string());
                self.set_mode(i, Mode::Follow, t, "no feasible plan");
                return Ok(());
            }
        };
        if !report.violations.is_empty() {
            let basis = self.coordinator.basis_from_state(state, t);
            let offset = self.coordinator.merge_offset(entry.approach);
            let mean = basis.t_ref + basis.remaining / basis.vbar + offset;
            if entry.tm.is_some_and(|tm| tm < mean) {
                self.coordinator.assign(q, mean, entry.bound_at_plan)?;
                match self.coordinator.plan(self.coordinator.entry(q)?, state, t) {
                    Ok(retimed) if retimed.violations.len() < report.violations.len() => {
                        report = retimed
                    }
                    _ => {
                        self.coordinator
                            .assign(q, entry.tm.unwrap_or(mean), entry.bound_at_plan)?
                    }
                }
            }
        }

        let tm = self.coordinator.entry(q)?.tm.unwrap_or(f64::NAN);
        self.agents[i].plan = Some(report.coeffs);
        self.event(t, state.id, kind, format!("tm={tm:.3} {reason}"));
        self.report_violations(t, state.id, &report.violations);
        Ok(())
    }

    fn report_violations(
        &mut self,
        t: f64,
        id: VehicleId,
        violations: &[crate::trajectory::Violation],
    ) {
        if violations.is_empty() {
            return;
        }
        let detail = violations
            .iter()
            .map(|v| format!("{}@{:.2}={:.3}", v.bound, v.t, v.value))
            .collect::<Vec<_>>()
            .join(";");
        self.event(t, id, EventKind::PlanInfeasible, detail);
    }

    /// Reference state of a CAV under optimal control, in control-zone
    /// coordinates: the plan up to `tz`, then cruise at the roundabout speed.
    fn reference(&self, agent: &Agent, t: f64) -> Option<KinematicSample> {
        let plan = agent.plan.as_ref()?;
        if t <= plan.valid_to {
            return Some(plan.sample(t));
        }
        let end = plan.sample(plan.valid_to);
        let v_r = self.params.geometry.roundabout_speed;
        Some(KinematicSample {
            p: end.p + v_r * (t - plan.valid_to),
            v: v_r,
            u: 0.0,
        })
    }

    fn decision_distance(&self, v: f64) -> f64 {
        let d = &self.params.driver;
        (d.standstill + v * d.time_headway + v * v / (2.0 * d.comfort_decel)).max(5.0)
    }

    /// An eastbound CAV approaching the yield line checks the unscheduled
    /// vehicles of the priority stream: it must clear the merging zone a safe
    /// headway before any of them arrives.
    fn priority_conflict(
        &self,
        i: usize,
        snaps: &[Snap],
        t: f64,
    ) -> Result<Option<VehicleId>, EngineError> {
        let me = snaps[i];
        if me.approach != Approach::Eastbound || me.m >= 0.0 || -me.m > self.decision_distance(me.v)
        {
            return Ok(None);
        }
        let Some(q) = self.agents[i].queue else {
            return Ok(None);
        };
        let Some(tm) = self.coordinator.entry(q)?.tm else {
            return Ok(None);
        };
        let geom = &self.params.geometry;
        let v_r = geom.roundabout_speed;
        let clear =
            tm - t + geom.merging_zone_arc / v_r + self.params.safety.safe_distance(v_r) / v_r;
        Ok(snaps
            .iter()
            .enumerate()
            .filter(|(_, s)| s.approach == Approach::Westbound && s.following && s.m < 0.0)
            .find(|(_, s)| -s.m / s.v.max(1.0) < clear)
            .map(|(j, _)| self.agents[j].state.id))
    }

    /// Yield-line logic for an eastbound vehicle that does not hold a merge
    /// commitment. Returns the virtual stop-line leader if it must yield.
    fn yield_line(&mut self, i: usize, snaps: &[Snap], t: f64) -> Option<Leader> {
        let me = snaps[i];
        if me.approach != Approach::Eastbound || me.m >= 0.0 || self.agents[i].proceeded {
            return None;
        }
        let distance = -me.m;
        let decision_distance = self.decision_distance(me.v);
        let driver = &self.params.driver;
        if !self.agents[i].deciding && distance <= decision_distance {
            self.agents[i].deciding = true;
        }
        if !self.agents[i].deciding {
            return None;
        }
        let circulating: Vec<Conflicting> = snaps
            .iter()
            .filter(|s| s.approach == Approach::Westbound && s.m < 0.0)
            .map(|s| Conflicting {
                distance_to_merge: -s.m,
                v: s.v,
            })
            .collect();
        let arc = self.params.geometry.merging_zone_arc;
        let empty = !snaps.iter().any(|s| (0.0..arc).contains(&s.m));
        match driver_model::gap_acceptance(&circulating, empty, t, self.last_proceed, driver) {
            GapDecision::Proceed => {
                self.agents[i].proceeded = true;
                self.last_proceed = Some(t);
                let id = self.agents[i].state.id;
                self.event(
                    t,
                    id,
                    EventKind::GapAccepted,
                    format!("d={distance:.2} v={:.2}", me.v),
                );
                None
            }
            GapDecision::Yield => Some(Leader {
                gap: distance,
                speed: 0.0,
            }),
        }
    }

    /// Stop line at the merge while a vehicle of the other approach is inside
    /// the merging zone; only drivers close enough to decide react to it.
    fn zone_hold(&self, i: usize, snaps: &[Snap]) -> Option<Leader> {
        let me = snaps[i];
        if me.m >= 0.0 || -me.m > self.decision_distance(me.v) {
            return None;
        }
        let arc = self.params.geometry.merging_zone_arc;
        snaps
            .iter()
            .any(|s| s.approach != me.approach && (0.0..arc).contains(&s.m))
            .then_some(Leader {
                gap: -me.m,
                speed: 0.0,
            })
    }

    /// Stop line at the merge for a controlled CAV that would reach it before
    /// a conflicting occupant has left the merging zone.
    fn occupied_merge(&self, i: usize, snaps: &[Snap]) -> Option<Leader> {
        let me = snaps[i];
        if me.m >= 0.0 {
            return None;
        }
        let arc = self.params.geometry.merging_zone_arc;
        let slack = self.params.geometry.roundabout_speed * self.cfg.step;
        let arrival = -me.m / me.v.max(0.1);
        snaps
            .iter()
            .filter(|s| s.approach != me.approach && (0.0..arc).contains(&s.m))
            .any(|s| (arc - s.m - slack) / s.v.max(0.1) > arrival)
            .then_some(Leader {
                gap: -me.m,
                speed: 0.0,
            })
    }

    fn follow(&mut self, i: usize, snaps: &[Snap], leader: Option<(usize, f64)>, t: f64) -> f64 {
        let geom = &self.params.geometry;
        let me = snaps[i];
        let zone = geom
            .zone_of(self.agents[i].state.pos)
            .unwrap_or(Zone::ExitLeg);
        let desired = self
            .params
            .driver
            .desired_speed(zone, geom.distance_to_roundabout(me.s));
        let mut lead = leader.map(|(j, gap)| Leader {
            gap,
            speed: snaps[j].v,
        });
        for stop in [self.yield_line(i, snaps, t), self.zone_hold(i, snaps)]
            .into_iter()
            .flatten()
        {
            if lead.is_none_or(|l| stop.gap < l.gap) {
                lead = Some(stop);
            }
        }
        let result = car_following_accel(me.v, lead, &self.params.driver, desired);
        if result.emergency {
            let id = self.agents[i].state.id;
            let detail =
                leader.map(|(j, gap)| format!("leader {} gap {gap:.3}", self.agents[j].state.id));
            self.event(t, id, EventKind::EmergencyBrake, detail.unwrap_or_default());
        }
        result.accel
    }

    fn cav_accel(
        &mut self,
        i: usize,
        snaps: &[Snap],
        leader: Option<(usize, f64)>,
        t: f64,
    ) -> Result<f64, EngineError> {
        let geom = self.params.geometry.clone();
        let me = snaps[i];
        let zone = geom
            .zone_of(self.agents[i].state.pos)
            .unwrap_or(Zone::ExitLeg);
        let controlled = self.agents[i].queue.is_some()
            && self.agents[i].state.mode != Mode::Uncontrolled
            && matches!(
                zone,
                Zone::ControlZone | Zone::CirculatingArc | Zone::MergingZone
            );
        if !controlled {
            if zone == Zone::EntryZone {
                let close =
                    leader.is_some_and(|(_, gap)| gap < self.params.safety.safe_distance(me.v));
                return Ok(if close {
                    self.follow(i, snaps, leader, t)
                } else {
                    0.0
                });
            }
            return Ok(self.follow(i, snaps, leader, t));
        }

        let hysteresis = self.params.control.switch_hysteresis;
        let mode = self.agents[i].state.mode;
        match (mode, leader) {
            // A CAV in follow mode is as unpredictable as the human it follows.
            (Mode::OptimalControl, Some((j, gap))) if snaps[j].following => {
                let next = cav_safety_switch(mode, gap, me.v, &self.params.safety, hysteresis);
                if next == Mode::Follow {
                    self.agents[i].follow_target = Some(self.agents[j].state.id);
                    self.set_mode(
                        i,
                        Mode::Follow,
                        t,
                        &format!(
                            "{} {} at {gap:.2} m",
                            snaps[j].vclass, self.agents[j].state.id
                        ),
                    );
                }
            }
            (Mode::Follow, _) => {
                // Entering follow mode can hide a cross-approach leader, so the
                // gap to the one that triggered the switch still counts.
                let target = self.agents[i].follow_target.and_then(|id| {
                    let j = self.agents.iter().position(|a| a.state.id == id)?;
                    let gap = snaps[j].m - me.m;
                    (gap > 0.0).then_some(gap)
                });
                // An entering CAV back under optimal control would see every
                // circulating vehicle near the merge.
                let lookahead = self.params.control.merge_lookahead;
                let cross = snaps
                    .iter()
                    .filter(|s| s.approach != me.approach && s.m >= -lookahead && s.m > me.m)
                    .map(|s| s.m - me.m)
                    .filter(|_| me.approach == Approach::Eastbound)
                    .fold(f64::INFINITY, f64::min);
                let gap = leader
                    .map_or(f64::INFINITY, |(_, g)| g)
                    .min(target.unwrap_or(f64::INFINITY))
                    .min(cross);
                let next = cav_safety_switch(mode, gap, me.v, &self.params.safety, hysteresis);
                if next == Mode::OptimalControl
                    && !self.agents[i].gave_way
                    && t - self.agents[i].mode_since >= MIN_FOLLOW_DWELL
                    && self.priority_conflict(i, snaps, t)?.is_none()
                    && me.s < geom.control_exit() - REPLAN_MARGIN
                {
                    self.set_mode(i, Mode::OptimalControl, t, "gap restored");
                    self.agents[i].follow_target = None;
                    self.agents[i].proceeded = false;
                    self.agents[i].deciding = false;
                    self.replan(i, t, "leaving follow mode")?;
                }
            }
            _ => {}
        }

        if self.agents[i].state.mode == Mode::OptimalControl {
            if let Some(other) = self.priority_conflict(i, snaps, t)? {
                self.agents[i].gave_way = true;
                self.set_mode(i, Mode::Follow, t, &format!("yielding to {other}"));
            }
        }

        if self.agents[i].state.mode == Mode::Follow {
            return Ok(self.follow(i, snaps, leader, t));
        }
        let Some(reference) = self.reference(&self.agents[i], t) else {
            return Ok(self.follow(i, snaps, leader, t));
        };
        let p = me.s - geom.control_entry();
        let k = &self.params.control;
        let tracking = reference.u + k.k_p * (reference.p - p) + k.k_v * (reference.v - me.v);
        // Never close in on the vehicle ahead faster than car following would.
        // Across approaches the schedule spaces vehicles by the merging-zone
        // length rather than the following distance.
        let cross = self.params.safety.safe_distance(geom.roundabout_speed) - geom.merging_zone_arc;
        let lead = leader.map(|(j, gap)| Leader {
            gap: if snaps[j].approach == me.approach {
                gap
            } else {
                gap + cross
            },
            speed: snaps[j].v,
        });
        let limit = [lead, self.occupied_merge(i, snaps)]
            .into_iter()
            .flatten()
            .map(|l| car_following_accel(me.v, Some(l), &self.params.driver, f64::INFINITY).accel)
            .fold(f64::INFINITY, f64::min);
        Ok(tracking.min(limit))
    }

    pub fn step(&mut self) -> Result<(), EngineError> {
        let t = self.time();
        let dt = self.cfg.step;
        self.spawn(t);

        let snaps = self.snapshot();
        let order = Self::ordering(&snaps);
        let leaders = self.leaders(&snaps, &order);
        self.maintain_queue(t)?;

        let mut accel = vec![0.0; self.agents.len()];
        for i in 0..self.agents.len() {
            let a = match self.agents[i].state.vclass {
                VehicleClass::Human => self.follow(i, &snaps, leaders[i], t),
                VehicleClass::Cav => self.cav_accel(i, &snaps, leaders[i], t)?,
            };
            accel[i] = a.clamp(self.params.limits.u_min, self.params.limits.u_max);
        }

        let crossings = self.integrate(&accel, t, dt);
        self.fire(crossings, t, dt)?;
        self.check_order(t + dt);

        self.step_index += 1;
        if self.step_index.is_multiple_of(self.cfg.steps_per_log()) {
            self.log_samples();
        }
        Ok(())
    }

    fn integrate(&mut self, accel: &[f64], t: f64, dt: f64) -> Vec<Crossing> {
        let geom = self.params.geometry.clone();
        let v_max = self.params.limits.v_max;
        let window =
            ((t / self.cfg.aggregate_every).floor() as usize).min(self.window_fuel.len() - 1);
        let mut crossings = Vec::new();
        for (i, agent) in self.agents.iter_mut().enumerate() {
            let state = &mut agent.state;
            let (s0, v0) = (state.s(), state.v);
            let v1 = (v0 + accel[i] * dt).clamp(0.0, v_max);
            let s1 = s0 + v1 * dt;
            state.u = (v1 - v0) / dt;
            state.v = v1;
            state.pos.s = s1;

            let fuel = fuel_rate(v1, state.u, &self.params.fuel) * dt;
            let record = &mut self.records[state.id.0 as usize - 1];
            record.fuel_ml += fuel;
            self.window_fuel[window][state.approach().index()] += fuel;
            if state.t_enter_control.is_some() && record.t_merge_entry.is_none() {
                let low = record.min_speed_before_merge.map_or(v1, |m| m.min(v1));
                record.min_speed_before_merge = Some(low);
            }

            let approach = state.approach();
            let boundaries = [
                (geom.control_entry(), Boundary::ControlEntry),
                (geom.merge_entry(approach), Boundary::MergeEntry),
                (geom.merge_exit(approach), Boundary::MergeExit),
                (geom.route_length(approach), Boundary::RouteEnd),
            ];
            for (at, boundary) in boundaries {
                if s0 < at && s1 >= at {
                    let frac = if s1 > s0 { (at - s0) / (s1 - s0) } else { 1.0 };
                    crossings.push(Crossing {
                        t: t + frac * dt,
                        agent: i,
                        boundary,
                    });
                }
            }
        }
        crossings.sort_by(|x, y| {
            x.t.total_cmp(&y.t)
                .then(x.boundary.cmp(&y.boundary))
                .then(x.agent.cmp(&y.agent))
        });
        crossings
    }

    /// Nearest same-approach vehicle ahead of agent `i`, if it is not under
    /// optimal control and closer than the safe distance.
    fn close_driven_leader(&self, i: usize) -> Option<(usize, f64)> {
        let me = &self.agents[i].state;
        let (j, gap) = (0..self.agents.len())
            .filter(|&j| j != i && self.agents[j].state.approach() == me.approach())
            .map(|j| (j, self.agents[j].state.s() - me.s()))
            .filter(|&(_, gap)| gap > 0.0)
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        (self.agents[j].state.mode != Mode::OptimalControl
            && gap < self.params.safety.safe_distance(me.v))
        .then_some((j, gap))
    }

    /// Position of agent `i` at time `tc` within the step that started at `t`.
    fn position_at(&self, i: usize, t: f64, dt: f64, tc: f64) -> f64 {
        let state = &self.agents[i].state;
        state.s() - state.v * (t + dt - tc)
    }

    fn fire(&mut self, crossings: Vec<Crossing>, t: f64, dt: f64) -> Result<(), EngineError> {
        let geom = self.params.geometry.clone();
        let mut finished = Vec::new();
        for c in crossings {
            let i = c.agent;
            let id = self.agents[i].state.id;
            match c.boundary {
                Boundary::ControlEntry => {
                    self.agents[i].state.t_enter_control = Some(c.t);
                    self.record(id).t_enter_control = Some(c.t);
                    let mut at_entry = self.agents[i].state.clone();
                    at_entry.pos.s = geom.control_entry();
                    let q = self.coordinator.register_arrival(&at_entry, c.t)?;
                    self.agents[i].queue = Some(q);
                    let tm = self.coordinator.entry(q)?.tm.unwrap_or(f64::NAN);
                    self.event(
                        c.t,
                        id,
                        EventKind::EnterControl,
                        format!("queue {q} tm={tm:.3}"),
                    );
                    if at_entry.vclass == VehicleClass::Cav {
                        if let Some((j, gap)) = self.close_driven_leader(i) {
                            self.agents[i].follow_target = Some(self.agents[j].state.id);
                            let reason = format!(
                                "control zone entry, {} {} at {gap:.2} m",
                                self.agents[j].state.vclass, self.agents[j].state.id
                            );
                            self.set_mode(i, Mode::Follow, c.t, &reason);
                            continue;
                        }
                        self.set_mode(i, Mode::OptimalControl, c.t, "control zone entry");
                        self.plan_vehicle(
                            i,
                            q,
                            &at_entry,
                            c.t,
                            EventKind::Plan,
                            "control zone entry",
                        )?;
                    }
                }
                Boundary::MergeEntry => {
                    self.merge_counter += 1;
                    self.agents[i].merge_rank = Some(self.merge_counter);
                    self.record(id).t_merge_entry = Some(c.t);
                    if let Some(q) = self.agents[i].queue {
                        self.coordinator.observe_merge_entry(q, c.t)?;
                    }
                    let approach = self.agents[i].state.approach();
                    let slack = geom.roundabout_speed * dt;
                    let conflicts: Vec<VehicleId> = (0..self.agents.len())
                        .filter(|&j| j != i && self.agents[j].state.approach() != approach)
                        .filter(|&j| {
                            let other = self.agents[j].state.approach();
                            let s = self.position_at(j, t, dt, c.t);
                            s >= geom.merge_entry(other) && s < geom.merge_exit(other) - slack
                        })
                        .map(|j| self.agents[j].state.id)
                        .collect();
                    self.event(c.t, id, EventKind::MergeEntry, String::new());
                    for other in conflicts {
                        let mode = self.agents[i].state.mode;
                        self.event(
                            c.t,
                            id,
                            EventKind::LateralConflict,
                            format!("occupied by {other} (entering in {mode})"),
                        );
                    }
                }
                Boundary::MergeExit => {
                    self.record(id).tf_exit = Some(c.t);
                    if let Some(q) = self.agents[i].queue {
                        self.coordinator.release(q, c.t)?;
                    }
                    if self.agents[i].state.vclass == VehicleClass::Cav {
                        self.set_mode(i, Mode::Uncontrolled, c.t, "merging zone exit");
                    }
                    self.event(c.t, id, EventKind::MergeExit, String::new());
                }
                Boundary::RouteEnd => {
                    self.agents[i].state.t_exit_network = Some(c.t);
                    self.record(id).t_exit_network = Some(c.t);
                    self.event(c.t, id, EventKind::Exit, String::new());
                    finished.push(i);
                }
            }
        }
        finished.sort_unstable();
        for i in finished.into_iter().rev() {
            let agent = self.agents.remove(i);
            if let Some(q) = agent.queue {
                let entry = self.coordinator.entry(q)?;
                let record = &mut self.records[agent.state.id.0 as usize - 1];
                record.tm = entry.tm;
                record.tz = entry.tz;
            }
            self.exited += 1;
        }
        Ok(())
    }

    /// Flags vehicle pairs whose order along a shared path has collapsed:
    /// same-approach vehicles in generation order, and vehicles in the
    /// shared segment in merge order.
    fn check_order(&mut self, t: f64) {
        let geom = self.params.geometry.clone();
        let mut flagged = Vec::new();
        for approach in Approach::ALL {
            let mut lane: Vec<&Agent> = self
                .agents
                .iter()
                .filter(|a| a.state.approach() == approach)
                .collect();
            lane.sort_by_key(|a| a.state.id);
            for pair in lane.windows(2) {
                let gap = pair[0].state.s() - pair[1].state.s();
                if gap <= 0.0 {
                    flagged.push((pair[1].state.id, pair[0].state.id, gap));
                }
            }
        }
        let mut shared: Vec<&Agent> = self
            .agents
            .iter()
            .filter(|a| a.merge_rank.is_some())
            .collect();
        shared.sort_by_key(|a| a.merge_rank);
        for pair in shared.windows(2) {
            if pair[0].state.approach() == pair[1].state.approach() {
                continue;
            }
            let m = |a: &Agent| a.state.s() - geom.merge_entry(a.state.approach());
            let gap = m(pair[0]) - m(pair[1]);
            if gap <= 0.0 {
                flagged.push((pair[1].state.id, pair[0].state.id, gap));
            }
        }
        for (follower, leader, gap) in flagged {
            self.event(
                t,
                follower,
                EventKind::NegativeGap,
                format!("leader {leader} gap {gap:.3}"),
            );
        }
    }

    fn log_samples(&mut self) {
        let t = self.time();
        let geom = &self.params.geometry;
        let mut samples: Vec<TrajectorySample> = self
            .agents
            .iter()
            .map(|a| TrajectorySample {
                t,
                vehicle: a.state.id,
                vclass: a.state.vclass,
                approach: a.state.approach(),
                s: a.state.s(),
                v: a.state.v,
                u: a.state.u,
                mode: a.state.mode,
                zone: geom.zone_of(a.state.pos).unwrap_or(Zone::ExitLeg),
            })
            .collect();
        samples.sort_by_key(|s| s.vehicle);
        self.trajectories.extend(samples);
    }

    pub fn finish(mut self) -> RunLog {
        for agent in &self.agents {
            if let Some(q) = agent.queue {
                if let Ok(entry) = self.coordinator.entry(q) {
                    let record = &mut self.records[agent.state.id.0 as usize - 1];
                    record.tm = entry.tm;
                    record.tz = entry.tz;
                }
            }
        }
        let spawned = self.records.iter().filter(|r| r.t_insert.is_some()).count();
        let total = self.records.len();
        RunLog {
            config: self.cfg,
            steps: self.step_index,
            trajectories: self.trajectories,
            events: self.events,
            vehicles: self.records,
            queue_events: self.coordinator.log().to_vec(),
            queue: self.coordinator.entries().to_vec(),
            window_fuel: self.window_fuel,
            spawned,
            exited: self.exited,
            in_network: self.agents.len(),
            residual: total - self.exited,
        }
    }
}
