//! CSV serialization of run logs and measures of effectiveness.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::RunLog;
use crate::geometry::RoundaboutGeometry;
use crate::metrics::{vehicle_delay, vehicle_travel_time, MoeRecord};

pub const TRAJECTORIES: &str = "trajectories.csv";
pub const EVENTS: &str = "events.csv";
pub const VEHICLES: &str = "vehicles.csv";
pub const QUEUE: &str = "queue.csv";
pub const MOE: &str = "moe.csv";

#[derive(Serialize)]
struct TrajectoryRow {
    t: f64,
    id: u32,
    class: &'static str,
    approach: &'static str,
    s: f64,
    v: f64,
    u: f64,
    mode: &'static str,
    zone: &'static str,
}

#[derive(Serialize)]
struct EventRow<'a> {
    t: f64,
    id: u32,
    event: &'static str,
    detail: &'a str,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VehicleRow {
    pub id: u32,
    pub class: String,
    pub approach: String,
    pub t_spawn: f64,
    pub t_enter_control: Option<f64>,
    pub tm: Option<f64>,
    pub tz: Option<f64>,
    pub tf_exit: Option<f64>,
    pub t_exit_network: Option<f64>,
    pub travel_time: Option<f64>,
    pub delay: Option<f64>,
    #[serde(rename = "fuel_mL")]
    pub fuel_ml: f64,
}

#[derive(Serialize)]
struct QueueRow {
    t: f64,
    event: &'static str,
    queue_id: u32,
    id: u32,
    class: &'static str,
    approach: &'static str,
    t0: f64,
    tm: Option<f64>,
    tz: Option<f64>,
    tf_exit: Option<f64>,
    estimated: bool,
}

#[derive(Serialize)]
pub struct MoeRow {
    pub window_start: f64,
    pub approach: &'static str,
    pub mean_travel_time: Option<f64>,
    pub density: f64,
    pub exits: usize,
    pub cumulative_exits: usize,
    pub delay: f64,
    #[serde(rename = "fuel_mL")]
    pub fuel_ml: f64,
    #[serde(rename = "cumulative_fuel_mL")]
    pub cumulative_fuel_ml: f64,
}

impl From<&MoeRecord> for MoeRow {
    fn from(r: &MoeRecord) -> Self {
        MoeRow {
            window_start: r.window_start,
            approach: r.approach.as_str(),
            mean_travel_time: r.mean_travel_time,
            density: r.density,
            exits: r.exits,
            cumulative_exits: r.cumulative_exits,
            delay: r.delay,
            fuel_ml: r.fuel_ml,
            cumulative_fuel_ml: r.cumulative_fuel_ml,
        }
    }
}

pub fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(File::create(path)?));
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn vehicle_rows(log: &RunLog, geom: &RoundaboutGeometry) -> Vec<VehicleRow> {
    log.vehicles
        .iter()
        .map(|r| VehicleRow {
            id: r.id.0,
            class: r.vclass.as_str().to_string(),
            approach: r.approach.as_str().to_string(),
            t_spawn: r.t_spawn,
            t_enter_control: r.t_enter_control,
            tm: r.tm,
            tz: r.tz,
            tf_exit: r.tf_exit,
            t_exit_network: r.t_exit_network,
            travel_time: vehicle_travel_time(r).ok(),
            delay: vehicle_delay(r, geom).ok(),
            fuel_ml: r.fuel_ml,
        })
        .collect()
}

/// Writes the five per-run CSV files into `dir`, which must exist.
pub fn write_run(
    dir: &Path,
    log: &RunLog,
    moe: &[MoeRecord],
    geom: &RoundaboutGeometry,
) -> csv::Result<()> {
    write_rows(
        &dir.join(TRAJECTORIES),
        log.trajectories.iter().map(|s| TrajectoryRow {
            t: s.t,
            id: s.vehicle.0,
            class: s.vclass.as_str(),
            approach: s.approach.as_str(),
            s: s.s,
            v: s.v,
            u: s.u,
            mode: s.mode.as_str(),
            zone: s.zone.as_str(),
        }),
    )?;
    write_rows(
        &dir.join(EVENTS),
        log.events.iter().map(|e| EventRow {
            t: e.t,
            id: e.vehicle.0,
            event: e.kind.as_str(),
            detail: &e.detail,
        }),
    )?;
    write_rows(&dir.join(VEHICLES), vehicle_rows(log, geom))?;
    write_rows(
        &dir.join(QUEUE),
        log.queue_events.iter().map(|q| QueueRow {
            t: q.t,
            event: q.kind.as_str(),
            queue_id: q.entry.id.0,
            id: q.entry.vehicle.0,
            class: q.entry.vclass.as_str(),
            approach: q.entry.approach.as_str(),
            t0: q.entry.t0,
            tm: q.entry.tm,
            tz: q.entry.tz,
            tf_exit: q.entry.tf_exit,
            estimated: q.entry.estimated,
        }),
    )?;
    write_rows(&dir.join(MOE), moe.iter().map(MoeRow::from))?;
    Ok(())
}
