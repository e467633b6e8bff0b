//! Measures of effectiveness computed from run logs: travel time, delay,
//! density, throughput and fuel, plus improvement summaries against a
//! baseline sweep.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{RunLog, VehicleRecord};
use crate::geometry::{Approach, RoundaboutGeometry};

/// Polynomial fuel-rate metamodel in speed and acceleration, mL/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuelModelCoefficients {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for FuelModelCoefficients {
    fn default() -> Self {
        Self {
            b0: 0.1569,
            b1: 2.450e-2,
            b2: -7.415e-4,
            b3: 5.975e-5,
            c0: 0.07224,
            c1: 9.681e-2,
            c2: 1.075e-3,
        }
    }
}

impl FuelModelCoefficients {
    pub fn validate(&self) -> Result<(), String> {
        let all = [
            self.b0, self.b1, self.b2, self.b3, self.c0, self.c1, self.c2,
        ];
        if all.iter().any(|c| !c.is_finite()) {
            return Err("fuel coefficients must be finite".into());
        }
        if self.b0 <= 0.0 {
            return Err(format!(
                "fuel.b0 is the idle rate and must be positive, got {}",
                self.b0
            ));
        }
        Ok(())
    }
}

pub fn fuel_rate(v: f64, u: f64, c: &FuelModelCoefficients) -> f64 {
    let cruise = c.b0 + v * (c.b1 + v * (c.b2 + v * c.b3));
    let accel = u.max(0.0) * (c.c0 + v * (c.c1 + v * c.c2));
    (cruise + accel).max(0.0)
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("vehicle {0} has not exited the network")]
    Incomplete(u32),
}

#[derive(Debug, Error, PartialEq)]
pub enum SummaryError {
    #[error("run {index}: {scenario} vehicles against {baseline} in the baseline")]
    VehicleCount {
        index: usize,
        baseline: usize,
        scenario: usize,
    },
    #[error("{baseline} baseline runs against {scenario} scenario runs")]
    RunCount { baseline: usize, scenario: usize },
    #[error("baseline total {0} is zero")]
    ZeroBaseline(&'static str),
}

pub fn vehicle_travel_time(record: &VehicleRecord) -> Result<f64, MetricsError> {
    record
        .t_exit_network
        .map(|t| t - record.t_spawn)
        .ok_or(MetricsError::Incomplete(record.id.0))
}

pub fn vehicle_delay(
    record: &VehicleRecord,
    geom: &RoundaboutGeometry,
) -> Result<f64, MetricsError> {
    Ok((vehicle_travel_time(record)? - geom.free_flow_time(record.approach)).max(0.0))
}

/// Vehicles on the approach link `[0, approach_length)` per kilometre.
pub fn density(positions: impl IntoIterator<Item = f64>, geom: &RoundaboutGeometry) -> f64 {
    let n = positions
        .into_iter()
        .filter(|&s| (0.0..geom.approach_length).contains(&s))
        .count();
    n as f64 / (geom.approach_length / 1000.0)
}

/// One aggregation window on one approach.
#[derive(Debug, Clone, PartialEq)]
pub struct MoeRecord {
    pub window_start: f64,
    pub approach: Approach,
    /// Mean travel time of vehicles exiting in the window, if any.
    pub mean_travel_time: Option<f64>,
    /// Mean density over the logged samples in the window, veh/km.
    pub density: f64,
    pub exits: usize,
    pub cumulative_exits: usize,
    /// Delay of vehicles exiting in the window, s.
    pub delay: f64,
    pub fuel_ml: f64,
    pub cumulative_fuel_ml: f64,
}

pub fn aggregate(log: &RunLog, geom: &RoundaboutGeometry) -> Vec<MoeRecord> {
    let width = log.config.aggregate_every;
    let windows = log.window_fuel.len();
    let window_of = |t: f64| ((t / width).floor().max(0.0) as usize).min(windows - 1);

    let mut exits = vec![[0usize; 2]; windows];
    let mut travel = vec![[0.0f64; 2]; windows];
    let mut delay = vec![[0.0f64; 2]; windows];
    for record in &log.vehicles {
        let Some(t_exit) = record.t_exit_network else {
            continue;
        };
        let (w, a) = (window_of(t_exit), record.approach.index());
        exits[w][a] += 1;
        travel[w][a] += t_exit - record.t_spawn;
        delay[w][a] += vehicle_delay(record, geom).unwrap_or(0.0);
    }

    // Density: per logged instant, then averaged over the instants of a window.
    let mut counts = vec![[0usize; 2]; windows];
    let mut instants = vec![0usize; windows];
    for sample in &log.trajectories {
        let w = window_of(sample.t);
        if sample.s < geom.approach_length {
            counts[w][sample.approach.index()] += 1;
        }
    }
    let log_period = log.config.log_trajectory_every;
    let total_instants = log.steps / log.config.steps_per_log() + 1;
    for k in 0..total_instants {
        instants[window_of(k as f64 * log_period)] += 1;
    }

    let km = geom.approach_length / 1000.0;
    let mut out = Vec::with_capacity(windows * 2);
    let mut cum_exits = [0usize; 2];
    let mut cum_fuel = [0.0f64; 2];
    for w in 0..windows {
        for approach in Approach::ALL {
            let a = approach.index();
            cum_exits[a] += exits[w][a];
            cum_fuel[a] += log.window_fuel[w][a];
            out.push(MoeRecord {
                window_start: w as f64 * width,
                approach,
                mean_travel_time: (exits[w][a] > 0).then(|| travel[w][a] / exits[w][a] as f64),
                density: if instants[w] > 0 {
                    counts[w][a] as f64 / instants[w] as f64 / km
                } else {
                    0.0
                },
                exits: exits[w][a],
                cumulative_exits: cum_exits[a],
                delay: delay[w][a],
                fuel_ml: log.window_fuel[w][a],
                cumulative_fuel_ml: cum_fuel[a],
            });
        }
    }
    out
}

/// Network totals of one run. Vehicles still in the network at the end are
/// censored at the end of the simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunTotals {
    pub vehicles: usize,
    pub travel_time: f64,
    pub delay: f64,
    pub fuel_ml: f64,
    pub residual: usize,
}

pub fn run_totals(log: &RunLog, geom: &RoundaboutGeometry) -> RunTotals {
    let end = log.config.duration;
    let mut totals = RunTotals {
        vehicles: log.vehicles.len(),
        travel_time: 0.0,
        delay: 0.0,
        fuel_ml: 0.0,
        residual: 0,
    };
    for record in &log.vehicles {
        let tt = match record.t_exit_network {
            Some(t) => t - record.t_spawn,
            None => {
                totals.residual += 1;
                end - record.t_spawn
            }
        };
        totals.travel_time += tt;
        totals.delay += (tt - geom.free_flow_time(record.approach)).max(0.0);
        totals.fuel_ml += record.fuel_ml;
    }
    totals
}

/// Improvement of a scenario over the baseline, percent, averaged over
/// seeds, with the mean raw totals of both.
#[derive(Debug, Clone, PartialEq)]
pub struct Improvement {
    pub travel_time_pct: f64,
    pub delay_pct: f64,
    pub fuel_pct: f64,
    pub baseline: RunTotals,
    pub scenario: RunTotals,
}

fn pct(base: f64, scen: f64) -> f64 {
    100.0 * (base - scen) / base
}

/// Seed-averaged totals.
pub fn mean_totals(runs: &[RunTotals]) -> RunTotals {
    let n = runs.len() as f64;
    RunTotals {
        vehicles: runs.first().map_or(0, |r| r.vehicles),
        travel_time: runs.iter().map(|r| r.travel_time).sum::<f64>() / n,
        delay: runs.iter().map(|r| r.delay).sum::<f64>() / n,
        fuel_ml: runs.iter().map(|r| r.fuel_ml).sum::<f64>() / n,
        residual: runs.iter().map(|r| r.residual).sum::<usize>() / runs.len().max(1),
    }
}

/// Seed-paired improvements: run `k` of the scenario is compared against run
/// `k` of the baseline, then percentages are averaged.
pub fn summarize(
    baseline: &[RunTotals],
    scenario: &[RunTotals],
) -> Result<Improvement, SummaryError> {
    if baseline.len() != scenario.len() || baseline.is_empty() {
        return Err(SummaryError::RunCount {
            baseline: baseline.len(),
            scenario: scenario.len(),
        });
    }
    let mut sums = [0.0; 3];
    for (index, (b, s)) in baseline.iter().zip(scenario).enumerate() {
        if b.vehicles != s.vehicles {
            return Err(SummaryError::VehicleCount {
                index,
                baseline: b.vehicles,
                scenario: s.vehicles,
            });
        }
        if b.travel_time <= 0.0 {
            return Err(SummaryError::ZeroBaseline("travel time"));
        }
        if b.fuel_ml <= 0.0 {
            return Err(SummaryError::ZeroBaseline("fuel"));
        }
        sums[0] += pct(b.travel_time, s.travel_time);
        // A baseline without delay leaves nothing to improve.
        sums[1] += if b.delay > 0.0 {
            pct(b.delay, s.delay)
        } else {
            0.0
        };
        sums[2] += pct(b.fuel_ml, s.fuel_ml);
    }
    let n = baseline.len() as f64;
    Ok(Improvement {
        travel_time_pct: sums[0] / n,
        delay_pct: sums[1] / n,
        fuel_pct: sums[2] / n,
        baseline: mean_totals(baseline),
        scenario: mean_totals(scenario),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::{VehicleClass, VehicleId};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn record(approach: Approach, t_spawn: f64, t_exit: Option<f64>) -> VehicleRecord {
        VehicleRecord {
            id: VehicleId(1),
            vclass: VehicleClass::Human,
            approach,
            t_spawn,
            t_insert: Some(t_spawn),
            t_enter_control: None,
            tm: None,
            tz: None,
            t_merge_entry: None,
            tf_exit: None,
            t_exit_network: t_exit,
            fuel_ml: 0.0,
            min_speed_before_merge: None,
            mode_changes: 0,
        }
    }

    #[test]
    fn fuel_examples() {
        let c = FuelModelCoefficients::default();
        assert_relative_eq!(fuel_rate(8.9, 0.0, &c), 0.35834, epsilon = 1e-5);
        assert_relative_eq!(fuel_rate(10.0, 1.0, &c), 1.53534, epsilon = 1e-5);
        assert_relative_eq!(fuel_rate(10.0, -2.0, &c), 0.38750, epsilon = 1e-5);
        assert_eq!(fuel_rate(0.0, 0.0, &c), c.b0);
    }

    #[test]
    fn delay_examples() {
        let g = RoundaboutGeometry::default();
        let eb = record(Approach::Eastbound, 10.0, Some(38.3));
        assert!(vehicle_delay(&eb, &g).unwrap() < 0.03);
        let fast = record(Approach::Westbound, 0.0, Some(30.0));
        assert_eq!(vehicle_delay(&fast, &g).unwrap(), 0.0);
        let slow = record(Approach::Westbound, 0.0, Some(50.0));
        assert_relative_eq!(
            vehicle_delay(&slow, &g).unwrap(),
            50.0 - (320.0 / 15.6 + 112.0 / 8.9 + 100.0 / 15.6),
            epsilon = 1e-9
        );
        let open = record(Approach::Eastbound, 0.0, None);
        assert_eq!(vehicle_delay(&open, &g), Err(MetricsError::Incomplete(1)));
    }

    #[test]
    fn density_examples() {
        let g = RoundaboutGeometry::default();
        assert_relative_eq!(density((0..10).map(|k| k as f64 * 30.0), &g), 31.25);
        assert_eq!(density(std::iter::empty(), &g), 0.0);
        assert_eq!(density([320.0, 400.0], &g), 0.0);
    }

    fn totals(tt: f64, delay: f64, fuel: f64) -> RunTotals {
        RunTotals {
            vehicles: 400,
            travel_time: tt,
            delay,
            fuel_ml: fuel,
            residual: 0,
        }
    }

    #[test]
    fn identical_runs_improve_nothing() {
        let runs = [totals(100.0, 10.0, 50.0), totals(120.0, 0.0, 60.0)];
        let imp = summarize(&runs, &runs).unwrap();
        assert_eq!(
            (imp.travel_time_pct, imp.delay_pct, imp.fuel_pct),
            (0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn improvements_are_seed_paired_means() {
        let base = [totals(100.0, 50.0, 10.0), totals(200.0, 100.0, 20.0)];
        let scen = [totals(50.0, 0.0, 8.0), totals(150.0, 50.0, 10.0)];
        let imp = summarize(&base, &scen).unwrap();
        assert_relative_eq!(imp.travel_time_pct, (50.0 + 25.0) / 2.0);
        assert_relative_eq!(imp.delay_pct, (100.0 + 50.0) / 2.0);
        assert_relative_eq!(imp.fuel_pct, (20.0 + 50.0) / 2.0);
        assert_relative_eq!(imp.baseline.travel_time, 150.0);
    }

    #[test]
    fn mismatched_runs_rejected() {
        let base = [totals(100.0, 50.0, 10.0)];
        let mut other = totals(100.0, 50.0, 10.0);
        other.vehicles = 399;
        assert!(matches!(
            summarize(&base, &[other]),
            Err(SummaryError::VehicleCount { .. })
        ));
        assert!(matches!(
            summarize(&base, &[]),
            Err(SummaryError::RunCount { .. })
        ));
    }

    proptest! {
        #[test]
        fn fuel_nondecreasing_in_positive_accel(v in 0.0f64..16.0, u1 in 0.0f64..4.5, du in 0.0f64..4.5) {
            let c = FuelModelCoefficients::default();
            prop_assert!(fuel_rate(v, u1 + du, &c) >= fuel_rate(v, u1, &c));
        }

        #[test]
        fn fuel_never_negative(v in 0.0f64..40.0, u in -10.0f64..10.0) {
            prop_assert!(fuel_rate(v, u, &FuelModelCoefficients::default()) >= 0.0);
        }
    }
}
