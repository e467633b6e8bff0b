//! Market-penetration sweeps: one simulation per (mpr, seed) pair, run in
//! parallel, each written to its own directory, then summarised against the
//! all-human baseline.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::engine::{run, EngineError, EventKind};
use crate::metrics::{
    aggregate, mean_totals, run_totals, summarize, Improvement, MoeRecord, RunTotals, SummaryError,
};
use crate::output::{self, MoeRow};
use crate::scenario::{validate_sweep, ScenarioError, ScenarioFile};

pub const SUMMARY: &str = "summary.csv";
pub const MOE_TIMESERIES: &str = "moe_timeseries.csv";

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("writing {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("run mpr={mpr} seed={seed}: {source}")]
    Engine {
        mpr: f64,
        seed: u64,
        source: EngineError,
    },
    #[error(transparent)]
    Summary(#[from] SummaryError),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub mpr: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Worker threads; `None` uses every core.
    pub jobs: Option<usize>,
}

impl SweepOptions {
    pub fn from_scenario(scenario: &ScenarioFile) -> Self {
        Self {
            mpr: scenario.sweep.mpr.clone(),
            seeds: scenario.sweep.seeds.clone(),
            jobs: None,
        }
    }
}

/// A broken run-level invariant. The run's files are kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub enum InvariantViolation {
    LateralConflict {
        mpr: f64,
        seed: u64,
        count: usize,
    },
    Conservation {
        mpr: f64,
        seed: u64,
        spawned: usize,
        exited: usize,
        in_network: usize,
    },
}

impl std::fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InvariantViolation::LateralConflict { mpr, seed, count } => {
                write!(f, "lateral exclusion: {count} merging-zone conflicts at mpr={mpr} seed={seed}")
            }
            InvariantViolation::Conservation { mpr, seed, spawned, exited, in_network } => write!(
                f,
                "vehicle conservation: {spawned} spawned but {exited} exited + {in_network} present at mpr={mpr} seed={seed}"
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub mpr: f64,
    pub seed: u64,
    pub dir: PathBuf,
    pub totals: RunTotals,
    pub moe: Vec<MoeRecord>,
    pub lateral_conflicts: usize,
    pub emergency_brakes: usize,
    pub negative_gaps: usize,
    pub conserved: bool,
    pub spawned: usize,
    pub exited: usize,
    pub in_network: usize,
}

#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub mpr: f64,
    pub runs: usize,
    /// Against the `mpr = 0` runs of the same sweep, when there are any.
    pub improvement: Option<Improvement>,
    pub mean: RunTotals,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub runs: Vec<RunOutcome>,
    pub summary: Vec<SummaryRow>,
    pub violations: Vec<InvariantViolation>,
}

/// Directory of one run below the output root, e.g. `mpr_20/seed_3`.
pub fn run_dir(mpr: f64, seed: u64) -> PathBuf {
    let pct = mpr * 100.0;
    let label = if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        format!("{pct}")
    };
    PathBuf::from(format!("mpr_{label}")).join(format!("seed_{seed}"))
}

fn run_one(
    scenario: &ScenarioFile,
    mpr: f64,
    seed: u64,
    out: &Path,
) -> Result<RunOutcome, SweepError> {
    let params = scenario.model();
    let cfg = scenario.sim_config(mpr, seed);
    let log = run(&cfg, &params).map_err(|source| SweepError::Engine { mpr, seed, source })?;
    let moe = aggregate(&log, &params.geometry);
    let dir = out.join(run_dir(mpr, seed));
    std::fs::create_dir_all(&dir).map_err(|source| SweepError::Io {
        path: dir.clone(),
        source,
    })?;
    output::write_run(&dir, &log, &moe, &params.geometry).map_err(|source| SweepError::Csv {
        path: dir.clone(),
        source,
    })?;
    Ok(RunOutcome {
        mpr,
        seed,
        dir,
        totals: run_totals(&log, &params.geometry),
        moe,
        lateral_conflicts: log.count(EventKind::LateralConflict),
        emergency_brakes: log.count(EventKind::EmergencyBrake),
        negative_gaps: log.count(EventKind::NegativeGap),
        conserved: log.conserved(),
        spawned: log.spawned,
        exited: log.exited,
        in_network: log.in_network,
    })
}

#[derive(Serialize)]
struct SummaryCsvRow {
    mpr: f64,
    runs: usize,
    travel_time_improvement_pct: Option<f64>,
    delay_improvement_pct: Option<f64>,
    fuel_improvement_pct: Option<f64>,
    travel_time_s: f64,
    delay_s: f64,
    #[serde(rename = "fuel_mL")]
    fuel_ml: f64,
    baseline_travel_time_s: Option<f64>,
    baseline_delay_s: Option<f64>,
    #[serde(rename = "baseline_fuel_mL")]
    baseline_fuel_ml: Option<f64>,
    residual: usize,
}

#[derive(Serialize)]
struct MoeSeriesRow {
    mpr: f64,
    seed: u64,
    window_start: f64,
    approach: &'static str,
    mean_travel_time: Option<f64>,
    density: f64,
    exits: usize,
    cumulative_exits: usize,
    delay: f64,
    #[serde(rename = "fuel_mL")]
    fuel_ml: f64,
    #[serde(rename = "cumulative_fuel_mL")]
    cumulative_fuel_ml: f64,
}

fn summary_rows(
    runs: &[RunOutcome],
    mprs: &[f64],
    seeds: &[u64],
) -> Result<Vec<SummaryRow>, SummaryError> {
    let totals_at = |mpr: f64| -> Vec<RunTotals> {
        seeds
            .iter()
            .filter_map(|&seed| runs.iter().find(|r| r.mpr == mpr && r.seed == seed))
            .map(|r| r.totals)
            .collect()
    };
    let baseline = mprs.contains(&0.0).then(|| totals_at(0.0));
    mprs.iter()
        .map(|&mpr| {
            let scenario = totals_at(mpr);
            let improvement = baseline
                .as_ref()
                .map(|b| summarize(b, &scenario))
                .transpose()?;
            Ok(SummaryRow {
                mpr,
                runs: scenario.len(),
                improvement,
                mean: mean_totals(&scenario),
            })
        })
        .collect()
}

/// Runs every (mpr, seed) pair of `opts`, writing each run below `out`, then
/// the sweep-level summary and MOE series.
pub fn run_sweep(
    scenario: &ScenarioFile,
    opts: &SweepOptions,
    out: &Path,
) -> Result<SweepReport, SweepError> {
    validate_sweep(&opts.mpr, &opts.seeds)?;
    std::fs::create_dir_all(out).map_err(|source| SweepError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let pairs: Vec<(f64, u64)> = opts
        .mpr
        .iter()
        .flat_map(|&m| opts.seeds.iter().map(move |&s| (m, s)))
        .collect();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = opts.jobs {
        pool = pool.num_threads(jobs);
    }
    let runs = pool.build()?.install(|| {
        pairs
            .par_iter()
            .map(|&(m, s)| run_one(scenario, m, s, out))
            .collect::<Result<Vec<_>, _>>()
    })?;

    let mut violations = Vec::new();
    for r in &runs {
        if r.mpr == 1.0 && r.lateral_conflicts > 0 {
            violations.push(InvariantViolation::LateralConflict {
                mpr: r.mpr,
                seed: r.seed,
                count: r.lateral_conflicts,
            });
        }
        if !r.conserved {
            violations.push(InvariantViolation::Conservation {
                mpr: r.mpr,
                seed: r.seed,
                spawned: r.spawned,
                exited: r.exited,
                in_network: r.in_network,
            });
        }
    }

    let summary = summary_rows(&runs, &opts.mpr, &opts.seeds)?;
    let path = out.join(SUMMARY);
    output::write_rows(
        &path,
        summary.iter().map(|row| SummaryCsvRow {
            mpr: row.mpr,
            runs: row.runs,
            travel_time_improvement_pct: row.improvement.as_ref().map(|i| i.travel_time_pct),
            delay_improvement_pct: row.improvement.as_ref().map(|i| i.delay_pct),
            fuel_improvement_pct: row.improvement.as_ref().map(|i| i.fuel_pct),
            travel_time_s: row.mean.travel_time,
            delay_s: row.mean.delay,
            fuel_ml: row.mean.fuel_ml,
            baseline_travel_time_s: row.improvement.as_ref().map(|i| i.baseline.travel_time),
            baseline_delay_s: row.improvement.as_ref().map(|i| i.baseline.delay),
            baseline_fuel_ml: row.improvement.as_ref().map(|i| i.baseline.fuel_ml),
            residual: row.mean.residual,
        }),
    )
    .map_err(|source| SweepError::Csv {
        path: path.clone(),
        source,
    })?;

    let path = out.join(MOE_TIMESERIES);
    output::write_rows(
        &path,
        runs.iter().flat_map(|r| {
            r.moe.iter().map(move |m| {
                let row = MoeRow::from(m);
                MoeSeriesRow {
                    mpr: r.mpr,
                    seed: r.seed,
                    window_start: row.window_start,
                    approach: row.approach,
                    mean_travel_time: row.mean_travel_time,
                    density: row.density,
                    exits: row.exits,
                    cumulative_exits: row.cumulative_exits,
                    delay: row.delay,
                    fuel_ml: row.fuel_ml,
                    cumulative_fuel_ml: row.cumulative_fuel_ml,
                }
            })
        }),
    )
    .map_err(|source| SweepError::Csv {
        path: path.clone(),
        source,
    })?;

    Ok(SweepReport {
        runs,
        summary,
        violations,
    })
}

/// Improvement table, one row per MPR.
pub fn format_table(report: &SweepReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>6}  {:>14}  {:>10}  {:>8}  {:>14}  {:>12}  {:>8}",
        "MPR %", "travel time %", "delay %", "fuel %", "travel time s", "fuel mL", "residual"
    );
    for row in &report.summary {
        let pct = |f: fn(&Improvement) -> f64| {
            row.improvement
                .as_ref()
                .map_or("-".to_string(), |i| format!("{:.1}", f(i)))
        };
        let _ = writeln!(
            s,
            "{:>6}  {:>14}  {:>10}  {:>8}  {:>14.1}  {:>12.1}  {:>8}",
            format!("{:.0}", row.mpr * 100.0),
            pct(|i| i.travel_time_pct),
            pct(|i| i.delay_pct),
            pct(|i| i.fuel_pct),
            row.mean.travel_time,
            row.mean.fuel_ml,
            row.mean.residual
        );
    }
    s
}
