use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use roundabout_core::geometry::Approach;
use roundabout_core::scenario::{ScenarioError, ScenarioFile};
use roundabout_core::sweep::{format_table, run_sweep, SweepError, SweepOptions};

const EXIT_CONFIG: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

#[derive(Parser)]
#[command(
    name = "roundabout",
    version,
    about = "Mixed-traffic roundabout experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario's MPR sweep and write every CSV below OUT.
    Run {
        /// Scenario TOML file.
        scenario: PathBuf,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
        /// Penetration rates as fractions, overriding the scenario (e.g. 0,0.5,1).
        #[arg(long, value_delimiter = ',')]
        mpr: Option<Vec<f64>>,
        /// Seeds, overriding the scenario.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Parallel runs; defaults to every core.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Check a scenario file and print its derived quantities.
    Validate {
        /// Scenario TOML file.
        scenario: PathBuf,
    },
}

enum Failure {
    Config(anyhow::Error),
    Invariant(Vec<String>),
    Other(anyhow::Error),
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::Config(e.into())
    }
}

fn load(path: &Path) -> Result<ScenarioFile, Failure> {
    ScenarioFile::load(path)
        .map_err(|e| Failure::Config(anyhow::Error::new(e).context(format!("{}", path.display()))))
}

fn run(
    path: &Path,
    out: &Path,
    mpr: Option<Vec<f64>>,
    seeds: Option<Vec<u64>>,
    jobs: Option<usize>,
) -> Result<(), Failure> {
    let scenario = load(path)?;
    let mut opts = SweepOptions::from_scenario(&scenario);
    if let Some(m) = mpr {
        opts.mpr = m;
    }
    if let Some(s) = seeds {
        opts.seeds = s;
    }
    if jobs == Some(0) {
        return Err(Failure::Config(anyhow::anyhow!(
            "--jobs must be at least 1"
        )));
    }
    opts.jobs = jobs;

    let report = run_sweep(&scenario, &opts, out).map_err(|e| match e {
        SweepError::Scenario(e) => Failure::from(e),
        e => Failure::Other(anyhow::Error::new(e).context("sweep failed")),
    })?;
    print!("{}", format_table(&report));
    println!("{} runs written to {}", report.runs.len(), out.display());
    if report.violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invariant(
            report.violations.iter().map(ToString::to_string).collect(),
        ))
    }
}

fn validate(path: &Path) -> Result<(), Failure> {
    let s = load(path)?;
    let g = &s.geometry;
    println!("{}: ok", path.display());
    println!(
        "free-flow time eastbound: {:.3} s",
        g.free_flow_time(Approach::Eastbound)
    );
    println!(
        "free-flow time westbound: {:.3} s",
        g.free_flow_time(Approach::Westbound)
    );
    println!(
        "mean generation headway: {:.3} s",
        3600.0 / s.sim.demand_per_approach
    );
    println!("vehicles per approach: {}", s.sim.total_vehicles / 2);
    println!("circulating arc L_r: {:.3} m", g.circulating_arc);
    for a in [Approach::Eastbound, Approach::Westbound] {
        println!(
            "{}: entry [0, {}) control [{}, {}) merging [{}, {}) exit ends {}",
            a.as_str(),
            g.control_entry(),
            g.control_entry(),
            g.control_exit(),
            g.merge_entry(a),
            g.merge_exit(a),
            g.route_length(a)
        );
    }
    println!("sweep: mpr {:?} seeds {:?}", s.sweep.mpr, s.sweep.seeds);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            out,
            mpr,
            seeds,
            jobs,
        } => run(&scenario, &out, mpr, seeds, jobs),
        Command::Validate { scenario } => validate(&scenario),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Invariant(list)) => {
            for v in list {
                eprintln!("invariant violated: {v}");
            }
            ExitCode::from(EXIT_INVARIANT)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
