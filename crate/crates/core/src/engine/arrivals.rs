//! Seeded vehicle generation.
//!
//! Headways per approach are shifted exponentials: a fixed minimum plus an
//! exponential part. The exponential part is rescaled so exactly the
//! configured number of vehicles fall inside the dispatch window, and the
//! minimum headway is preserved.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::{EngineError, SimConfig};
use crate::geometry::Approach;
use crate::vehicle::VehicleClass;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub t: f64,
    pub vclass: VehicleClass,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Spawn schedule for each approach, indexed by [`Approach::index`].
///
/// Times and class labels come from separate random streams, so changing
/// the penetration rate leaves the arrival times untouched and the CAV sets
/// are nested across rates.
pub fn generate_arrivals(cfg: &SimConfig) -> Result<[Vec<Arrival>; 2], EngineError> {
    let per_approach = cfg.vehicles_per_approach();
    let shift = cfg.min_generation_headway;
    let window = cfg.dispatch_window;
    let slots = per_approach as f64 + 1.0;
    if per_approach == 0 || window <= slots * shift {
        return Err(EngineError::Config(format!(
            "{per_approach} vehicles per approach with {shift} s minimum headway do not fit in a {window} s window"
        )));
    }
    let mean_headway = 3600.0 / cfg.demand_per_approach;
    let exp_mean = (mean_headway - shift).max(1e-3);
    let exp = Exp::new(1.0 / exp_mean).map_err(|e| EngineError::Config(e.to_string()))?;

    let mut schedule: [Vec<Arrival>; 2] = [Vec::new(), Vec::new()];
    for approach in Approach::ALL {
        let k = approach.index() as u64;
        let mut time_rng = stream_rng(cfg.seed, 2 * k);
        let mut class_rng = stream_rng(cfg.seed, 2 * k + 1);

        // One extra headway closes the window after the last vehicle.
        let random_parts: Vec<f64> = (0..=per_approach)
            .map(|_| exp.sample(&mut time_rng))
            .collect();
        let total: f64 = random_parts.iter().sum();
        let scale = (window - slots * shift) / total;

        let mut t = 0.0;
        schedule[approach.index()] = random_parts[..per_approach]
            .iter()
            .map(|part| {
                t += shift + part * scale;
                let vclass = if class_rng.random::<f64>() < cfg.mpr {
                    VehicleClass::Cav
                } else {
                    VehicleClass::Human
                };
                Arrival { t, vclass }
            })
            .collect();
    }
    Ok(schedule)
}
