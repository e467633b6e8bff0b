//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roundabout_core::trajectory::BoundaryConditions;

/// Direct transcription of the minimum-energy problem with `n` piecewise
/// constant controls. The endpoint constraints are linear in the controls,
/// so the optimum is the minimum-norm solution of a 2 x n system.
pub fn zoh_oracle(bc: &BoundaryConditions, n: usize) -> (f64, Vec<f64>) {
    let h = (bc.tf - bc.t0) / n as f64;
    let mut a = DMatrix::<f64>::zeros(2, n);
    for k in 0..n {
        // Control k acts on [kh, (k+1)h]; its effect on the final state under
        // exact integration of p'' = u.
        a[(0, k)] = h * h * ((n - k - 1) as f64 + 0.5);
        a[(1, k)] = h;
    }
    let t = bc.tf - bc.t0;
    let rhs = Vector2::new(bc.pf - bc.p0 - bc.v0 * t, bc.vf - bc.v0);
    let gram: Matrix2<f64> = (&a * a.transpose()).fixed_view::<2, 2>(0, 0).into_owned();
    let y = gram
        .lu()
        .solve(&rhs)
        .expect("gram matrix of distinct rows is regular");
    let u: DVector<f64> = a.transpose() * DVector::from_column_slice(y.as_slice());
    let cost = 0.5 * h * u.iter().map(|x| x * x).sum::<f64>();
    (cost, u.iter().copied().collect())
}

/// Simulates the piecewise constant controls exactly and returns the final state.
pub fn zoh_endpoint(bc: &BoundaryConditions, u: &[f64]) -> (f64, f64) {
    let h = (bc.tf - bc.t0) / u.len() as f64;
    let (mut p, mut v) = (bc.p0, bc.v0);
    for &uk in u {
        p += v * h + 0.5 * uk * h * h;
        v += uk * h;
    }
    (p, v)
}

/// Boundary conditions typical of control-zone plans: horizons of a few to a
/// few tens of seconds, speeds inside the approach limits, start times across
/// a whole run.
pub fn random_instances(count: usize, seed: u64) -> Vec<BoundaryConditions> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let t0 = rng.random_range(0.0..1200.0);
            let horizon = rng.random_range(0.5..40.0);
            let v0: f64 = rng.random_range(1.0..15.6);
            let vf: f64 = rng.random_range(1.0..15.6);
            let mean = rng.random_range(1.0..15.6);
            let p0 = rng.random_range(0.0..320.0);
            BoundaryConditions {
                t0,
                tf: t0 + horizon,
                p0,
                v0,
                pf: p0 + mean * horizon,
                vf,
            }
        })
        .collect()
}
