//! Closed-form minimum-energy trajectories for a double integrator.
//!
//! Minimising `½∫u²dt` with `p'' = u` and fixed endpoint position and speed
//! gives a control that is affine in time, so position is a cubic. The
//! polynomial is stored in local time `τ = t - valid_from`:
//!
//! ```text
//! p(τ) = a·τ³/6 + b·τ²/2 + c·τ + d
//! v(τ) = a·τ²/2 + b·τ + c
//! u(τ) = a·τ + b
//! ```
//!
//! Using local time keeps the linear system well conditioned when plans are
//! issued late in a 1200 s run.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Shortest horizon that can be planned.
pub const MIN_HORIZON: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("planning horizon {horizon:e} s is below {MIN_HORIZON:e} s")]
    DegenerateHorizon { horizon: f64 },
    #[error("time {t} s is outside the plan window [{from}, {to}]")]
    OutOfValidity { t: f64, from: f64, to: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryConditions {
    pub t0: f64,
    pub tf: f64,
    pub p0: f64,
    pub v0: f64,
    pub pf: f64,
    pub vf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub valid_from: f64,
    pub valid_to: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicSample {
    pub p: f64,
    pub v: f64,
    pub u: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActuationLimits {
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for ActuationLimits {
    fn default() -> Self {
        Self {
            u_min: -4.5,
            u_max: 4.5,
            v_min: 1.0,
            v_max: 15.6,
        }
    }
}

impl ActuationLimits {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.u_min < 0.0 && self.u_max > 0.0) {
            return Err(format!(
                "u_min < 0 < u_max violated ({} / {})",
                self.u_min, self.u_max
            ));
        }
        if !(self.v_min > 0.0) {
            return Err(format!(
                "v_min must be > 0 (got {}): the latest merge time t0 + L/v_min divides by it",
                self.v_min
            ));
        }
        if !(self.v_min < self.v_max) {
            return Err(format!(
                "v_min < v_max violated ({} / {})",
                self.v_min, self.v_max
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Bound {
    UMin,
    UMax,
    VMin,
    VMax,
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bound::UMin => "u_min",
            Bound::UMax => "u_max",
            Bound::VMin => "v_min",
            Bound::VMax => "v_max",
        })
    }
}

/// Worst violation of one bound over the plan window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub bound: Bound,
    /// Absolute time of the worst violation.
    pub t: f64,
    pub value: f64,
}

/// Solves a dense linear system in place by Gaussian elimination with
/// partial pivoting.
fn solve_linear<const N: usize>(mut m: [[f64; N]; N], mut rhs: [f64; N]) -> Option<[f64; N]> {
    for col in 0..N {
        let pivot = (col..N).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < f64::EPSILON {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..N {
            let factor = m[row][col] / m[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..N {
                m[row][k] -= factor * m[col][k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = [0.0; N];
    for row in (0..N).rev() {
        let tail: f64 = (row + 1..N).map(|k| m[row][k] * x[k]).sum();
        x[row] = (rhs[row] - tail) / m[row][row];
    }
    Some(x)
}

/// Minimum-energy plan meeting `bc` at both ends.
pub fn solve_cubic(bc: &BoundaryConditions) -> Result<TrajectoryCoefficients, TrajectoryError> {
    let horizon = bc.tf - bc.t0;
    if !(horizon >= MIN_HORIZON) {
        return Err(TrajectoryError::DegenerateHorizon { horizon });
    }
    let t = horizon;
    // Unknowns (a, b, c, d); rows: p(0), v(0), p(T), v(T).
    let m = [
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 1.0, 0.0],
        [t * t * t / 6.0, t * t / 2.0, t, 1.0],
        [t * t / 2.0, t, 1.0, 0.0],
    ];
    let [a, b, c, d] = solve_linear(m, [bc.p0, bc.v0, bc.pf, bc.vf])
        .ok_or(TrajectoryError::DegenerateHorizon { horizon })?;
    Ok(TrajectoryCoefficients {
        a,
        b,
        c,
        d,
        valid_from: bc.t0,
        valid_to: bc.tf,
    })
}

impl TrajectoryCoefficients {
    /// Uniform motion at `speed` from `p0`, valid over `[from, to]`.
    pub fn cruise(p0: f64, speed: f64, from: f64, to: f64) -> Self {
        Self {
            a: 0.0,
            b: 0.0,
            c: speed,
            d: p0,
            valid_from: from,
            valid_to: to,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.valid_to - self.valid_from
    }

    /// Polynomial evaluation without the window check.
    pub fn sample(&self, t: f64) -> KinematicSample {
        let tau = t - self.valid_from;
        let (a, b, c, d) = (self.a, self.b, self.c, self.d);
        KinematicSample {
            p: ((a * tau / 6.0 + b / 2.0) * tau + c) * tau + d,
            v: (a * tau / 2.0 + b) * tau + c,
            u: a * tau + b,
        }
    }

    pub fn eval(&self, t: f64) -> Result<KinematicSample, TrajectoryError> {
        if t < self.valid_from || t > self.valid_to {
            return Err(TrajectoryError::OutOfValidity {
                t,
                from: self.valid_from,
                to: self.valid_to,
            });
        }
        Ok(self.sample(t))
    }

    /// Exact bound check: `u` is affine so its extremes sit at the window
    /// ends; `v` is quadratic with at most one interior vertex.
    pub fn check_feasible(&self, limits: &ActuationLimits) -> Vec<Violation> {
        let end = self.horizon();
        let u_candidates = [0.0, end];
        let mut v_candidates = vec![0.0, end];
        if self.a != 0.0 {
            let vertex = -self.b / self.a;
            if vertex > 0.0 && vertex < end {
                v_candidates.push(vertex);
            }
        }
        let local = |tau: f64| self.sample(self.valid_from + tau);

        let mut violations = Vec::new();
        let mut worst = |bound: Bound,
                         taus: &[f64],
                         value_of: &dyn Fn(f64) -> f64,
                         excess: &dyn Fn(f64) -> f64| {
            let found = taus
                .iter()
                .map(|&tau| (tau, value_of(tau)))
                .filter(|&(_, value)| excess(value) > 0.0)
                .reduce(|best, x| {
                    if excess(x.1) > excess(best.1) {
                        x
                    } else {
                        best
                    }
                });
            if let Some((tau, value)) = found {
                violations.push(Violation {
                    bound,
                    t: self.valid_from + tau,
                    value,
                });
            }
        };
        worst(Bound::UMin, &u_candidates, &|tau| local(tau).u, &|u| {
            limits.u_min - u
        });
        worst(Bound::UMax, &u_candidates, &|tau| local(tau).u, &|u| {
            u - limits.u_max
        });
        worst(Bound::VMin, &v_candidates, &|tau| local(tau).v, &|v| {
            limits.v_min - v
        });
        worst(Bound::VMax, &v_candidates, &|tau| local(tau).v, &|v| {
            v - limits.v_max
        });
        violations
    }

    /// `½∫(aτ + b)² dτ` over the window.
    pub fn cost(&self) -> f64 {
        let t = self.horizon();
        let (a, b) = (self.a, self.b);
        0.5 * (a * a * t * t * t / 3.0 + a * b * t * t + b * b * t)
    }

    /// Lowest speed reached over the window.
    pub fn min_speed(&self) -> f64 {
        let end = self.horizon();
        let mut lowest = self
            .sample(self.valid_from)
            .v
            .min(self.sample(self.valid_to).v);
        if self.a != 0.0 {
            let vertex = -self.b / self.a;
            if vertex > 0.0 && vertex < end {
                lowest = lowest.min(self.sample(self.valid_from + vertex).v);
            }
        }
        lowest
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bc(t0: f64, tf: f64, p0: f64, v0: f64, pf: f64, vf: f64) -> BoundaryConditions {
        BoundaryConditions {
            t0,
            tf,
            p0,
            v0,
            pf,
            vf,
        }
    }

    /// Double numerical integration of u(t) with a fine midpoint rule; does
    /// not use the closed-form p or v.
    fn integrate(coeffs: &TrajectoryCoefficients, p0: f64, v0: f64, steps: usize) -> (f64, f64) {
        let h = coeffs.horizon() / steps as f64;
        let (mut p, mut v) = (p0, v0);
        for k in 0..steps {
            let t = coeffs.valid_from + (k as f64 + 0.5) * h;
            let u = coeffs.a * (t - coeffs.valid_from) + coeffs.b;
            p += v * h + 0.5 * u * h * h;
            v += u * h;
        }
        (p, v)
    }

    #[test]
    fn uniform_motion_is_zero_control() {
        let c = solve_cubic(&bc(0.0, 10.0, 0.0, 10.0, 100.0, 10.0)).unwrap();
        assert!(c.a.abs() < 1e-12 && c.b.abs() < 1e-12);
        assert_relative_eq!(c.c, 10.0, epsilon = 1e-12);
        assert!(c.d.abs() < 1e-12);
        assert!(c.cost().abs() < 1e-12);
    }

    #[test]
    fn decelerating_entry_plan_matches_integration() {
        let b = bc(0.0, 24.49, 0.0, 15.6, 300.0, 8.9);
        let c = solve_cubic(&b).unwrap();
        let (p, v) = integrate(&c, b.p0, b.v0, 200_000);
        assert!((p - 300.0).abs() < 1e-6, "p = {p}");
        assert!((v - 8.9).abs() < 1e-6, "v = {v}");
    }

    #[test]
    fn time_translation_shifts_control() {
        let base = solve_cubic(&bc(0.0, 10.0, 0.0, 0.0, 50.0, 10.0)).unwrap();
        let shifted = solve_cubic(&bc(5.0, 15.0, 0.0, 0.0, 50.0, 10.0)).unwrap();
        for k in 0..=100 {
            let t = k as f64 * 0.1;
            assert_relative_eq!(
                shifted.eval(t + 5.0).unwrap().u,
                base.eval(t).unwrap().u,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn degenerate_horizon() {
        assert!(matches!(
            solve_cubic(&bc(3.0, 3.0 + 1e-7, 0.0, 1.0, 1.0, 1.0)),
            Err(TrajectoryError::DegenerateHorizon { .. })
        ));
        assert!(solve_cubic(&bc(3.0, 2.0, 0.0, 1.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn eval_examples() {
        let uniform = TrajectoryCoefficients::cruise(0.0, 10.0, 0.0, 10.0);
        let s = uniform.eval(5.0).unwrap();
        assert_eq!((s.p, s.v, s.u), (50.0, 10.0, 0.0));

        let accel = TrajectoryCoefficients {
            a: 0.0,
            b: 2.0,
            c: 0.0,
            d: 0.0,
            valid_from: 0.0,
            valid_to: 10.0,
        };
        let s = accel.eval(3.0).unwrap();
        assert_eq!((s.p, s.v, s.u), (9.0, 6.0, 2.0));

        assert!(matches!(
            accel.eval(10.5),
            Err(TrajectoryError::OutOfValidity { .. })
        ));
        assert!(matches!(
            accel.eval(-0.1),
            Err(TrajectoryError::OutOfValidity { .. })
        ));
    }

    #[test]
    fn eval_at_start_reproduces_initial_state() {
        let b = bc(12.0, 40.0, 35.0, 13.1, 300.0, 8.9);
        let c = solve_cubic(&b).unwrap();
        let s = c.eval(12.0).unwrap();
        assert_relative_eq!(s.p, 35.0, max_relative = 1e-9);
        assert_relative_eq!(s.v, 13.1, max_relative = 1e-9);
    }

    #[test]
    fn feasibility_examples() {
        let limits = ActuationLimits::default();
        assert!(TrajectoryCoefficients::cruise(0.0, 10.0, 0.0, 10.0)
            .check_feasible(&limits)
            .is_empty());

        let hard = TrajectoryCoefficients {
            a: 0.0,
            b: 5.0,
            c: 5.0,
            d: 0.0,
            valid_from: 0.0,
            valid_to: 10.0,
        };
        let v = hard.check_feasible(&ActuationLimits {
            v_max: 100.0,
            ..limits.clone()
        });
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].bound, Bound::UMax);
        assert_eq!(v[0].value, 5.0);
        // Constant control: both ends tie, the first is reported.
        assert_eq!(v[0].t, 0.0);

        let arch = TrajectoryCoefficients {
            a: -1.0,
            b: 5.0,
            c: 10.0,
            d: 0.0,
            valid_from: 0.0,
            valid_to: 10.0,
        };
        let report = arch.check_feasible(&limits);
        let speed = report
            .iter()
            .find(|x| x.bound == Bound::VMax)
            .expect("speed violation");
        assert_eq!(speed.t, 5.0);
        assert_relative_eq!(speed.value, 22.5, epsilon = 1e-12);

        // Dense 1 ms sampling oracle for the vertex.
        let (t_dense, v_dense) = (0..=10_000)
            .map(|k| {
                let t = k as f64 * 1e-3;
                (t, arch.sample(t).v)
            })
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        assert!((t_dense - speed.t).abs() <= 1e-3);
        assert!((v_dense - speed.value).abs() < 1e-6);
    }

    #[test]
    fn cost_examples() {
        let zero = TrajectoryCoefficients::cruise(0.0, 3.0, 0.0, 7.0);
        assert_eq!(zero.cost(), 0.0);
        let constant = TrajectoryCoefficients {
            a: 0.0,
            b: 2.0,
            c: 0.0,
            d: 0.0,
            valid_from: 0.0,
            valid_to: 10.0,
        };
        assert_relative_eq!(constant.cost(), 20.0, epsilon = 1e-12);
        let ramp = TrajectoryCoefficients {
            a: 1.0,
            b: 0.0,
            c: 0.0,
            d: 0.0,
            valid_from: 0.0,
            valid_to: 2.0,
        };
        assert_relative_eq!(ramp.cost(), 4.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn limits_validation() {
        assert!(ActuationLimits::default().validate().is_ok());
        let err = ActuationLimits {
            v_min: 0.0,
            ..Default::default()
        }
        .validate()
        .unwrap_err();
        assert!(err.contains("L/v_min"));
        assert!(ActuationLimits {
            u_min: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
