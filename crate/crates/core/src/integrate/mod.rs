//! Adaptive integration of `ẋ = f(x, Λ(r t))` and pullback estimation.
//!
//! The stepper is the Dormand–Prince 5(4) pair with PI step control. Dense
//! output uses quintic Hermite interpolation built from `x`, `ẋ` and `ẍ` at
//! both ends of each step, where `ẍ = ∂ₓf·f + ∂_λf·Λ'(rt)·r` is exact.

mod pullback;

pub use pullback::{
    estimate_pullback_attractor, estimate_pullback_repeller, PullbackError, PullbackOptions, PullbackSide,
    PullbackSolution, DEFAULT_MAX_ANCHORS,
};

use serde::Serialize;
use thiserror::Error;

use crate::model::ModelSpec;

/// Fraction of `x_max` at which a trajectory is declared escaped.
pub const ESCAPE_FRACTION: f64 = 0.99;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrateError {
    #[error("step size underflow at t={t} (h={h:.3e} < h_min={h_min:.3e})")]
    ToleranceFailure { t: f64, h: f64, h_min: f64 },
    #[error("invalid integration request: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Status {
    Completed,
    Escaped { t_escape: f64 },
}

/// `x`, `ẋ`, `ẍ` at one accepted step boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub x: f64,
    pub dx: f64,
    pub ddx: f64,
}

/// A computed solution with dense output. Samples are stored in increasing
/// `t` regardless of the integration direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    r: f64,
    t0: f64,
    x0: f64,
    samples: Vec<Sample>,
    status: Status,
}

fn hermite5(a: &Sample, b: &Sample, t: f64) -> f64 {
    let h = b.t - a.t;
    if h == 0.0 {
        return a.x;
    }
    let s = (t - a.t) / h;
    let (s2, s3) = (s * s, s * s * s);
    let (s4, s5) = (s3 * s, s3 * s2);
    let h00 = 1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5;
    let h10 = s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5;
    let h20 = 0.5 * (s2 - 3.0 * s3 + 3.0 * s4 - s5);
    let h01 = 10.0 * s3 - 15.0 * s4 + 6.0 * s5;
    let h11 = -4.0 * s3 + 7.0 * s4 - 3.0 * s5;
    let h21 = 0.5 * (s3 - 2.0 * s4 + s5);
    h00 * a.x + h * h10 * a.dx + h * h * h20 * a.ddx + h01 * b.x + h * h11 * b.dx + h * h * h21 * b.ddx
}

impl Trajectory {
    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn escape_time(&self) -> Option<f64> {
        match self.status {
            Status::Escaped { t_escape } => Some(t_escape),
            Status::Completed => None,
        }
    }

    /// Covered time interval `[t_min, t_max]`.
    pub fn t_range(&self) -> (f64, f64) {
        (self.samples[0].t, self.samples[self.samples.len() - 1].t)
    }

    /// State at the far end of the integration.
    pub fn final_state(&self) -> f64 {
        let last = if self.samples[0].t == self.t0 { self.samples.len() - 1 } else { 0 };
        self.samples[last].x
    }

    pub fn final_time(&self) -> f64 {
        let last = if self.samples[0].t == self.t0 { self.samples.len() - 1 } else { 0 };
        self.samples[last].t
    }

    /// Dense output; `None` outside the covered range.
    pub fn eval(&self, t: f64) -> Option<f64> {
        let (lo, hi) = self.t_range();
        if !(lo..=hi).contains(&t) {
            return None;
        }
        let n = self.samples.len();
        if n == 1 {
            return Some(self.samples[0].x);
        }
        let i = self.samples.partition_point(|s| s.t <= t).clamp(1, n - 1);
        Some(hermite5(&self.samples[i - 1], &self.samples[i], t))
    }

    /// Keeps just the steps that overlap `[lo, hi]`.
    pub fn cropped(&self, lo: f64, hi: f64) -> Trajectory {
        let n = self.samples.len();
        let first = self.samples.partition_point(|s| s.t <= lo).saturating_sub(1);
        let last = self.samples.partition_point(|s| s.t < hi).min(n - 1);
        Trajectory { samples: self.samples[first..=last.max(first)].to_vec(), ..self.clone() }
    }
}

/// Integrator settings beyond the tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    /// Overrides the model's escape bound.
    pub x_max: Option<f64>,
    /// Largest allowed step; unbounded when `None`.
    pub h_max: Option<f64>,
}

impl SolverOptions {
    pub fn new(tol: f64) -> Self {
        SolverOptions { tol, x_max: None, h_max: None }
    }
}

// Dormand–Prince 5(4)
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order weights minus fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct Rhs<'a> {
    model: &'a ModelSpec,
    r: f64,
}

impl Rhs<'_> {
    fn f(&self, t: f64, x: f64) -> f64 {
        self.model.rhs(self.r, t, x)
    }

    fn sample(&self, t: f64, x: f64, dx: f64) -> Sample {
        let field = self.model.field();
        let ramp = self.model.ramp();
        let lambda = ramp.eval(self.r * t);
        let ddx = field.dx(x, lambda) * dx + field.param_deriv(x, lambda) * ramp.deriv(self.r * t) * self.r;
        Sample { t, x, dx, ddx }
    }
}

/// Solves `ẋ = f(x, Λ(r t))`, `x(t0) = x0`, from `t0` to `t1` (either direction).
pub fn solve_ivp(model: &ModelSpec, r: f64, t0: f64, x0: f64, t1: f64, tol: f64) -> Result<Trajectory, IntegrateError> {
    solve_ivp_with(model, r, t0, x0, t1, &SolverOptions::new(tol))
}

pub fn solve_ivp_with(
    model: &ModelSpec,
    r: f64,
    t0: f64,
    x0: f64,
    t1: f64,
    opts: &SolverOptions,
) -> Result<Trajectory, IntegrateError> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(IntegrateError::InvalidInput(format!("rate r must be >= 0, got {r}")));
    }
    if !(opts.tol > 0.0) {
        return Err(IntegrateError::InvalidInput(format!("tolerance must be > 0, got {}", opts.tol)));
    }
    if t1 == t0 || !t0.is_finite() || !t1.is_finite() || !x0.is_finite() {
        return Err(IntegrateError::InvalidInput(format!("need finite t0 != t1 and x0 (t0={t0}, t1={t1}, x0={x0})")));
    }
    let x_max = opts.x_max.unwrap_or_else(|| model.x_bound());
    let escape = ESCAPE_FRACTION * x_max;
    let rhs = Rhs { model, r };
    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();
    let h_min = 1e-12 * span;
    let h_max = opts.h_max.unwrap_or(span).min(span);
    let tol = opts.tol;

    let mut t = t0;
    let mut x = x0;
    let mut k = [0.0; 7];
    k[0] = rhs.f(t, x);
    let mut samples = vec![rhs.sample(t, x, k[0])];

    if x.abs() >= escape {
        return Ok(Trajectory { r, t0, x0, samples, status: Status::Escaped { t_escape: t0 } });
    }

    let scale0 = tol * x.abs().max(1.0);
    let mut h = (0.01 * (scale0 / k[0].abs().max(1e-300)).powf(0.2)).clamp(h_min.max(1e-6 * span), h_max);
    let mut err_prev: f64 = 1e-4;
    let mut status = Status::Completed;

    while (t1 - t) * dir > 0.0 {
        if h < h_min {
            return Err(IntegrateError::ToleranceFailure { t, h, h_min });
        }
        let last = h >= (t1 - t).abs();
        let step = if last { t1 - t } else { dir * h };
        for i in 1..7 {
            let xi = x + step * (0..i).map(|j| A[i][j] * k[j]).sum::<f64>();
            k[i] = rhs.f(t + C[i] * step, xi);
        }
        let x_new = x + step * (0..6).map(|j| A[6][j] * k[j]).sum::<f64>();
        if !x_new.is_finite() || x_new.abs() > x_max || k.iter().any(|v| !v.is_finite()) {
            h *= 0.5;
            continue;
        }
        let err_abs = (step * E.iter().zip(&k).map(|(e, v)| e * v).sum::<f64>()).abs();
        let err = err_abs / (tol * x.abs().max(x_new.abs()).max(1.0));
        if err <= 1.0 {
            t = if last { t1 } else { t + step };
            x = x_new;
            k[0] = k[6];
            let prev = *samples.last().unwrap();
            let cur = rhs.sample(t, x, k[0]);
            samples.push(cur);
            if x.abs() >= escape {
                let t_escape = locate_crossing(&prev, &cur, escape);
                status = Status::Escaped { t_escape };
                break;
            }
            let factor = if err == 0.0 { 5.0 } else { 0.9 * err.powf(-0.7 / 5.0) * err_prev.powf(0.4 / 5.0) };
            h = (h * factor.clamp(0.2, 5.0)).min(h_max);
            err_prev = err.max(1e-4);
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
        }
    }

    if dir < 0.0 {
        samples.reverse();
    }
    Ok(Trajectory { r, t0, x0, samples, status })
}

/// Time in `[a.t, b.t]` where the interpolant first reaches `|x| = level`.
fn locate_crossing(a: &Sample, b: &Sample, level: f64) -> f64 {
    let (mut lo, mut hi) = (a.t, b.t);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if hermite5(a, b, mid).abs() >= level {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{quad_arctan, BoundBox, Monomial, PolynomialField, StandardRamp};
    use std::sync::Arc;

    pub(crate) fn frozen(terms: Vec<Monomial>) -> ModelSpec {
        let field = PolynomialField::new(terms, BoundBox::new(-1e6, 1e6, 0.0, 0.0));
        ModelSpec::new("frozen", Arc::new(field), Arc::new(StandardRamp::constant(0.0))).unwrap()
    }

    #[test]
    fn exponential_decay() {
        let m = frozen(vec![Monomial::new(-1.0, 1, 0)]);
        let traj = solve_ivp(&m, 1.0, 0.0, 1.0, 1.0, 1e-10).unwrap();
        assert_eq!(traj.status(), Status::Completed);
        assert!((traj.final_state() - 0.367879).abs() < 1e-6);
        assert!((traj.final_state() - (-1.0f64).exp()).abs() < 1e-8);
        for &t in &[0.13, 0.5, 0.77] {
            assert!((traj.eval(t).unwrap() - (-t as f64).exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn quadratic_blow_up() {
        let m = frozen(vec![Monomial::new(1.0, 2, 0)]);
        let traj = solve_ivp(&m, 1.0, 0.0, 1.0, 2.0, 1e-8).unwrap();
        let t_star = traj.escape_time().expect("should escape");
        assert!((t_star - 1.0).abs() < 1e-3, "t* = {t_star}");
        let last = traj.samples().last().unwrap();
        assert!(last.x.abs() >= ESCAPE_FRACTION * 1e6 && last.x.abs() <= 1e6);
        assert!(traj.samples().iter().all(|s| s.x.abs() <= 1e6));
    }

    #[test]
    fn backward_integration_stores_increasing_times() {
        let m = frozen(vec![Monomial::new(1.0, 1, 0)]);
        let traj = solve_ivp(&m, 1.0, 2.0, 1.0, 0.0, 1e-10).unwrap();
        assert!(traj.samples().windows(2).all(|w| w[0].t < w[1].t));
        assert!((traj.final_state() - (-2.0f64).exp()).abs() < 1e-9);
        assert_eq!(traj.final_time(), 0.0);
        assert!((traj.eval(1.0).unwrap() - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn global_error_scales_with_tolerance() {
        let m = frozen(vec![Monomial::new(-1.0, 1, 0)]);
        let mut errs = Vec::new();
        for tol in [1e-6, 1e-8, 1e-10] {
            let traj = solve_ivp(&m, 1.0, 0.0, 1.0, 5.0, tol).unwrap();
            let err = (traj.final_state() - (-5.0f64).exp()).abs();
            assert!(err < 10.0 * tol, "tol {tol}: err {err}");
            errs.push(err);
        }
        assert!(errs[2] < errs[0]);
    }

    #[test]
    fn slow_ramp_tracks_stable_branch() {
        let zeta: f64 = 0.1;
        let m = quad_arctan(zeta).unwrap();
        let r = 0.2;
        let x0 = -1.0 + zeta.sqrt();
        let a = solve_ivp(&m, r, -40.0, x0, 40.0, 1e-9).unwrap();
        let b = solve_ivp(&m, r, -40.0, x0, 40.0, 1e-11).unwrap();
        assert_eq!(a.status(), Status::Completed);
        assert!((a.final_state() - b.final_state()).abs() < 1e-7);
        let branch_end = m.ramp().eval(r * 40.0) + zeta.sqrt();
        assert!((a.final_state() - branch_end).abs() < 1e-1);
    }

    #[test]
    fn fast_ramp_escapes() {
        // past the critical rate the state cannot follow the moving equilibrium
        let zeta: f64 = 0.1;
        let m = quad_arctan(zeta).unwrap();
        let traj = solve_ivp(&m, 0.5, -40.0, -1.0 + zeta.sqrt(), 40.0, 1e-9).unwrap();
        assert!(traj.escape_time().is_some());
    }

    #[test]
    fn cropping_keeps_window() {
        let m = frozen(vec![Monomial::new(-1.0, 1, 0)]);
        let traj = solve_ivp(&m, 1.0, 0.0, 1.0, 10.0, 1e-10).unwrap();
        let c = traj.cropped(2.0, 3.0);
        let (lo, hi) = c.t_range();
        assert!(lo <= 2.0 && hi >= 3.0 && c.samples().len() < traj.samples().len());
        assert_eq!(c.eval(2.5), traj.eval(2.5));
    }
}
