//! Anchored estimates of the locally pullback attracting solution `x^r_−`
//! and the locally pullback repelling solution `x^r_+`.
//!
//! Starting on the quasi-static branch at ever earlier (attractor) or later
//! (repeller) anchor times, successive solutions are compared on a set of
//! checkpoints until they agree.

use serde::Serialize;
use thiserror::Error;

use super::{solve_ivp_with, IntegrateError, SolverOptions, Status, Trajectory};
use crate::equilibria::QuasiStaticBranch;
use crate::model::ModelSpec;

pub const DEFAULT_MAX_ANCHORS: usize = 50;
const DEFAULT_CHECKPOINTS: usize = 401;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PullbackError {
    #[error("pullback estimate did not converge after {anchors} anchors (last gap {gap:.3e})")]
    NoConvergence { anchors: usize, gap: f64 },
    #[error("pullback estimate escapes at t={t_escape} before reaching the window")]
    Escape { t_escape: f64, direction: f64 },
    #[error("invalid pullback request: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PullbackSide {
    Attractor,
    Repeller,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PullbackOptions {
    /// Agreement required between successive anchors.
    pub tol: f64,
    /// Anchor spacing `Δs`; `10/r` when unset.
    pub anchor_spacing: Option<f64>,
    pub max_anchors: usize,
    pub checkpoints: usize,
    /// Integrator tolerance; `max(tol/100, 1e-13)` when unset.
    pub integration_tol: Option<f64>,
}

impl PullbackOptions {
    pub fn new(tol: f64) -> Self {
        PullbackOptions {
            tol,
            anchor_spacing: None,
            max_anchors: DEFAULT_MAX_ANCHORS,
            checkpoints: DEFAULT_CHECKPOINTS,
            integration_tol: None,
        }
    }

    fn solver_tol(&self) -> f64 {
        self.integration_tol.unwrap_or((self.tol * 1e-2).max(1e-13))
    }
}

#[derive(Debug, Clone)]
pub struct PullbackSolution {
    pub side: PullbackSide,
    pub r: f64,
    /// Where the estimate is trusted; shortened at an escape.
    pub window: (f64, f64),
    pub trajectory: Trajectory,
    pub anchor_times: Vec<f64>,
    pub convergence_gap: f64,
    /// Gap after each anchor beyond the first.
    pub gap_history: Vec<f64>,
}

impl PullbackSolution {
    /// Estimate at `t`; `None` outside the trusted window.
    pub fn eval(&self, t: f64) -> Option<f64> {
        if t < self.window.0 || t > self.window.1 {
            return None;
        }
        self.trajectory.eval(t)
    }

    pub fn escape_time(&self) -> Option<f64> {
        self.trajectory.escape_time()
    }

    /// Uniform sample times across the trusted window.
    pub fn checkpoints(&self, count: usize) -> Vec<f64> {
        linspace(self.window.0, self.window.1, count)
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|k| if k + 1 == n { b } else { a + (b - a) * k as f64 / (n - 1) as f64 }).collect()
}

/// `x^r_−` on `window`, anchored on the stable branch.
pub fn estimate_pullback_attractor(
    model: &ModelSpec,
    branch: &QuasiStaticBranch,
    r: f64,
    window: (f64, f64),
    opts: &PullbackOptions,
) -> Result<PullbackSolution, PullbackError> {
    estimate(model, branch, r, window, opts, PullbackSide::Attractor)
}

/// `x^r_+` on `window`, anchored on the unstable branch and integrated
/// backward in time.
pub fn estimate_pullback_repeller(
    model: &ModelSpec,
    branch: &QuasiStaticBranch,
    r: f64,
    window: (f64, f64),
    opts: &PullbackOptions,
) -> Result<PullbackSolution, PullbackError> {
    estimate(model, branch, r, window, opts, PullbackSide::Repeller)
}

struct Run {
    trajectory: Trajectory,
    /// `None` where the run has left the comparable range.
    values: Vec<Option<f64>>,
}

fn estimate(
    model: &ModelSpec,
    branch: &QuasiStaticBranch,
    r: f64,
    window: (f64, f64),
    opts: &PullbackOptions,
    side: PullbackSide,
) -> Result<PullbackSolution, PullbackError> {
    let (t_lo, t_hi) = window;
    if !(t_lo < t_hi) {
        return Err(PullbackError::InvalidInput(format!("window [{t_lo}, {t_hi}] is empty")));
    }
    if !(r > 0.0) {
        return Err(PullbackError::InvalidInput(format!("rate r must be > 0, got {r}")));
    }
    let spacing = opts.anchor_spacing.unwrap_or(10.0 / r);
    let solver = SolverOptions::new(opts.solver_tol());
    let cutoff = model.x_bound().sqrt();
    let checkpoints = linspace(t_lo, t_hi, opts.checkpoints);

    let run = |k: usize| -> Result<(f64, Run), PullbackError> {
        let (s, target) = match side {
            PullbackSide::Attractor => (t_lo - k as f64 * spacing, t_hi),
            PullbackSide::Repeller => (t_hi + k as f64 * spacing, t_lo),
        };
        let trajectory = solve_ivp_with(model, r, s, branch.value_at(r * s), target, &solver)?;
        let values = checkpoints
            .iter()
            .map(|&t| trajectory.eval(t).filter(|x| x.abs() <= cutoff))
            .collect();
        Ok((s, Run { trajectory, values }))
    };

    let (s0, mut prev) = run(1)?;
    let mut anchors = vec![s0];
    let mut history = Vec::new();
    for k in 2..=opts.max_anchors.max(2) {
        let (s, cur) = run(k)?;
        anchors.push(s);
        let gap = run_gap(&prev, &cur);
        history.push(gap);
        if gap < opts.tol {
            return finish(side, r, window, cur.trajectory, anchors, gap, history);
        }
        prev = cur;
    }
    Err(PullbackError::NoConvergence { anchors: anchors.len(), gap: history.last().copied().unwrap_or(f64::INFINITY) })
}

fn run_gap(a: &Run, b: &Run) -> f64 {
    let mut gap: f64 = 0.0;
    for (x, y) in a.values.iter().zip(&b.values) {
        match (x, y) {
            (Some(x), Some(y)) => gap = gap.max((x - y).abs()),
            (None, None) => {}
            // one run is still comparable where the other has gone
            _ => {
                let one_escaped = a.trajectory.escape_time().is_some() != b.trajectory.escape_time().is_some();
                if one_escaped {
                    return f64::INFINITY;
                }
            }
        }
    }
    gap
}

fn finish(
    side: PullbackSide,
    r: f64,
    window: (f64, f64),
    trajectory: Trajectory,
    anchor_times: Vec<f64>,
    convergence_gap: f64,
    gap_history: Vec<f64>,
) -> Result<PullbackSolution, PullbackError> {
    let (mut lo, mut hi) = window;
    if let Status::Escaped { t_escape } = trajectory.status() {
        let samples = trajectory.samples();
        let far = if side == PullbackSide::Attractor { samples.last() } else { samples.first() };
        let direction = far.map(|s| s.x.signum()).unwrap_or(0.0);
        match side {
            PullbackSide::Attractor if t_escape <= lo => return Err(PullbackError::Escape { t_escape, direction }),
            PullbackSide::Attractor => hi = hi.min(t_escape),
            PullbackSide::Repeller if t_escape >= hi => return Err(PullbackError::Escape { t_escape, direction }),
            PullbackSide::Repeller => lo = lo.max(t_escape),
        }
    }
    let trajectory = trajectory.cropped(lo, hi);
    Ok(PullbackSolution { side, r, window: (lo, hi), trajectory, anchor_times, convergence_gap, gap_history })
}
