//! Tracking certificates and pullback-based diagnostics.

use serde::Serialize;

use super::{TippingError, TippingSetup};
use crate::asymptotics::{partial_sum_to, validity_radius};
use crate::equilibria::{find_equilibria, Stability};
use crate::integrate::{estimate_pullback_attractor, estimate_pullback_repeller, PullbackError, PullbackOptions, PullbackSolution};

/// Oriented `x^r_−(0) − x^r_+(0)`; an escape before `t = 0` reads as `±∞`.
pub fn pullback_gap_at_zero(setup: &TippingSetup, r: f64, tol: f64) -> Result<f64, TippingError> {
    let opts = PullbackOptions::new(tol);
    let attractor = value_at_zero(estimate_pullback_attractor(setup.model(), setup.stable(), r, (-1.0, 0.0), &opts))?;
    let repeller = value_at_zero(estimate_pullback_repeller(setup.model(), setup.unstable(), r, (0.0, 1.0), &opts))?;
    let d = setup.orientation() * (attractor - repeller);
    Ok(if d.is_nan() { 0.0 } else { d })
}

fn value_at_zero(sol: Result<PullbackSolution, PullbackError>) -> Result<f64, TippingError> {
    match sol {
        Ok(s) => Ok(match s.eval(0.0) {
            Some(x) => x,
            None => escape_direction(&s) * f64::INFINITY,
        }),
        Err(PullbackError::Escape { direction, .. }) => Ok(direction * f64::INFINITY),
        Err(e) => Err(e.into()),
    }
}

fn escape_direction(s: &PullbackSolution) -> f64 {
    let samples = s.trajectory.samples();
    let far = match s.side {
        crate::integrate::PullbackSide::Attractor => samples.last(),
        crate::integrate::PullbackSide::Repeller => samples.first(),
    };
    far.map(|v| v.x.signum()).unwrap_or(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IndicatorSample {
    pub r: f64,
    /// `sup_t ∂ₓf(x^r_−(t), Λ(r t))` over the sampled window.
    pub value: f64,
    pub escaped: bool,
}

/// Supremum of `∂ₓf` along the attractor estimate on `window`; negative
/// values mean the attractor is uniformly contracting there.
pub fn stability_indicator(setup: &TippingSetup, r: f64, window: (f64, f64), tol: f64) -> Result<IndicatorSample, TippingError> {
    let model = setup.model();
    let sol = match estimate_pullback_attractor(model, setup.stable(), r, window, &PullbackOptions::new(tol)) {
        Ok(s) => s,
        Err(PullbackError::Escape { .. }) => return Ok(IndicatorSample { r, value: f64::INFINITY, escaped: true }),
        Err(e) => return Err(e.into()),
    };
    let value = sol
        .checkpoints(2001)
        .into_iter()
        .filter_map(|t| sol.eval(t).map(|x| model.field().dx(x, model.ramp().eval(r * t))))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(IndicatorSample { r, value, escaped: sol.escape_time().is_some() })
}

/// Largest `r` in `[r_lo, r_hi]` with a negative indicator on the slow
/// window `±tau_window`, located by a geometric scan and bisection.
pub fn indicator_crossing(
    setup: &TippingSetup,
    r_lo: f64,
    r_hi: f64,
    tau_window: f64,
    rel_tol: f64,
    tol: f64,
) -> Result<(Option<f64>, Vec<IndicatorSample>), TippingError> {
    let ind = |r: f64| stability_indicator(setup, r, (-tau_window / r, tau_window / r), tol);
    let points = 24;
    let mut curve = Vec::with_capacity(points);
    let mut good: Option<f64> = None;
    let mut bad = None;
    for k in 0..points {
        let r = r_lo * (r_hi / r_lo).powf(k as f64 / (points - 1) as f64);
        let s = ind(r)?;
        curve.push(s);
        if s.value < 0.0 {
            good = Some(r);
        } else {
            bad = Some(r);
            break;
        }
    }
    let (Some(mut lo), Some(mut hi)) = (good, bad) else {
        return Ok((good, curve));
    };
    while hi - lo > rel_tol * lo {
        let mid = 0.5 * (lo + hi);
        if ind(mid)?.value < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((Some(lo), curve))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackingVerdict {
    pub certified: bool,
    /// Always set: the error constant is fitted, not proved.
    pub empirical_constant: bool,
    /// Smallest margin by which the inequalities held (negative when one failed).
    pub worst_slack: f64,
    pub reason: String,
}

/// Checks, for grid times `t > T`, that `X^u_+ + ε < S^s_n(r,t) − Ĉ r^{n+1}`
/// and, for each further unstable equilibrium `Y^u_+` beyond `X^s_+`, that
/// `S^s_n(r,t) − Ĉ r^{n+1} < Y^u_+ − ε` (orientation-adjusted).
pub fn end_point_tracking_check(
    setup: &TippingSetup,
    n: usize,
    c_hat: f64,
    r: f64,
    epsilon: f64,
    t_after: f64,
) -> TrackingVerdict {
    let verdict = |certified: bool, worst_slack: f64, reason: String| TrackingVerdict {
        certified,
        empirical_constant: true,
        worst_slack,
        reason,
    };
    let series = setup.series_s().truncated(n);
    let rbar = validity_radius(&series, 10.0 * r.max(1.0));
    if r >= rbar {
        return verdict(false, f64::NAN, format!("r = {r} is not below the validity radius {rbar:.6}"));
    }
    let sigma = setup.orientation();
    let bound = c_hat * r.powi(n as i32 + 1);
    let xu_plus = setup.unstable().endpoint_plus();
    let model = setup.model();
    let lambda_plus = model.ramp().lambda_plus();
    let xs_plus = setup.stable().endpoint_plus();
    let others: Vec<f64> = find_equilibria(model.field(), lambda_plus)
        .map(|eq| {
            eq.into_iter()
                .filter(|e| e.stability == Stability::Unstable && sigma * (e.x - xs_plus) > 0.0)
                .map(|e| e.x)
                .collect()
        })
        .unwrap_or_default();

    let mut times: Vec<f64> = series.tau().iter().map(|tau| tau / r).filter(|&t| t > t_after).collect();
    times.push(f64::INFINITY);
    let mut worst = f64::INFINITY;
    for t in times {
        let s = if t.is_finite() { partial_sum_to(&series, n, r, t) } else { xs_plus };
        let lower = sigma * (s - xu_plus) - bound - epsilon;
        worst = worst.min(lower);
        for &y in &others {
            worst = worst.min(sigma * (y - s) + bound - epsilon);
        }
    }
    if worst > 0.0 {
        verdict(true, worst, format!("inequalities hold for all grid times t > {t_after}"))
    } else {
        verdict(false, worst, "tracking inequality fails at some grid time".to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProximityVerdict {
    pub found: bool,
    pub t_epsilon: Option<f64>,
    pub caveat: &'static str,
}

const PROXIMITY_CAVEAT: &str = "late-time proximity implies end-point tracking only beyond a threshold time that cannot be computed";

/// Looks for `t > T` with `|x^r_−(t) − X^s_+| < ε` on the attractor estimate.
pub fn late_proximity_check(setup: &TippingSetup, r: f64, epsilon: f64, t_after: f64, tol: f64) -> Result<ProximityVerdict, TippingError> {
    let span = (60.0 / r).max(20.0);
    let window = (t_after, t_after + span);
    let not_found = ProximityVerdict { found: false, t_epsilon: None, caveat: PROXIMITY_CAVEAT };
    let sol = match estimate_pullback_attractor(setup.model(), setup.stable(), r, window, &PullbackOptions::new(tol)) {
        Ok(s) => s,
        Err(PullbackError::Escape { .. }) => return Ok(not_found),
        Err(e) => return Err(e.into()),
    };
    let target = setup.stable().endpoint_plus();
    let hit = sol
        .checkpoints(2001)
        .into_iter()
        .filter(|&t| t > t_after)
        .find(|&t| sol.eval(t).map(|x| (x - target).abs() < epsilon).unwrap_or(false));
    Ok(match hit {
        Some(t) => ProximityVerdict { found: true, t_epsilon: Some(t), caveat: PROXIMITY_CAVEAT },
        None => not_found,
    })
}
