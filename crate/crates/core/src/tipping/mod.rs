//! Finite-time discriminants `D_out`, `D_in` and rate-induced tipping
//! detection.
//!
//! For a probe horizon `τ` and offset `ε`,
//!
//! ```text
//! D_out(τ, r) = y_−(0, −τ) − y_+(0, τ)      D_in(τ, r) = z_−(0, −τ) − z_+(0, τ)
//! ```
//!
//! where `y_−`, `z_−` start at `S^s_n(r, −τ) ± ε` and run forward, and `y_+`,
//! `z_+` start at `S^u_n(r, τ) ∓ ε` and run backward. A sign change of `D_out`
//! in `r` brackets the critical rate.

mod diagnostics;

pub use diagnostics::{
    end_point_tracking_check, indicator_crossing, late_proximity_check, pullback_gap_at_zero, stability_indicator,
    IndicatorSample, ProximityVerdict, TrackingVerdict,
};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::asymptotics::{compute_coefficients, partial_sum_to, SeriesCoefficients, SeriesError};
use crate::equilibria::{find_equilibria, min_branch_gap, trace_branch, EquilibriumError, QuasiStaticBranch, Stability};
use crate::grid::{TauGrid, DEFAULT_GRID_POINTS};
use crate::integrate::{solve_ivp, IntegrateError, PullbackError, Status};
use crate::model::ModelSpec;

pub const DEFAULT_EPSILON: f64 = 0.2;
pub const DEFAULT_TAU: f64 = 30.0;
pub const DEFAULT_PROBE_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TippingError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("no stable equilibrium with an unstable neighbour at lambda_minus")]
    NoBranchPair,
    #[error("r_min = {r} is not in the tracking regime: {detail}")]
    NotTracking { r: f64, detail: String },
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Pullback(#[from] PullbackError),
}

/// Branches, gap and series shared by every probe on one model.
#[derive(Debug, Clone)]
pub struct TippingSetup {
    model: ModelSpec,
    stable: QuasiStaticBranch,
    unstable: QuasiStaticBranch,
    series_s: SeriesCoefficients,
    series_u: SeriesCoefficients,
    gap: f64,
    orientation: f64,
}

impl TippingSetup {
    /// Pairs the first stable equilibrium at `λ_−` with its nearest unstable
    /// neighbour and builds series up to order `n_max`.
    pub fn new(model: &ModelSpec, n_max: usize) -> Result<Self, TippingError> {
        let grid = TauGrid::graded(model.ramp().tail_tau(), DEFAULT_GRID_POINTS, 1.0);
        Self::with_grid(model, n_max, &grid)
    }

    pub fn with_grid(model: &ModelSpec, n_max: usize, grid: &TauGrid) -> Result<Self, TippingError> {
        let eq = find_equilibria(model.field(), model.ramp().lambda_minus())?;
        let s = eq.iter().find(|e| e.stability == Stability::Stable).ok_or(TippingError::NoBranchPair)?;
        let u = eq
            .iter()
            .filter(|e| e.stability == Stability::Unstable)
            .min_by(|a, b| (a.x - s.x).abs().partial_cmp(&(b.x - s.x).abs()).unwrap())
            .ok_or(TippingError::NoBranchPair)?;
        let stable = trace_branch(model, s, grid)?;
        let unstable = trace_branch(model, u, grid)?;
        let gap = min_branch_gap(&stable, &unstable)?;
        let series_s = compute_coefficients(&stable, n_max)?;
        let series_u = compute_coefficients(&unstable, n_max)?;
        let orientation = (s.x - u.x).signum();
        Ok(TippingSetup { model: model.clone(), stable, unstable, series_s, series_u, gap, orientation })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn stable(&self) -> &QuasiStaticBranch {
        &self.stable
    }

    pub fn unstable(&self) -> &QuasiStaticBranch {
        &self.unstable
    }

    pub fn series_s(&self) -> &SeriesCoefficients {
        &self.series_s
    }

    pub fn series_u(&self) -> &SeriesCoefficients {
        &self.series_u
    }

    /// Measured `d_0`.
    pub fn gap(&self) -> f64 {
        self.gap
    }

    /// `+1` when the stable branch lies above the unstable one.
    pub fn orientation(&self) -> f64 {
        self.orientation
    }

    pub fn max_order(&self) -> usize {
        self.series_s.order()
    }

    /// Default `ε`: `0.2` unless the gap forces something smaller.
    pub fn default_epsilon(&self) -> f64 {
        DEFAULT_EPSILON.min(0.4 * self.gap / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeConfig {
    pub n: usize,
    pub epsilon: f64,
    pub tau: f64,
    pub r: f64,
}

impl ProbeConfig {
    pub fn validate(&self, setup: &TippingSetup) -> Result<(), TippingError> {
        if self.n > setup.max_order() {
            return Err(TippingError::Precondition(format!(
                "order n = {} exceeds the prepared series order {}",
                self.n,
                setup.max_order()
            )));
        }
        if !(self.epsilon > 0.0) || self.epsilon >= setup.gap / 2.0 {
            return Err(TippingError::Precondition(format!(
                "epsilon = {} must satisfy 0 < epsilon < d_0/2 = {:.6}",
                self.epsilon,
                setup.gap / 2.0
            )));
        }
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return Err(TippingError::Precondition(format!("probe horizon tau = {} must be >= 0", self.tau)));
        }
        if !(self.r > 0.0) || !self.r.is_finite() {
            return Err(TippingError::Precondition(format!("rate r = {} must be > 0", self.r)));
        }
        Ok(())
    }
}

/// Value of one probe at `t = 0`, or where it went.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbeValue {
    Value { x: f64 },
    Escaped { t_escape: f64, direction: f64 },
}

impl ProbeValue {
    /// The value, with an escape read as `±∞`.
    pub fn extended(&self) -> f64 {
        match *self {
            ProbeValue::Value { x } => x,
            ProbeValue::Escaped { direction, .. } => direction * f64::INFINITY,
        }
    }

    pub fn escape_time(&self) -> Option<f64> {
        match *self {
            ProbeValue::Escaped { t_escape, .. } => Some(t_escape),
            ProbeValue::Value { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Probes {
    pub y_minus: ProbeValue,
    pub y_plus: ProbeValue,
    pub z_minus: ProbeValue,
    pub z_plus: ProbeValue,
}

/// A discriminant value, or the sign verdict of escaping probes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Discriminant {
    /// Present when both probes stayed finite.
    pub value: Option<f64>,
    /// `−1`, `0` (undecided) or `+1`.
    pub sign: i8,
    pub escape_verdict: bool,
}

impl Discriminant {
    fn from_pair(lower_side: ProbeValue, upper_side: ProbeValue, orientation: f64) -> Self {
        let d = orientation * (lower_side.extended() - upper_side.extended());
        let escape_verdict = lower_side.escape_time().is_some() || upper_side.escape_time().is_some();
        let sign = if d.is_nan() || d == 0.0 { 0 } else if d > 0.0 { 1 } else { -1 };
        Discriminant { value: (!escape_verdict).then_some(d), sign, escape_verdict }
    }

    pub fn is_positive(&self) -> bool {
        self.sign > 0
    }

    pub fn is_negative(&self) -> bool {
        self.sign < 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiscriminantSample {
    pub config: ProbeConfig,
    pub d_out: Discriminant,
    pub d_in: Discriminant,
    pub probes: Probes,
}

fn run_probe(model: &ModelSpec, r: f64, t0: f64, x0: f64, tol: f64) -> Result<ProbeValue, IntegrateError> {
    if t0 == 0.0 {
        return Ok(ProbeValue::Value { x: x0 });
    }
    let traj = solve_ivp(model, r, t0, x0, 0.0, tol)?;
    Ok(match traj.status() {
        Status::Completed => ProbeValue::Value { x: traj.final_state() },
        Status::Escaped { t_escape } => {
            let last = if t0 < 0.0 { traj.samples().last() } else { traj.samples().first() };
            ProbeValue::Escaped { t_escape, direction: last.map(|s| s.x.signum()).unwrap_or(0.0) }
        }
    })
}

/// The four probe states at `t = 0`.
pub fn probe_solutions(setup: &TippingSetup, config: &ProbeConfig, tol: f64) -> Result<Probes, TippingError> {
    config.validate(setup)?;
    let ProbeConfig { n, epsilon, tau, r } = *config;
    let sigma = setup.orientation;
    let m = &setup.model;
    let ss = partial_sum_to(&setup.series_s, n, r, -tau);
    let su = partial_sum_to(&setup.series_u, n, r, tau);
    Ok(Probes {
        y_minus: run_probe(m, r, -tau, ss + sigma * epsilon, tol)?,
        z_minus: run_probe(m, r, -tau, ss - sigma * epsilon, tol)?,
        y_plus: run_probe(m, r, tau, su - sigma * epsilon, tol)?,
        z_plus: run_probe(m, r, tau, su + sigma * epsilon, tol)?,
    })
}

pub fn discriminants(setup: &TippingSetup, config: &ProbeConfig, tol: f64) -> Result<DiscriminantSample, TippingError> {
    let probes = probe_solutions(setup, config, tol)?;
    let sigma = setup.orientation;
    Ok(DiscriminantSample {
        config: *config,
        d_out: Discriminant::from_pair(probes.y_minus, probes.y_plus, sigma),
        d_in: Discriminant::from_pair(probes.z_minus, probes.z_plus, sigma),
        probes,
    })
}

pub fn d_out(setup: &TippingSetup, config: &ProbeConfig, tol: f64) -> Result<Discriminant, TippingError> {
    config.validate(setup)?;
    let ProbeConfig { n, epsilon, tau, r } = *config;
    let sigma = setup.orientation;
    let y_minus = run_probe(&setup.model, r, -tau, partial_sum_to(&setup.series_s, n, r, -tau) + sigma * epsilon, tol)?;
    let y_plus = run_probe(&setup.model, r, tau, partial_sum_to(&setup.series_u, n, r, tau) - sigma * epsilon, tol)?;
    Ok(Discriminant::from_pair(y_minus, y_plus, sigma))
}

pub fn d_in(setup: &TippingSetup, config: &ProbeConfig, tol: f64) -> Result<Discriminant, TippingError> {
    config.validate(setup)?;
    let ProbeConfig { n, epsilon, tau, r } = *config;
    let sigma = setup.orientation;
    let z_minus = run_probe(&setup.model, r, -tau, partial_sum_to(&setup.series_s, n, r, -tau) - sigma * epsilon, tol)?;
    let z_plus = run_probe(&setup.model, r, tau, partial_sum_to(&setup.series_u, n, r, tau) + sigma * epsilon, tol)?;
    Ok(Discriminant::from_pair(z_minus, z_plus, sigma))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    EndPointTracking,
    Tipping,
    VisibleTipping,
    Undetermined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TipOptions {
    /// Points in the geometric coarse scan.
    pub scan_points: usize,
    /// Bisection stops at `(hi − lo) ≤ rel_width · lo`.
    pub rel_width: f64,
    pub probe_tol: f64,
    /// Pullback tolerance for the oracle cross-check; skipped when `None`.
    pub oracle_tol: Option<f64>,
    /// Horizons checked at the left bracket endpoint, as fractions of `τ`.
    pub left_fractions: Vec<f64>,
}

impl Default for TipOptions {
    fn default() -> Self {
        TipOptions {
            scan_points: 48,
            rel_width: 1e-3,
            probe_tol: DEFAULT_PROBE_TOL,
            oracle_tol: Some(1e-9),
            left_fractions: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

/// Sign of `x^r_−(0) − x^r_+(0)` at both bracket ends, from pullback estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleCheck {
    pub gap_lo: f64,
    pub gap_hi: f64,
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TippingReport {
    pub model: String,
    pub n: usize,
    pub epsilon: f64,
    pub tau: f64,
    pub r_range: [f64; 2],
    pub bracket: Option<[f64; 2]>,
    pub r_star: Option<f64>,
    /// Half-width of the bracket.
    pub r_star_uncertainty: Option<f64>,
    pub classification: Classification,
    /// Every sign change of `D_out` seen in the coarse scan.
    pub scan_brackets: Vec<[f64; 2]>,
    pub oracle: Option<OracleCheck>,
    pub delta_curve: Vec<[f64; 2]>,
    pub indicator_curve: Vec<[f64; 2]>,
    pub indicator_crossing: Option<f64>,
    pub evidence: Vec<DiscriminantSample>,
    pub flags: Vec<String>,
}

fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n)
        .map(|k| if k + 1 == n { hi } else { lo * (hi / lo).powf(k as f64 / (n - 1) as f64) })
        .collect()
}

/// Bisects the `D_out` sign change inside `[lo, hi]` (positive at `lo`).
pub fn refine_bracket(
    setup: &TippingSetup,
    n: usize,
    epsilon: f64,
    tau: f64,
    mut lo: f64,
    mut hi: f64,
    rel_width: f64,
    tol: f64,
) -> Result<(f64, f64), TippingError> {
    for _ in 0..200 {
        if hi - lo <= rel_width * lo {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if d_out(setup, &ProbeConfig { n, epsilon, tau, r: mid }, tol)?.is_positive() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo, hi))
}

/// Scans `r_range` for a sign change of `D_out(τ, ·)` and refines the first
/// one by bisection.
pub fn detect_tipping(
    setup: &TippingSetup,
    n: usize,
    epsilon: f64,
    tau: f64,
    r_range: (f64, f64),
    opts: &TipOptions,
) -> Result<TippingReport, TippingError> {
    let (r_min, r_max) = r_range;
    if !(r_min > 0.0 && r_max > r_min) {
        return Err(TippingError::Precondition(format!("r range [{r_min}, {r_max}] must satisfy 0 < r_min < r_max")));
    }
    ProbeConfig { n, epsilon, tau, r: r_min }.validate(setup)?;
    let tol = opts.probe_tol;
    let mut flags = Vec::new();
    let mut evidence = Vec::new();

    // base fact at r_min: both discriminants positive for every probed horizon
    let left_taus: Vec<f64> = opts.left_fractions.iter().map(|f| f * tau).collect();
    let base: Vec<DiscriminantSample> = left_taus
        .par_iter()
        .map(|&t| discriminants(setup, &ProbeConfig { n, epsilon, tau: t, r: r_min }, tol))
        .collect::<Result<_, _>>()?;
    if let Some(bad) = base.iter().find(|s| !(s.d_out.is_positive() && s.d_in.is_positive())) {
        return Err(TippingError::NotTracking {
            r: r_min,
            detail: format!("D_out sign {} / D_in sign {} at tau = {}", bad.d_out.sign, bad.d_in.sign, bad.config.tau),
        });
    }
    evidence.extend(base);

    let rs = geometric(r_min, r_max, opts.scan_points);
    let scan: Vec<DiscriminantSample> = rs
        .par_iter()
        .map(|&r| discriminants(setup, &ProbeConfig { n, epsilon, tau, r }, tol))
        .collect::<Result<_, _>>()?;
    if scan.iter().any(|s| s.d_out.sign == 0) {
        flags.push("undecided D_out verdicts in the coarse scan (both probes escaped the same way)".into());
    }
    if scan.iter().any(|s| s.d_out.escape_verdict) {
        flags.push("escape verdicts used in place of numeric D_out values".into());
    }
    let mut scan_brackets = Vec::new();
    for w in scan.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.d_out.is_positive() && !b.d_out.is_positive() {
            scan_brackets.push([a.config.r, b.config.r]);
        }
        if !a.d_out.is_positive() && b.d_out.is_positive() {
            scan_brackets.push([a.config.r, b.config.r]);
            flags.push(format!("D_out turns positive again between r = {} and r = {}", a.config.r, b.config.r));
        }
    }
    evidence.extend(scan);

    let mut report = TippingReport {
        model: setup.model.name().to_string(),
        n,
        epsilon,
        tau,
        r_range: [r_min, r_max],
        bracket: None,
        r_star: None,
        r_star_uncertainty: None,
        classification: Classification::EndPointTracking,
        scan_brackets: scan_brackets.clone(),
        oracle: None,
        delta_curve: Vec::new(),
        indicator_curve: Vec::new(),
        indicator_crossing: None,
        evidence,
        flags,
    };
    let Some(first) = scan_brackets.first() else {
        return Ok(report);
    };

    let (lo, hi) = refine_bracket(setup, n, epsilon, tau, first[0], first[1], opts.rel_width, tol)?;
    report.bracket = Some([lo, hi]);
    report.r_star = Some(0.5 * (lo + hi));
    report.r_star_uncertainty = Some(0.5 * (hi - lo));

    // visible tipping: single change, positive for every horizon at lo,
    // negative at the full horizon at hi
    let left: Vec<DiscriminantSample> = left_taus
        .par_iter()
        .map(|&t| discriminants(setup, &ProbeConfig { n, epsilon, tau: t, r: lo }, tol))
        .collect::<Result<_, _>>()?;
    let right = discriminants(setup, &ProbeConfig { n, epsilon, tau, r: hi }, tol)?;
    let left_ok = left.iter().all(|s| s.d_out.is_positive());
    let right_ok = right.d_out.is_negative();
    if !left_ok {
        report.flags.push(format!("D_out not positive for every probed horizon at r = {lo}"));
    }
    report.evidence.extend(left);
    report.evidence.push(right);
    report.classification =
        if scan_brackets.len() == 1 && left_ok && right_ok { Classification::VisibleTipping } else { Classification::Tipping };

    if let Some(otol) = opts.oracle_tol {
        let gap_lo = pullback_gap_at_zero(setup, lo, otol)?;
        let gap_hi = pullback_gap_at_zero(setup, hi, otol)?;
        let consistent = gap_lo > 0.0 && gap_hi < 0.0;
        report.oracle = Some(OracleCheck { gap_lo, gap_hi, consistent });
        if !consistent {
            report.flags.push("D_out bracket and pullback oracle disagree (inconsistent evidence)".into());
            report.classification = Classification::Undetermined;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaSample {
    pub tau: f64,
    /// `δ(n, τ)`; reported as `0` where undefined.
    pub delta: f64,
    pub defined: bool,
    /// `r* − δ(n, τ)`.
    pub r_lower: f64,
}

/// `δ(n, τ)` for each horizon: the length of the `r`-interval ending at
/// `r_star` on which `D_in(τ, ·) < 0`.
pub fn delta_curve(
    setup: &TippingSetup,
    n: usize,
    epsilon: f64,
    r_star: f64,
    taus: &[f64],
    abs_tol: f64,
    probe_tol: f64,
) -> Result<Vec<DeltaSample>, TippingError> {
    taus.par_iter().map(|&tau| delta_at(setup, n, epsilon, r_star, tau, abs_tol, probe_tol)).collect()
}

fn delta_at(
    setup: &TippingSetup,
    n: usize,
    epsilon: f64,
    r_star: f64,
    tau: f64,
    abs_tol: f64,
    probe_tol: f64,
) -> Result<DeltaSample, TippingError> {
    let negative = |r: f64| -> Result<bool, TippingError> {
        Ok(d_in(setup, &ProbeConfig { n, epsilon, tau, r }, probe_tol)?.is_negative())
    };
    if !negative(r_star)? {
        return Ok(DeltaSample { tau, delta: 0.0, defined: false, r_lower: r_star });
    }
    // march down until D_in stops being negative, then bisect the last step
    let step = 5e-3 * r_star;
    let mut inside = r_star;
    let mut outside = None;
    while inside - step > 0.0 {
        let r = inside - step;
        if negative(r)? {
            inside = r;
        } else {
            outside = Some(r);
            break;
        }
    }
    let Some(mut out) = outside else {
        return Ok(DeltaSample { tau, delta: r_star, defined: true, r_lower: 0.0 });
    };
    while inside - out > abs_tol {
        let mid = 0.5 * (inside + out);
        if mid <= out || mid >= inside {
            break;
        }
        if negative(mid)? {
            inside = mid;
        } else {
            out = mid;
        }
    }
    let r_lower = 0.5 * (inside + out);
    Ok(DeltaSample { tau, delta: r_star - r_lower, defined: true, r_lower })
}
