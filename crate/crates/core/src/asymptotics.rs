//! Asymptotic series `S_n(r, t) = Σ a_i(r t) rⁱ` along quasi-static branches.
//!
//! `a_0 = X`, `a_1 = Ẋ / ∂ₓf`, and for `i ≥ 2`
//!
//! ```text
//! a_i = (∂ₓf)⁻¹ [ ȧ_{i−1} − Σ_{j=2}^{i} (∂ʲₓf / j!) Σ_{k₁+…+k_j = i} a_{k₁}⋯a_{k_j} ]
//! ```
//!
//! with the inner sum over compositions of `i` into `j` positive parts and
//! every derivative of `f` taken at `(X(τ), Λ(τ))`.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::equilibria::{QuasiStaticBranch, Stability, HYPERBOLICITY_TOLERANCE};
use crate::grid::CubicSpline;
use crate::integrate::{
    estimate_pullback_attractor, estimate_pullback_repeller, PullbackError, PullbackOptions, PullbackSolution,
};
use crate::model::{jet_eval, ModelError, ModelSpec};

/// Highest supported series order.
pub const MAX_SERIES_ORDER: usize = 5;

/// Slow-time half-width of the window used for error measurements.
pub const ERROR_WINDOW_TAU: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeriesError {
    #[error("series order {requested} exceeds the supported maximum {max}")]
    OrderTooHigh { requested: usize, max: usize },
    #[error("hyperbolicity lost at tau={tau}: d_x f = {dxf:.3e}")]
    MarginLoss { tau: f64, dxf: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pullback(#[from] PullbackError),
    #[error("invalid series request: {0}")]
    InvalidInput(String),
}

/// All compositions of `i` into `j` positive parts, in lexicographic order.
pub fn compositions(i: usize, j: usize) -> Vec<Vec<usize>> {
    fn go(rest: usize, parts: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 0 {
            if rest == 0 {
                out.push(prefix.clone());
            }
            return;
        }
        for k in 1..=rest.saturating_sub(parts - 1) {
            prefix.push(k);
            go(rest - k, parts - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if j > 0 {
        go(i, j, &mut Vec::with_capacity(j), &mut out);
    }
    out
}

/// Coefficients `a_0 … a_n` of one branch on its τ-grid.
#[derive(Debug, Clone)]
pub struct SeriesCoefficients {
    branch: QuasiStaticBranch,
    order: usize,
    values: Vec<Vec<f64>>,
    splines: Vec<CubicSpline>,
    sup_norms: Vec<f64>,
}

impl SeriesCoefficients {
    pub fn kind(&self) -> Stability {
        self.branch.kind()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn branch(&self) -> &QuasiStaticBranch {
        &self.branch
    }

    pub fn tau(&self) -> &[f64] {
        self.branch.tau()
    }

    /// `values()[i][k] = a_i(τ_k)`.
    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// `M_i = max_k |a_i(τ_k)|`.
    pub fn sup_norms(&self) -> &[f64] {
        &self.sup_norms
    }

    /// `a_i(τ)`. The first two coefficients are exact at every `τ`; the rest
    /// are interpolated on the grid and vanish beyond it.
    pub fn coefficient(&self, i: usize, tau: f64) -> f64 {
        match i {
            0 => self.branch.value_at(tau),
            1 => {
                let x = self.branch.value_at(tau);
                let lambda = self.branch.model().ramp().eval(tau);
                self.branch.derivative_at(tau) / self.branch.model().field().dx(x, lambda)
            }
            _ if self.branch.tau()[0] <= tau && tau <= self.branch.tau_tail() => self.splines[i].eval(tau),
            _ => 0.0,
        }
    }

    /// `ȧ_i(τ)`; exact for `i = 0`, spline-based otherwise.
    pub fn coefficient_derivative(&self, i: usize, tau: f64) -> f64 {
        if i == 0 {
            return self.branch.derivative_at(tau);
        }
        if self.branch.tau()[0] <= tau && tau <= self.branch.tau_tail() {
            self.splines[i].deriv(tau)
        } else {
            0.0
        }
    }

    /// The same series cut at order `m ≤ n`.
    pub fn truncated(&self, m: usize) -> SeriesCoefficients {
        let m = m.min(self.order);
        SeriesCoefficients {
            branch: self.branch.clone(),
            order: m,
            values: self.values[..=m].to_vec(),
            splines: self.splines[..=m].to_vec(),
            sup_norms: self.sup_norms[..=m].to_vec(),
        }
    }
}

/// Builds `a_0 … a_n` on the branch grid.
pub fn compute_coefficients(branch: &QuasiStaticBranch, n: usize) -> Result<SeriesCoefficients, SeriesError> {
    if n > MAX_SERIES_ORDER {
        return Err(SeriesError::OrderTooHigh { requested: n, max: MAX_SERIES_ORDER });
    }
    let model = branch.model();
    let field = model.field();
    let ramp = model.ramp();
    let tau = branch.tau();

    if let Some(k) = branch.dxf().iter().position(|d| d.abs() < HYPERBOLICITY_TOLERANCE) {
        return Err(SeriesError::MarginLoss { tau: tau[k], dxf: branch.dxf()[k] });
    }

    // jets c_j = ∂ʲₓf/j! at every node, up to order n
    let jets: Vec<Vec<f64>> = tau
        .par_iter()
        .zip(branch.values().par_iter().zip(branch.lambda_values().par_iter()))
        .map(|(_, (&x, &l))| jet_eval(field, x, l, n.max(1)).map(|j| j.coeffs().to_vec()))
        .collect::<Result<_, _>>()?;

    let mut values: Vec<Vec<f64>> = vec![branch.values().to_vec()];
    if n >= 1 {
        let a1 = tau
            .par_iter()
            .zip(branch.values().par_iter())
            .zip(jets.par_iter())
            .map(|((&t, &x), c)| {
                let lambda = ramp.eval(t);
                let xdot = -field.param_deriv(x, lambda) * ramp.deriv(t) / c[1];
                xdot / c[1]
            })
            .collect();
        values.push(a1);
    }
    let mut splines: Vec<CubicSpline> = values.iter().map(|v| CubicSpline::new(tau, v)).collect();

    for i in 2..=n {
        let parts: Vec<Vec<Vec<usize>>> = (2..=i).map(|j| compositions(i, j)).collect();
        let prev = &splines[i - 1];
        let lower = &values;
        let ai: Vec<f64> = (0..tau.len())
            .into_par_iter()
            .map(|k| {
                let c = &jets[k];
                let mut nonlinear = 0.0;
                for (idx, comps) in parts.iter().enumerate() {
                    let j = idx + 2;
                    let inner: f64 = comps.iter().map(|p| p.iter().map(|&q| lower[q][k]).product::<f64>()).sum();
                    nonlinear += c[j] * inner;
                }
                (prev.deriv_at_node(k) - nonlinear) / c[1]
            })
            .collect();
        splines.push(CubicSpline::new(tau, &ai));
        values.push(ai);
    }

    let sup_norms = values.iter().map(|v| v.iter().fold(0.0_f64, |m, a| m.max(a.abs()))).collect();
    Ok(SeriesCoefficients { branch: branch.clone(), order: n, values, splines, sup_norms })
}

/// `S_n(r, t) = Σ_{i ≤ n} a_i(r t) rⁱ`.
pub fn partial_sum(series: &SeriesCoefficients, r: f64, t: f64) -> f64 {
    partial_sum_to(series, series.order, r, t)
}

/// `S_m(r, t)` for `m ≤ n` without cloning a truncated series.
pub fn partial_sum_to(series: &SeriesCoefficients, m: usize, r: f64, t: f64) -> f64 {
    let tau = r * t;
    let mut sum = 0.0;
    let mut rp = 1.0;
    for i in 0..=m.min(series.order) {
        sum += series.coefficient(i, tau) * rp;
        rp *= r;
    }
    sum
}

/// `Σ_{i ≤ n} a_i(τ_k) rⁱ` at node `k`, straight from the stored values.
fn node_sum(series: &SeriesCoefficients, r: f64, k: usize) -> f64 {
    series.values.iter().rev().fold(0.0, |acc, a| acc * r + a[k])
}

fn sign_holds(series: &SeriesCoefficients, r: f64) -> bool {
    let field = series.branch.model().field();
    let want = series.kind().sign();
    let lambdas = series.branch.lambda_values();
    (0..lambdas.len()).all(|k| field.dx(node_sum(series, r, k), lambdas[k]) * want > 0.0)
}

/// Largest `r ≤ r_probe_max` for which `∂ₓf(S_n(r, t), Λ(r t))` keeps the
/// branch sign at every grid time; relative accuracy `1e-3`.
pub fn validity_radius(series: &SeriesCoefficients, r_probe_max: f64) -> f64 {
    const SCAN: usize = 200;
    let mut good = 0.0;
    for s in 1..=SCAN {
        let r = r_probe_max * s as f64 / SCAN as f64;
        if !sign_holds(series, r) {
            let mut bad = r;
            for _ in 0..200 {
                if bad - good <= 1e-3 * bad {
                    break;
                }
                let mid = 0.5 * (good + bad);
                if sign_holds(series, mid) {
                    good = mid;
                } else {
                    bad = mid;
                }
            }
            return good;
        }
        good = r;
    }
    r_probe_max
}

/// Default `r` samples for the error fit: geometric from `1e-3` to `1e-1`.
pub fn default_r_samples() -> Vec<f64> {
    (0..10).map(|k| 1e-3 * 100f64.powf(k as f64 / 9.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorFit {
    /// `Ĉ_n = max_r E(r) / r^{n+1}`.
    pub c_hat: f64,
    /// Least-squares slope of `log E` against `log r`; `None` when every
    /// error is at roundoff level.
    pub slope: Option<f64>,
    /// RMS residual of the log–log fit.
    pub residual: Option<f64>,
    /// `(r, E(r))` pairs.
    pub samples: Vec<(f64, f64)>,
}

/// Errors below this are treated as roundoff and left out of the fit.
pub const ROUNDOFF_FLOOR: f64 = 1e-13;

/// Pullback estimate matching the series side on the slow window `±30`.
pub fn pullback_for(series: &SeriesCoefficients, r: f64, opts: &PullbackOptions) -> Result<PullbackSolution, PullbackError> {
    let window = (-ERROR_WINDOW_TAU / r, ERROR_WINDOW_TAU / r);
    let model = series.branch.model();
    match series.kind() {
        Stability::Stable => estimate_pullback_attractor(model, &series.branch, r, window, opts),
        Stability::Unstable => estimate_pullback_repeller(model, &series.branch, r, window, opts),
    }
}

/// `max_t |S_n(r, t) − x^r_±(t)|` over the pullback window.
pub fn series_error(series: &SeriesCoefficients, solution: &PullbackSolution) -> f64 {
    let r = solution.r;
    solution
        .checkpoints(2401)
        .into_iter()
        .filter_map(|t| solution.eval(t).map(|x| (partial_sum(series, r, t) - x).abs()))
        .fold(0.0, f64::max)
}

/// Fits `E(r) ≈ Ĉ r^q` against pullback estimates at each `r`.
pub fn estimate_error_constant(
    series: &SeriesCoefficients,
    r_samples: &[f64],
    opts: &PullbackOptions,
) -> Result<ErrorFit, SeriesError> {
    if r_samples.is_empty() || r_samples.iter().any(|&r| !(r > 0.0)) {
        return Err(SeriesError::InvalidInput("r samples must be positive and non-empty".into()));
    }
    let samples: Vec<(f64, f64)> = r_samples
        .par_iter()
        .map(|&r| pullback_for(series, r, opts).map(|sol| (r, series_error(series, &sol))))
        .collect::<Result<_, _>>()?;
    let n1 = (series.order + 1) as i32;
    let c_hat = samples.iter().map(|&(r, e)| e / r.powi(n1)).fold(0.0, f64::max);

    let pts: Vec<(f64, f64)> = samples.iter().filter(|s| s.1 > ROUNDOFF_FLOOR).map(|&(r, e)| (r.ln(), e.ln())).collect();
    let (slope, residual) = if pts.len() >= 2 {
        let m = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let q = sxy / sxx;
        let rms = (pts.iter().map(|p| (p.1 - my - q * (p.0 - mx)).powi(2)).sum::<f64>() / m).sqrt();
        (Some(q), Some(rms))
    } else {
        (None, None)
    };
    Ok(ErrorFit { c_hat, slope, residual, samples })
}

/// Edge of the half-line on which the series stays within `ε` of the
/// pullback solution: `β` (stable side, bound holds for `t < β`) or `α`
/// (unstable side, bound holds for `t > α`). Infinite when the bound holds
/// across the whole, untruncated window.
pub fn validity_boundary(series: &SeriesCoefficients, solution: &PullbackSolution, requested: (f64, f64), epsilon: f64) -> f64 {
    let r = solution.r;
    let times = solution.checkpoints(2401);
    let within = |t: f64| solution.eval(t).map(|x| (partial_sum(series, r, t) - x).abs() < epsilon).unwrap_or(false);
    match series.kind() {
        Stability::Stable => match times.iter().find(|&&t| !within(t)) {
            Some(&t) => t,
            None if solution.window.1 < requested.1 => solution.window.1,
            None => f64::INFINITY,
        },
        Stability::Unstable => match times.iter().rev().find(|&&t| !within(t)) {
            Some(&t) => t,
            None if solution.window.0 > requested.0 => solution.window.0,
            None => f64::NEG_INFINITY,
        },
    }
}

/// A series with its validity radius and, when measured, its error fit.
#[derive(Debug, Clone)]
pub struct SeriesApproximation {
    pub coefficients: SeriesCoefficients,
    pub validity_radius: f64,
    pub error_fit: Option<ErrorFit>,
}

/// Plain-data summary for reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesSummary {
    pub kind: Stability,
    pub order: usize,
    pub sup_norms: Vec<f64>,
    pub validity_radius: f64,
    pub error_fit: Option<ErrorFit>,
}

impl SeriesApproximation {
    pub fn summary(&self) -> SeriesSummary {
        SeriesSummary {
            kind: self.coefficients.kind(),
            order: self.coefficients.order(),
            sup_norms: self.coefficients.sup_norms().to_vec(),
            validity_radius: self.validity_radius,
            error_fit: self.error_fit.clone(),
        }
    }
}

/// Convenience: coefficients plus validity radius for one branch.
pub fn approximate(branch: &QuasiStaticBranch, n: usize, r_probe_max: f64) -> Result<SeriesApproximation, SeriesError> {
    let coefficients = compute_coefficients(branch, n)?;
    let validity_radius = validity_radius(&coefficients, r_probe_max);
    Ok(SeriesApproximation { coefficients, validity_radius, error_fit: None })
}

/// Defect `r·dS_n/dτ − f(S_n, Λ(τ))` of the series in the slow equation,
/// maximised over the grid nodes.
pub fn max_defect(series: &SeriesCoefficients, model: &ModelSpec, r: f64) -> f64 {
    let field = model.field();
    let tau = series.tau();
    let lambdas = series.branch.lambda_values();
    (0..tau.len())
        .map(|k| {
            let s = node_sum(series, r, k);
            let mut ds = 0.0;
            let mut rp = 1.0;
            for i in 0..=series.order {
                ds += series.coefficient_derivative(i, tau[k]) * rp;
                rp *= r;
            }
            (r * ds - field.eval(s, lambdas[k])).abs()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibria::{find_equilibria, trace_branch};
    use crate::grid::{TauGrid, DEFAULT_GRID_POINTS};
    use crate::model::{quad_arctan, BoundBox, PolynomialField, StandardRamp};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn branches(m: &ModelSpec) -> (QuasiStaticBranch, QuasiStaticBranch) {
        let grid = TauGrid::graded(m.ramp().tail_tau(), DEFAULT_GRID_POINTS, 1.0);
        let eq = find_equilibria(m.field(), m.ramp().lambda_minus()).unwrap();
        (trace_branch(m, &eq[1], &grid).unwrap(), trace_branch(m, &eq[0], &grid).unwrap())
    }

    fn frozen_pair() -> ModelSpec {
        let field = PolynomialField::quadratic(0.1, BoundBox::new(-1e6, 1e6, 0.0, 0.0));
        ModelSpec::new("frozen_quad", Arc::new(field), Arc::new(StandardRamp::constant(0.0))).unwrap()
    }

    #[test]
    fn composition_counts() {
        assert_eq!(compositions(3, 2), vec![vec![1, 2], vec![2, 1]]);
        assert_eq!(compositions(4, 4), vec![vec![1, 1, 1, 1]]);
        assert!(compositions(2, 3).is_empty());
        // C(i−1, j−1)
        assert_eq!(compositions(5, 3).len(), 6);
        assert_eq!(compositions(6, 2).len(), 5);
    }

    #[test]
    fn first_coefficients_closed_form() {
        let zeta: f64 = 0.1;
        let m = quad_arctan(zeta).unwrap();
        let (s, u) = branches(&m);
        let cs = compute_coefficients(&s, 3).unwrap();
        let cu = compute_coefficients(&u, 3).unwrap();
        let expect = (2.0 / PI) / (-2.0 * zeta.sqrt());
        assert!((cs.coefficient(1, 0.0) - expect).abs() < 1e-12);
        assert!((cs.coefficient(1, 0.0) + 1.006584).abs() < 1e-6);
        assert!((cu.coefficient(1, 0.0) - 1.006584).abs() < 1e-6);
        for k in 0..cs.tau().len() {
            assert!((cs.values()[1][k] + cu.values()[1][k]).abs() < 1e-10);
            assert_eq!(cs.values()[0][k], s.values()[k]);
        }
    }

    #[test]
    fn partial_sums() {
        let m = quad_arctan(0.1).unwrap();
        let (s, _) = branches(&m);
        let cs = compute_coefficients(&s, 3).unwrap();
        assert!((partial_sum(&cs.truncated(1), 0.1, 0.0) - 0.215570).abs() < 1e-6);
        let zero = cs.truncated(0);
        for k in (0..cs.tau().len()).step_by(97) {
            let tau = cs.tau()[k];
            assert!((partial_sum(&zero, 1.0, tau) - s.values()[k]).abs() < 1e-14);
        }
        // r → 0 recovers the branch value at fixed t
        let t = 3.0;
        let limit = partial_sum(&cs, 1e-9, t);
        assert!((limit - s.value_at(1e-9 * t)).abs() < 1e-8);
    }

    #[test]
    fn coefficients_decay_in_tails() {
        for zeta in [0.1, 1.1] {
            let m = quad_arctan(zeta).unwrap();
            let (s, u) = branches(&m);
            for b in [&s, &u] {
                let c = compute_coefficients(b, 3).unwrap();
                let last = c.tau().len() - 1;
                for i in 1..=3 {
                    let bound = 1e-6 * (1.0 + c.sup_norms()[i]);
                    assert!(c.values()[i][0].abs() < bound && c.values()[i][last].abs() < bound);
                    assert!(c.sup_norms()[i].is_finite());
                }
            }
        }
    }

    #[test]
    fn frozen_series_is_exact() {
        let m = frozen_pair();
        let (s, _) = branches(&m);
        let c = compute_coefficients(&s, 4).unwrap();
        for i in 1..=4 {
            assert!(c.values()[i].iter().all(|&a| a == 0.0));
        }
        assert_eq!(validity_radius(&c, 5.0), 5.0);
        assert_eq!(partial_sum(&c, 0.3, 12.0), 0.1f64.sqrt());
    }

    #[test]
    fn order_limits() {
        let m = quad_arctan(0.1).unwrap();
        let (s, _) = branches(&m);
        assert!(matches!(compute_coefficients(&s, 6), Err(SeriesError::OrderTooHigh { requested: 6, max: 5 })));
        assert!(compute_coefficients(&s, 5).is_ok());
    }

    #[test]
    fn validity_radius_matches_sign_scan() {
        for zeta in [0.1, 1.1] {
            let m = quad_arctan(zeta).unwrap();
            let (s, _) = branches(&m);
            let c = compute_coefficients(&s, 1).unwrap();
            let rbar = validity_radius(&c, 10.0);
            // dense scan of the sign condition in closed form: √ζ + r a₁ > 0
            let scan = (1..=100_000)
                .map(|k| k as f64 * 1e-4)
                .take_while(|&r| c.values()[1].iter().all(|a| zeta.sqrt() + r * a > 0.0))
                .last()
                .unwrap();
            assert!((rbar - scan).abs() < 2e-3 * scan, "zeta {zeta}: {rbar} vs {scan}");
            assert!((rbar - PI * zeta).abs() < 2e-3 * PI * zeta);
        }
    }

    #[test]
    fn defect_scales_with_order() {
        let m = quad_arctan(0.1).unwrap();
        let (s, _) = branches(&m);
        let full = compute_coefficients(&s, 3).unwrap();
        let rs = [0.01, 0.02, 0.04];
        for n in 1..=3 {
            let c = full.truncated(n);
            let d: Vec<f64> = rs.iter().map(|&r| max_defect(&c, &m, r)).collect();
            let slope = (d[2] / d[0]).ln() / (rs[2] / rs[0]).ln();
            assert!((slope - (n + 1) as f64).abs() < 0.3, "n={n}: slope {slope}, defects {d:?}");
        }
    }

    #[test]
    fn frozen_error_is_roundoff() {
        let m = frozen_pair();
        let (s, _) = branches(&m);
        let c = compute_coefficients(&s, 2).unwrap();
        let fit = estimate_error_constant(&c, &[1e-2, 1e-1], &PullbackOptions::new(1e-10)).unwrap();
        assert!(fit.samples.iter().all(|&(_, e)| e < 1e-9));
    }

    #[test]
    fn first_order_error_slope() {
        let m = quad_arctan(0.1).unwrap();
        let (s, _) = branches(&m);
        let c = compute_coefficients(&s, 1).unwrap();
        let rs = [0.005, 0.01, 0.02, 0.04];
        let fit = estimate_error_constant(&c, &rs, &PullbackOptions::new(1e-10)).unwrap();
        let q = fit.slope.unwrap();
        assert!((1.7..=2.3).contains(&q), "slope {q}: {:?}", fit.samples);
    }
}
