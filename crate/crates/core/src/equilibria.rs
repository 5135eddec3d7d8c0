//! Hyperbolic equilibria of the frozen systems `ẋ = f(x, λ)` and their
//! continuation into quasi-static branches `τ ↦ X(τ)`.

use serde::Serialize;
use thiserror::Error;

use crate::grid::{CubicSpline, TauGrid};
use crate::model::{ModelSpec, ScalarField};

pub const ROOT_TOLERANCE: f64 = 1e-10;
pub const HYPERBOLICITY_TOLERANCE: f64 = 1e-6;
pub const GAP_TOLERANCE: f64 = 1e-6;
/// Cells in the bracketing scan over the bound box.
pub const SCAN_CELLS: usize = 2048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquilibriumError {
    #[error("non-hyperbolic equilibrium near x={x} at lambda={lambda} (|d_x f| = {dxf:.3e})")]
    NonHyperbolicRoot { x: f64, lambda: f64, dxf: f64 },
    #[error("frozen system has no equilibria at lambda={lambda}")]
    NoRoots { lambda: f64 },
    #[error("branch fold at tau={tau} (lambda={lambda}): hyperbolicity lost, d_x f = {dxf:.3e}")]
    BranchFold { tau: f64, lambda: f64, dxf: f64 },
    #[error("branches collapse: minimum gap {gap:.3e} at tau={tau}")]
    GapCollapse { gap: f64, tau: f64 },
    #[error("branches are sampled on different grids")]
    GridMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    Unstable,
}

impl Stability {
    /// Sign of `∂ₓf` on equilibria of this kind.
    pub fn sign(&self) -> f64 {
        match self {
            Stability::Stable => -1.0,
            Stability::Unstable => 1.0,
        }
    }

    pub fn from_derivative(d: f64) -> Self {
        if d < 0.0 {
            Stability::Stable
        } else {
            Stability::Unstable
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Equilibrium {
    pub x: f64,
    pub lambda: f64,
    pub stability: Stability,
    /// `∂ₓf(x, λ)`
    pub derivative: f64,
}

/// Newton's method safeguarded by bisection inside `[a, b]`, which must
/// bracket a sign change of `f(·, λ)`.
fn polish_bracketed(field: &dyn ScalarField, lambda: f64, mut a: f64, mut b: f64) -> f64 {
    let mut fa = field.eval(a, lambda);
    if fa == 0.0 {
        return a;
    }
    let mut x = 0.5 * (a + b);
    for _ in 0..200 {
        let fx = field.eval(x, lambda);
        if fx == 0.0 {
            return x;
        }
        if (fx < 0.0) == (fa < 0.0) {
            a = x;
            fa = fx;
        } else {
            b = x;
        }
        let d = field.dx(x, lambda);
        let newton = x - fx / d;
        let next = if d != 0.0 && newton > a.min(b) && newton < a.max(b) { newton } else { 0.5 * (a + b) };
        if (next - x).abs() <= 4.0 * f64::EPSILON * (1.0 + x.abs()) {
            return next;
        }
        x = next;
    }
    x
}

/// Plain Newton iteration from `guess`; `None` if it fails to settle.
pub(crate) fn newton_polish(field: &dyn ScalarField, lambda: f64, guess: f64, max_iter: usize) -> Option<f64> {
    let mut x = guess;
    for _ in 0..max_iter {
        let fx = field.eval(x, lambda);
        let d = field.dx(x, lambda);
        if fx == 0.0 {
            return Some(x);
        }
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        let step = fx / d;
        x -= step;
        if !x.is_finite() {
            return None;
        }
        if step.abs() <= 4.0 * f64::EPSILON * (1.0 + x.abs()) {
            return Some(x);
        }
    }
    let fx = field.eval(x, lambda);
    (fx.abs() < ROOT_TOLERANCE).then_some(x)
}

fn scan_nodes(x_min: f64, x_max: f64, cells: usize) -> Vec<f64> {
    // sinh-graded so both O(1) roots and the far field are resolved
    let (u0, u1) = (x_min.asinh(), x_max.asinh());
    let mut nodes: Vec<f64> = (0..=cells).map(|k| (u0 + (u1 - u0) * k as f64 / cells as f64).sinh()).collect();
    nodes[0] = x_min;
    nodes[cells] = x_max;
    nodes
}

/// All equilibria of `ẋ = f(x, λ)` inside the bound box, ascending in `x`.
pub fn find_equilibria(field: &dyn ScalarField, lambda: f64) -> Result<Vec<Equilibrium>, EquilibriumError> {
    let bb = field.bound_box();
    let xs = scan_nodes(bb.x_min, bb.x_max, SCAN_CELLS);
    let fs: Vec<f64> = xs.iter().map(|&x| field.eval(x, lambda)).collect();
    let ds: Vec<f64> = xs.iter().map(|&x| field.dx(x, lambda)).collect();

    let mut roots: Vec<f64> = Vec::new();
    for k in 0..xs.len() {
        if fs[k] == 0.0 {
            roots.push(xs[k]);
            continue;
        }
        if k + 1 == xs.len() || fs[k + 1] == 0.0 {
            continue;
        }
        let (a, b) = (xs[k], xs[k + 1]);
        if (fs[k] < 0.0) != (fs[k + 1] < 0.0) {
            roots.push(polish_bracketed(field, lambda, a, b));
        } else if (ds[k] < 0.0) != (ds[k + 1] < 0.0) {
            // an extremum inside the cell may hide a root pair or a tangency
            let c = bisect_critical(field, lambda, a, b, ds[k]);
            let fc = field.eval(c, lambda);
            if fc.abs() < ROOT_TOLERANCE {
                return Err(EquilibriumError::NonHyperbolicRoot { x: c, lambda, dxf: field.dx(c, lambda) });
            }
            if (fc < 0.0) != (fs[k] < 0.0) {
                roots.push(polish_bracketed(field, lambda, a, c));
                roots.push(polish_bracketed(field, lambda, c, b));
            }
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + a.abs()));

    if roots.is_empty() {
        return Err(EquilibriumError::NoRoots { lambda });
    }
    roots
        .into_iter()
        .map(|x| {
            let d = field.dx(x, lambda);
            if d.abs() < HYPERBOLICITY_TOLERANCE {
                return Err(EquilibriumError::NonHyperbolicRoot { x, lambda, dxf: d });
            }
            Ok(Equilibrium { x, lambda, stability: Stability::from_derivative(d), derivative: d })
        })
        .collect()
}

fn bisect_critical(field: &dyn ScalarField, lambda: f64, mut a: f64, mut b: f64, da: f64) -> f64 {
    let neg_a = da < 0.0;
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        if (field.dx(m, lambda) < 0.0) == neg_a {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// A continued curve of hyperbolic equilibria `X(τ)` with `Λ(τ)` along it.
#[derive(Debug, Clone)]
pub struct QuasiStaticBranch {
    model: ModelSpec,
    kind: Stability,
    tau: Vec<f64>,
    values: Vec<f64>,
    lambda_values: Vec<f64>,
    dxf: Vec<f64>,
    margin: f64,
    endpoint_minus: f64,
    endpoint_plus: f64,
    spline: CubicSpline,
}

impl QuasiStaticBranch {
    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn kind(&self) -> Stability {
        self.kind
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn lambda_values(&self) -> &[f64] {
        &self.lambda_values
    }

    /// `∂ₓf(X(τ_k), Λ(τ_k))` at the nodes.
    pub fn dxf(&self) -> &[f64] {
        &self.dxf
    }

    /// Hyperbolicity margin `p = min_k |∂ₓf|`.
    pub fn margin(&self) -> f64 {
        self.margin
    }

    /// Equilibrium of the past limit problem, at `λ_−`.
    pub fn endpoint_minus(&self) -> f64 {
        self.endpoint_minus
    }

    /// Equilibrium of the future limit problem, at `λ_+`.
    pub fn endpoint_plus(&self) -> f64 {
        self.endpoint_plus
    }

    pub fn tau_tail(&self) -> f64 {
        self.tau[self.tau.len() - 1]
    }

    pub fn spline_value(&self, tau: f64) -> f64 {
        let t = tau.clamp(self.tau[0], self.tau_tail());
        self.spline.eval(t)
    }

    pub fn spline_derivative(&self, tau: f64) -> f64 {
        if !(self.tau[0]..=self.tau_tail()).contains(&tau) {
            return 0.0;
        }
        self.spline.deriv(tau)
    }

    /// `X(τ)` polished to a root of `f(·, Λ(τ))`, seeded by the spline.
    ///
    /// Outside the grid this is the equilibrium at `Λ(τ)` itself, which tends
    /// to the endpoint values as `τ → ±∞`.
    pub fn value_at(&self, tau: f64) -> f64 {
        let guess = self.spline_value(tau);
        let lambda = self.model.ramp().eval(tau);
        newton_polish(self.model.field(), lambda, guess, 12).unwrap_or(guess)
    }

    /// `Ẋ(τ) = −∂_λf · Λ'(τ) / ∂ₓf` by implicit differentiation.
    pub fn derivative_at(&self, tau: f64) -> f64 {
        let x = self.value_at(tau);
        let ramp = self.model.ramp();
        let lambda = ramp.eval(tau);
        let field = self.model.field();
        -field.param_deriv(x, lambda) * ramp.deriv(tau) / field.dx(x, lambda)
    }

    /// `max_k |f(X(τ_k), Λ(τ_k))|`.
    pub fn residual_max(&self) -> f64 {
        let field = self.model.field();
        self.values
            .iter()
            .zip(&self.lambda_values)
            .map(|(&x, &l)| field.eval(x, l).abs())
            .fold(0.0, f64::max)
    }
}

/// `Ẋ(τ)` along `branch`.
pub fn branch_derivative(branch: &QuasiStaticBranch, tau: f64) -> f64 {
    branch.derivative_at(tau)
}

/// Continues `seed` (an equilibrium at `λ_−`) across `grid` with a tangent
/// predictor and a Newton corrector.
pub fn trace_branch(model: &ModelSpec, seed: &Equilibrium, grid: &TauGrid) -> Result<QuasiStaticBranch, EquilibriumError> {
    let field = model.field();
    let ramp = model.ramp();
    let kind = seed.stability;
    let n = grid.len();
    let mut values = Vec::with_capacity(n);
    let mut lambdas = Vec::with_capacity(n);
    let mut dxf = Vec::with_capacity(n);

    let fold = |tau: f64, lambda: f64, d: f64| EquilibriumError::BranchFold { tau, lambda, dxf: d };

    let mut prev_x = seed.x;
    let mut prev_rate = 0.0;
    let mut prev_tau = grid.first();
    for &tau in grid.nodes() {
        let lambda = ramp.eval(tau);
        let predicted = prev_x + prev_rate * (tau - prev_tau);
        let x = newton_polish(field, lambda, predicted, 50).ok_or_else(|| fold(tau, lambda, field.dx(predicted, lambda)))?;
        let d = field.dx(x, lambda);
        if d.abs() < HYPERBOLICITY_TOLERANCE || Stability::from_derivative(d) != kind {
            return Err(fold(tau, lambda, d));
        }
        prev_rate = -field.param_deriv(x, lambda) * ramp.deriv(tau) / d;
        prev_x = x;
        prev_tau = tau;
        values.push(x);
        lambdas.push(lambda);
        dxf.push(d);
    }

    let margin = dxf.iter().map(|d| d.abs()).fold(f64::INFINITY, f64::min);
    let polish_end = |x: f64, lambda: f64| newton_polish(field, lambda, x, 50).unwrap_or(x);
    let endpoint_minus = polish_end(values[0], ramp.lambda_minus());
    let endpoint_plus = polish_end(values[n - 1], ramp.lambda_plus());
    let spline = CubicSpline::new(grid.nodes(), &values);

    Ok(QuasiStaticBranch {
        model: model.clone(),
        kind,
        tau: grid.nodes().to_vec(),
        values,
        lambda_values: lambdas,
        dxf,
        margin,
        endpoint_minus,
        endpoint_plus,
        spline,
    })
}

/// Empirical `d_0`: `min_k |X_a(τ_k) − X_b(τ_k)|`.
pub fn min_branch_gap(a: &QuasiStaticBranch, b: &QuasiStaticBranch) -> Result<f64, EquilibriumError> {
    if a.tau != b.tau {
        return Err(EquilibriumError::GridMismatch);
    }
    let (gap, tau) = a
        .values
        .iter()
        .zip(&b.values)
        .zip(&a.tau)
        .map(|((x, y), &t)| ((x - y).abs(), t))
        .fold((f64::INFINITY, 0.0), |acc, v| if v.0 < acc.0 { v } else { acc });
    if gap < GAP_TOLERANCE {
        return Err(EquilibriumError::GapCollapse { gap, tau });
    }
    Ok(gap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{quad_arctan, BoundBox, Monomial, PolynomialField, StandardRamp};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn linear_model(sign: f64) -> ModelSpec {
        let field = PolynomialField::new(vec![Monomial::new(sign, 1, 0)], BoundBox::new(-1e6, 1e6, -1.0, 1.0));
        let ramp = StandardRamp::new(crate::model::RampShape::Arctan, -1.0, 1.0);
        ModelSpec::new("linear", Arc::new(field), Arc::new(ramp)).unwrap()
    }

    #[test]
    fn quadratic_equilibria_closed_form() {
        for zeta in [0.1_f64, 1.1] {
            let m = quad_arctan(zeta).unwrap();
            let eq = find_equilibria(m.field(), 0.0).unwrap();
            assert_eq!(eq.len(), 2);
            assert!((eq[0].x + zeta.sqrt()).abs() < 1e-12);
            assert!((eq[1].x - zeta.sqrt()).abs() < 1e-12);
            assert_eq!(eq[0].stability, Stability::Unstable);
            assert_eq!(eq[1].stability, Stability::Stable);
            for e in &eq {
                assert!(m.field().eval(e.x, e.lambda).abs() < ROOT_TOLERANCE);
            }
        }
        assert!((0.316228 - 0.1f64.sqrt()).abs() < 1e-6);
        assert!((1.048809 - 1.1f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn linear_field_single_stable_root() {
        let m = linear_model(-1.0);
        let eq = find_equilibria(m.field(), 0.4).unwrap();
        assert_eq!(eq.len(), 1);
        assert_eq!(eq[0].x, 0.0);
        assert_eq!(eq[0].stability, Stability::Stable);
    }

    #[test]
    fn tangency_and_empty_spectra() {
        let bb = BoundBox::new(-1e6, 1e6, -1.0, 1.0);
        // −(x − 0.3)²: double root, no sign change
        let tangent = PolynomialField::new(
            vec![Monomial::new(-1.0, 2, 0), Monomial::new(0.6, 1, 0), Monomial::new(-0.09, 0, 0)],
            bb,
        );
        assert!(matches!(find_equilibria(&tangent, 0.0), Err(EquilibriumError::NonHyperbolicRoot { .. })));
        let none = PolynomialField::new(vec![Monomial::new(-1.0, 2, 0), Monomial::new(-1.0, 0, 0)], bb);
        assert!(matches!(find_equilibria(&none, 0.0), Err(EquilibriumError::NoRoots { .. })));
    }

    #[test]
    fn close_root_pair_inside_one_cell() {
        // −(x − 100)² + 1e-4: roots 100 ± 0.01, far from the fine central cells
        let bb = BoundBox::new(-1e6, 1e6, -1.0, 1.0);
        let f = PolynomialField::new(
            vec![Monomial::new(-1.0, 2, 0), Monomial::new(200.0, 1, 0), Monomial::new(-1e4 + 1e-4, 0, 0)],
            bb,
        );
        let eq = find_equilibria(&f, 0.0).unwrap();
        assert_eq!(eq.len(), 2);
        assert!((eq[0].x - 99.99).abs() < 1e-8 && (eq[1].x - 100.01).abs() < 1e-8);
    }

    fn branches(zeta: f64) -> (QuasiStaticBranch, QuasiStaticBranch) {
        let m = quad_arctan(zeta).unwrap();
        let grid = TauGrid::graded(m.ramp().tail_tau(), 4001, 1.0);
        let eq = find_equilibria(m.field(), -1.0).unwrap();
        let s = trace_branch(&m, &eq[1], &grid).unwrap();
        let u = trace_branch(&m, &eq[0], &grid).unwrap();
        (s, u)
    }

    #[test]
    fn quadratic_branches_follow_closed_form() {
        let zeta: f64 = 0.1;
        let (s, u) = branches(zeta);
        let m = s.model().clone();
        let mut worst: f64 = 0.0;
        for (k, &tau) in s.tau().iter().enumerate() {
            let lam = m.ramp().eval(tau);
            worst = worst.max((s.values()[k] - (lam + zeta.sqrt())).abs());
            worst = worst.max((u.values()[k] - (lam - zeta.sqrt())).abs());
        }
        assert!(worst < 1e-8, "closed-form deviation {worst}");
        assert!(s.residual_max() < 1e-9 && u.residual_max() < 1e-9);
        assert!((s.margin() - 2.0 * zeta.sqrt()).abs() < 1e-9);
        assert!((s.margin() - 0.632456).abs() < 1e-6);
        assert!((s.endpoint_minus() - (-1.0 + zeta.sqrt())).abs() < 1e-12);
        assert!((s.endpoint_plus() - (1.0 + zeta.sqrt())).abs() < 1e-12);
        assert_eq!(s.kind(), Stability::Stable);
        assert_eq!(u.kind(), Stability::Unstable);
    }

    #[test]
    fn branch_derivative_is_ramp_speed() {
        let (s, u) = branches(0.1);
        assert!((branch_derivative(&s, 0.0) - 2.0 / PI).abs() < 1e-12);
        assert!((branch_derivative(&u, 0.0) - 0.636620).abs() < 1e-6);
        for &tau in &[-5.0, -0.3, 0.7, 40.0] {
            let ramp_speed = s.model().ramp().deriv(tau);
            assert!((branch_derivative(&s, tau) - ramp_speed).abs() < 1e-12);
        }
        // cross-check against the spline on interior nodes
        let mut worst: f64 = 0.0;
        for k in (1..s.tau().len() - 1).step_by(7) {
            let tau = s.tau()[k];
            worst = worst.max((branch_derivative(&s, tau) - s.spline_derivative(tau)).abs());
        }
        assert!(worst < 1e-5, "spline derivative mismatch {worst}");
    }

    #[test]
    fn frozen_ramp_branch() {
        let field = PolynomialField::new(vec![Monomial::new(-1.0, 1, 0)], BoundBox::new(-1e6, 1e6, 0.0, 0.0));
        let m = ModelSpec::new("frozen", Arc::new(field), Arc::new(StandardRamp::constant(0.0))).unwrap();
        let grid = TauGrid::graded(m.ramp().tail_tau(), 201, 1.0);
        let eq = find_equilibria(m.field(), 0.0).unwrap();
        let b = trace_branch(&m, &eq[0], &grid).unwrap();
        assert!(b.values().iter().all(|&x| x == 0.0));
        assert_eq!(b.margin(), 1.0);
        assert_eq!(branch_derivative(&b, 0.3), 0.0);
    }

    #[test]
    fn fold_detected() {
        // −(x − λ)² + 0.1 − λ: the equilibria merge once λ exceeds 0.1
        let bb = BoundBox::new(-1e6, 1e6, -1.0, 1.0);
        let f = PolynomialField::new(
            vec![
                Monomial::new(-1.0, 2, 0),
                Monomial::new(2.0, 1, 1),
                Monomial::new(-1.0, 0, 2),
                Monomial::new(0.1, 0, 0),
                Monomial::new(-1.0, 0, 1),
            ],
            bb,
        );
        let ramp = StandardRamp::new(crate::model::RampShape::Tanh, -1.0, 1.0);
        let m = ModelSpec::new("fold", Arc::new(f), Arc::new(ramp)).unwrap();
        let grid = TauGrid::graded(m.ramp().tail_tau(), 801, 1.0);
        let eq = find_equilibria(m.field(), -1.0).unwrap();
        let stable = eq.iter().find(|e| e.stability == Stability::Stable).unwrap();
        assert!(matches!(trace_branch(&m, stable, &grid), Err(EquilibriumError::BranchFold { .. })));
    }

    #[test]
    fn branch_gaps() {
        let (s, u) = branches(0.1);
        assert!((min_branch_gap(&s, &u).unwrap() - 0.632456).abs() < 1e-6);
        let (s, u) = branches(1.1);
        assert!((min_branch_gap(&s, &u).unwrap() - 2.097618).abs() < 1e-6);
        assert!(matches!(min_branch_gap(&s, &s), Err(EquilibriumError::GapCollapse { .. })));
    }
}
