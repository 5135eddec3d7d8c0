use std::f64::consts::PI;
use std::fmt;

use serde::Serialize;

/// Default bound on `|Λ'(±τ_tail)|`.
pub const DEFAULT_TAIL_TOLERANCE: f64 = 1e-8;

/// Smallest tail horizon handed out, also used for constant ramps.
pub const MIN_TAIL_TAU: f64 = 10.0;

/// A bounded, increasing parameter shift `τ ↦ Λ(τ)` with limits `λ_∓`.
pub trait RampFunction: Send + Sync + fmt::Debug {
    fn eval(&self, tau: f64) -> f64;
    fn deriv(&self, tau: f64) -> f64;
    fn lambda_minus(&self) -> f64;
    fn lambda_plus(&self) -> f64;

    /// Bound on `|Λ'|` beyond `±τ_tail`, where the ramp counts as frozen.
    fn tail_tolerance(&self) -> f64 {
        DEFAULT_TAIL_TOLERANCE
    }

    /// Smallest `τ ≥ MIN_TAIL_TAU` with `|Λ'(±τ)| < tail_tolerance`, assuming
    /// the derivative decays monotonically in the tails.
    fn tail_tau(&self) -> f64 {
        let tol = self.tail_tolerance();
        let flat = |tau: f64| self.deriv(tau).abs().max(self.deriv(-tau).abs()) < tol;
        let mut hi = MIN_TAIL_TAU;
        if flat(hi) {
            return hi;
        }
        while !flat(hi) {
            hi *= 2.0;
            if hi > 1e12 {
                return hi;
            }
        }
        let mut lo = hi / 2.0;
        while hi - lo > 1e-9 * hi {
            let mid = 0.5 * (lo + hi);
            if flat(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RampShape {
    Arctan,
    Tanh,
    Logistic,
    /// `Λ ≡ λ_−`: the frozen system, used as a degenerate reference.
    Constant,
}

impl RampShape {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "arctan" | "atan" => Some(RampShape::Arctan),
            "tanh" => Some(RampShape::Tanh),
            "logistic" | "sigmoid" => Some(RampShape::Logistic),
            "constant" | "frozen" => Some(RampShape::Constant),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RampShape::Arctan => "arctan",
            RampShape::Tanh => "tanh",
            RampShape::Logistic => "logistic",
            RampShape::Constant => "constant",
        }
    }

    /// Normalised profile `g: ℝ → (0, 1)` and its derivative.
    fn profile(&self, tau: f64) -> (f64, f64) {
        match self {
            RampShape::Arctan => (0.5 + tau.atan() / PI, 1.0 / (PI * (1.0 + tau * tau))),
            RampShape::Tanh => {
                let c = tau.cosh();
                (0.5 * (1.0 + tau.tanh()), 0.5 / (c * c))
            }
            RampShape::Logistic => {
                // symmetric form keeps precision in both tails
                let e = (-tau.abs()).exp();
                let s = 1.0 / (1.0 + e);
                let g = if tau >= 0.0 { s } else { 1.0 - s };
                (g, e / ((1.0 + e) * (1.0 + e)))
            }
            RampShape::Constant => (0.0, 0.0),
        }
    }
}

/// One of the catalogue ramps, affinely mapped onto `[λ_−, λ_+]`.
///
/// `Arctan` on `[−1, 1]` is `(2/π) arctan τ`; `Tanh` on `[−1, 1]` is `tanh τ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StandardRamp {
    shape: RampShape,
    lambda_minus: f64,
    lambda_plus: f64,
    tail_tolerance: f64,
}

impl StandardRamp {
    pub fn new(shape: RampShape, lambda_minus: f64, lambda_plus: f64) -> Self {
        let lambda_plus = if shape == RampShape::Constant { lambda_minus } else { lambda_plus };
        StandardRamp { shape, lambda_minus, lambda_plus, tail_tolerance: DEFAULT_TAIL_TOLERANCE }
    }

    pub fn constant(lambda: f64) -> Self {
        Self::new(RampShape::Constant, lambda, lambda)
    }

    pub fn with_tail_tolerance(mut self, tol: f64) -> Self {
        self.tail_tolerance = tol;
        self
    }

    pub fn shape(&self) -> RampShape {
        self.shape
    }
}

impl RampFunction for StandardRamp {
    fn eval(&self, tau: f64) -> f64 {
        let (g, _) = self.shape.profile(tau);
        self.lambda_minus + (self.lambda_plus - self.lambda_minus) * g
    }

    fn deriv(&self, tau: f64) -> f64 {
        let (_, dg) = self.shape.profile(tau);
        (self.lambda_plus - self.lambda_minus) * dg
    }

    fn lambda_minus(&self) -> f64 {
        self.lambda_minus
    }

    fn lambda_plus(&self) -> f64 {
        self.lambda_plus
    }

    fn tail_tolerance(&self) -> f64 {
        self.tail_tolerance
    }

    fn tail_tau(&self) -> f64 {
        let span = (self.lambda_plus - self.lambda_minus).abs();
        let tol = self.tail_tolerance;
        let tau = match self.shape {
            RampShape::Constant => return MIN_TAIL_TAU,
            // span / (π (1 + τ²)) = tol
            RampShape::Arctan => (span / (PI * tol) - 1.0).max(0.0).sqrt(),
            // span / (2 cosh² τ) = tol
            RampShape::Tanh => (span / (2.0 * tol)).sqrt().max(1.0).acosh(),
            // span · e/(1+e)² = tol, e = e^{-τ}; solve the quadratic in e
            RampShape::Logistic => {
                let q = tol / span;
                // small root as the reciprocal of the large one (roots multiply to 1)
                let e = 2.0 * q / ((1.0 - 2.0 * q) + (1.0 - 4.0 * q).max(0.0).sqrt());
                -e.ln()
            }
        };
        // nudge past the boundary so the strict inequality holds
        (tau * (1.0 + 1e-9)).max(MIN_TAIL_TAU)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RampViolation {
    NotIncreasing { tau_a: f64, tau_b: f64, value_a: f64, value_b: f64 },
    OutOfRange { tau: f64, value: f64 },
    NonPositiveDerivative { tau: f64, deriv: f64 },
    TailNotFlat { tau: f64, deriv: f64 },
}

/// Result of [`validate_ramp`]; an empty violation list means every sampled
/// invariant holds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RampReport {
    pub tail_tau: f64,
    /// `max(|Λ(−τ_tail) − λ_−|, |Λ(τ_tail) − λ_+|)`, reported, not checked.
    pub tail_value_residual: f64,
    pub violations: Vec<RampViolation>,
}

impl RampReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks monotonicity, range and tail flatness of `ramp` on `grid`.
///
/// Only the first few violations of each kind are kept.
pub fn validate_ramp(ramp: &dyn RampFunction, grid: &[f64]) -> RampReport {
    const KEEP: usize = 8;
    let (lo, hi) = (ramp.lambda_minus(), ramp.lambda_plus());
    let (lo, hi) = (lo.min(hi), lo.max(hi));
    let mut violations = Vec::new();
    let (mut n_mono, mut n_range, mut n_deriv) = (0, 0, 0);

    let values: Vec<f64> = grid.iter().map(|&t| ramp.eval(t)).collect();
    for (k, (&tau, &v)) in grid.iter().zip(&values).enumerate() {
        if !(v >= lo && v <= hi) && n_range < KEEP {
            violations.push(RampViolation::OutOfRange { tau, value: v });
            n_range += 1;
        }
        let d = ramp.deriv(tau);
        if !(d > 0.0) && n_deriv < KEEP {
            violations.push(RampViolation::NonPositiveDerivative { tau, deriv: d });
            n_deriv += 1;
        }
        if k > 0 && !(values[k - 1] < v) && n_mono < KEEP {
            violations.push(RampViolation::NotIncreasing {
                tau_a: grid[k - 1],
                tau_b: tau,
                value_a: values[k - 1],
                value_b: v,
            });
            n_mono += 1;
        }
    }

    let tail_tau = ramp.tail_tau();
    for tau in [-tail_tau, tail_tau] {
        let d = ramp.deriv(tau);
        if !(d.abs() < ramp.tail_tolerance()) {
            violations.push(RampViolation::TailNotFlat { tau, deriv: d });
        }
    }
    let tail_value_residual = (ramp.eval(-tail_tau) - ramp.lambda_minus())
        .abs()
        .max((ramp.eval(tail_tau) - ramp.lambda_plus()).abs());

    RampReport { tail_tau, tail_value_residual, violations }
}
