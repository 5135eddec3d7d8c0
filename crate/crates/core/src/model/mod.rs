//! Vector fields `f(x, λ)`, parameter ramps `Λ(τ)` and the model registry.
//!
//! A model couples a scalar field with a ramp and defines the
//! nonautonomous problem `ẋ = f(x, Λ(r t))`. Fields expose Taylor jets in
//! `x` so that the asymptotic-series recursion can ask for arbitrarily
//! high `x`-derivatives without symbolic algebra.

mod parse;
mod poly;
mod ramp;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use parse::{parse_model_file, ModelFile};
pub use poly::{Monomial, PolynomialField, POLYNOMIAL_MAX_ORDER};
pub use ramp::{
    validate_ramp, RampFunction, RampReport, RampShape, RampViolation, StandardRamp,
    DEFAULT_TAIL_TOLERANCE, MIN_TAIL_TAU,
};

/// Escape bound on `|x|` used by every built-in model.
pub const DEFAULT_X_MAX: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("jet order {requested} exceeds the model's maximum differentiability {max}")]
    OrderTooHigh { requested: usize, max: usize },
    #[error("point (x={x}, lambda={lambda}) lies outside the model's bound box")]
    OutOfDomain { x: f64, lambda: f64 },
    #[error("unknown model '{0}'")]
    UnknownModel(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("model file line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Truncated Taylor expansion of `x ↦ f(x, λ)` about a base point.
///
/// `coeffs[j] = ∂ʲₓf(x₀, λ) / j!`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    coeffs: Vec<f64>,
}

impl Jet {
    pub fn new(coeffs: Vec<f64>) -> Self {
        assert!(!coeffs.is_empty(), "a jet carries at least the value");
        Jet { coeffs }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    /// The `j`-th partial derivative `∂ʲₓf` (not divided by `j!`).
    pub fn derivative(&self, j: usize) -> f64 {
        self.coeffs[j] * factorial(j)
    }

    /// Evaluates the truncated polynomial at offset `h` from the base point.
    pub fn eval_offset(&self, h: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * h + c)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }
}

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Rectangle `[x_min, x_max] × [λ_min, λ_max]` on which a field is trusted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundBox {
    pub x_min: f64,
    pub x_max: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl BoundBox {
    pub fn new(x_min: f64, x_max: f64, lambda_min: f64, lambda_max: f64) -> Self {
        BoundBox { x_min, x_max, lambda_min, lambda_max }
    }

    pub fn contains(&self, x: f64, lambda: f64) -> bool {
        let slack = 1e-12 * (1.0 + self.lambda_min.abs().max(self.lambda_max.abs()));
        x >= self.x_min
            && x <= self.x_max
            && lambda >= self.lambda_min - slack
            && lambda <= self.lambda_max + slack
    }

    /// Largest admissible `|x|`; trajectories beyond `0.99` of it are escapes.
    pub fn x_bound(&self) -> f64 {
        self.x_min.abs().min(self.x_max.abs())
    }
}

/// A scalar vector field `f(x, λ)` with jets in `x` and a first `λ`-derivative.
pub trait ScalarField: Send + Sync + fmt::Debug {
    fn eval(&self, x: f64, lambda: f64) -> f64;

    /// Taylor coefficients in `x` about `x0`, up to `order`. Implementations
    /// may assume `order <= self.max_order()`.
    fn taylor(&self, x0: f64, lambda: f64, order: usize) -> Jet;

    /// `∂_λ f(x, λ)`.
    fn param_deriv(&self, x: f64, lambda: f64) -> f64;

    fn bound_box(&self) -> BoundBox;

    /// Highest `x`-derivative the field can provide.
    fn max_order(&self) -> usize;

    /// `∂ₓf(x, λ)`.
    fn dx(&self, x: f64, lambda: f64) -> f64 {
        self.taylor(x, lambda, 1).coeffs()[1]
    }
}

/// Checked jet evaluation.
pub fn jet_eval(field: &dyn ScalarField, x0: f64, lambda: f64, n: usize) -> Result<Jet, ModelError> {
    if n > field.max_order() {
        return Err(ModelError::OrderTooHigh { requested: n, max: field.max_order() });
    }
    if !field.bound_box().contains(x0, lambda) {
        return Err(ModelError::OutOfDomain { x: x0, lambda });
    }
    Ok(field.taylor(x0, lambda, n))
}

/// A field together with its ramp: the problem `ẋ = f(x, Λ(r t))`.
#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    field: Arc<dyn ScalarField>,
    ramp: Arc<dyn RampFunction>,
    params: BTreeMap<String, f64>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("field", &self.field)
            .field("ramp", &self.ramp)
            .finish()
    }
}

impl ModelSpec {
    pub fn new(
        name: impl Into<String>,
        field: Arc<dyn ScalarField>,
        ramp: Arc<dyn RampFunction>,
    ) -> Result<Self, ModelError> {
        let bb = field.bound_box();
        let (lo, hi) = (ramp.lambda_minus(), ramp.lambda_plus());
        if !(bb.contains(0.5 * (bb.x_min + bb.x_max), lo) && bb.contains(0.5 * (bb.x_min + bb.x_max), hi)) {
            return Err(ModelError::InvalidParameter(format!(
                "bound box lambda range [{}, {}] does not cover [{lo}, {hi}]",
                bb.lambda_min, bb.lambda_max
            )));
        }
        Ok(ModelSpec { name: name.into(), field, ramp, params: BTreeMap::new() })
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn field(&self) -> &dyn ScalarField {
        self.field.as_ref()
    }

    pub fn ramp(&self) -> &dyn RampFunction {
        self.ramp.as_ref()
    }

    pub fn field_arc(&self) -> Arc<dyn ScalarField> {
        Arc::clone(&self.field)
    }

    pub fn ramp_arc(&self) -> Arc<dyn RampFunction> {
        Arc::clone(&self.ramp)
    }

    /// Right-hand side `f(x, Λ(r t))`.
    #[inline]
    pub fn rhs(&self, r: f64, t: f64, x: f64) -> f64 {
        self.field.eval(x, self.ramp.eval(r * t))
    }

    pub fn x_bound(&self) -> f64 {
        self.field.bound_box().x_bound()
    }
}

/// Names accepted by [`builtin`].
pub const BUILTIN_MODELS: &[&str] = &["quad_arctan", "quad_tanh"];

/// `f(x, λ) = −(x − λ)² + ζ` with `Λ(τ) = (2/π) arctan τ`.
pub fn quad_arctan(zeta: f64) -> Result<ModelSpec, ModelError> {
    quadratic("quad_arctan", zeta, RampShape::Arctan)
}

/// `f(x, λ) = −(x − λ)² + ζ` with `Λ(τ) = tanh τ`.
pub fn quad_tanh(zeta: f64) -> Result<ModelSpec, ModelError> {
    quadratic("quad_tanh", zeta, RampShape::Tanh)
}

fn quadratic(name: &str, zeta: f64, shape: RampShape) -> Result<ModelSpec, ModelError> {
    if !(zeta > 0.0) || !zeta.is_finite() {
        return Err(ModelError::InvalidParameter(format!(
            "zeta = {zeta}: frozen system has no equilibria (zeta must be > 0)"
        )));
    }
    let ramp = StandardRamp::new(shape, -1.0, 1.0);
    let field = PolynomialField::quadratic(zeta, BoundBox::new(-DEFAULT_X_MAX, DEFAULT_X_MAX, -1.0, 1.0));
    Ok(ModelSpec::new(name, Arc::new(field), Arc::new(ramp))?.with_param("zeta", zeta))
}

/// Looks up a built-in model by name; `params` may carry `zeta`.
pub fn builtin(name: &str, params: &BTreeMap<String, f64>) -> Result<ModelSpec, ModelError> {
    let zeta = params.get("zeta").copied().unwrap_or(0.1);
    match name {
        "quad_arctan" => quad_arctan(zeta),
        "quad_tanh" => quad_tanh(zeta),
        other => Err(ModelError::UnknownModel(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_jet_at_origin() {
        let m = quad_arctan(0.1).unwrap();
        let jet = jet_eval(m.field(), 0.0, 0.0, 3).unwrap();
        let expected = [0.1, 0.0, -1.0, 0.0];
        for (c, e) in jet.coeffs().iter().zip(expected) {
            assert!((c - e).abs() < 1e-15, "{c} vs {e}");
        }
        assert_eq!(jet.derivative(2), -2.0);
    }

    #[test]
    fn linear_and_constant_jets() {
        let bb = BoundBox::new(-10.0, 10.0, -1.0, 1.0);
        let lin = PolynomialField::new(vec![Monomial::new(-1.0, 1, 0)], bb);
        assert_eq!(jet_eval(&lin, 0.0, 0.3, 2).unwrap().coeffs(), &[0.0, -1.0, 0.0]);
        let c = 2.5;
        let cst = PolynomialField::new(vec![Monomial::new(c, 0, 0)], bb);
        assert_eq!(jet_eval(&cst, 1.7, -0.2, 4).unwrap().coeffs(), &[c, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn jet_errors() {
        let m = quad_arctan(0.1).unwrap();
        assert!(matches!(
            jet_eval(m.field(), 0.0, 0.0, POLYNOMIAL_MAX_ORDER + 1),
            Err(ModelError::OrderTooHigh { .. })
        ));
        assert!(matches!(jet_eval(m.field(), 0.0, 1.5, 2), Err(ModelError::OutOfDomain { .. })));
        assert!(matches!(jet_eval(m.field(), 2e6, 0.0, 2), Err(ModelError::OutOfDomain { .. })));
    }

    #[test]
    fn non_positive_zeta_rejected() {
        let err = quad_arctan(0.0).unwrap_err();
        assert!(err.to_string().contains("frozen system has no equilibria"));
        assert!(quad_tanh(-1.0).is_err());
    }

    #[test]
    fn registry_lookup() {
        let mut p = BTreeMap::new();
        p.insert("zeta".to_string(), 1.1);
        let m = builtin("quad_tanh", &p).unwrap();
        assert_eq!(m.name(), "quad_tanh");
        assert_eq!(m.params()["zeta"], 1.1);
        assert!(matches!(builtin("nope", &p), Err(ModelError::UnknownModel(_))));
    }

    #[test]
    fn horner_shift_reproduces_value() {
        // Jet at x0 + h resummed at -h gives f(x0) exactly for a polynomial.
        let m = quad_arctan(0.1).unwrap();
        for &(x0, lam, h) in &[(0.3, -0.4, 0.25), (-1.2, 0.9, -0.7), (2.0, 0.0, 1.5)] {
            let shifted = m.field().taylor(x0 + h, lam, 4);
            let direct = m.field().eval(x0, lam);
            assert!((shifted.eval_offset(-h) - direct).abs() < 1e-10);
        }
    }
}
