use super::{BoundBox, Jet, ScalarField};

/// Jets of polynomial fields are exact; this caps the order handed out.
pub const POLYNOMIAL_MAX_ORDER: usize = 16;

/// `coeff · x^x_pow · λ^lambda_pow`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Monomial {
    pub coeff: f64,
    pub x_pow: u32,
    pub lambda_pow: u32,
}

impl Monomial {
    pub fn new(coeff: f64, x_pow: u32, lambda_pow: u32) -> Self {
        Monomial { coeff, x_pow, lambda_pow }
    }
}

/// Polynomial field in `(x, λ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialField {
    terms: Vec<Monomial>,
    bound_box: BoundBox,
}

impl PolynomialField {
    pub fn new(terms: Vec<Monomial>, bound_box: BoundBox) -> Self {
        PolynomialField { terms, bound_box }
    }

    /// `−(x − λ)² + ζ = −x² + 2xλ − λ² + ζ`.
    pub fn quadratic(zeta: f64, bound_box: BoundBox) -> Self {
        Self::new(
            vec![
                Monomial::new(-1.0, 2, 0),
                Monomial::new(2.0, 1, 1),
                Monomial::new(-1.0, 0, 2),
                Monomial::new(zeta, 0, 0),
            ],
            bound_box,
        )
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    /// The same polynomial multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let terms = self.terms.iter().map(|m| Monomial { coeff: m.coeff * c, ..*m }).collect();
        PolynomialField { terms, bound_box: self.bound_box }
    }

    pub fn degree_in_x(&self) -> u32 {
        self.terms.iter().map(|m| m.x_pow).max().unwrap_or(0)
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl ScalarField for PolynomialField {
    fn eval(&self, x: f64, lambda: f64) -> f64 {
        self.terms
            .iter()
            .map(|m| m.coeff * x.powi(m.x_pow as i32) * lambda.powi(m.lambda_pow as i32))
            .sum()
    }

    fn taylor(&self, x0: f64, lambda: f64, order: usize) -> Jet {
        let mut coeffs = vec![0.0; order + 1];
        for m in &self.terms {
            let scale = m.coeff * lambda.powi(m.lambda_pow as i32);
            for (k, c) in coeffs.iter_mut().enumerate().take((m.x_pow as usize).min(order) + 1) {
                let k = k as u32;
                *c += scale * binomial(m.x_pow, k) * x0.powi((m.x_pow - k) as i32);
            }
        }
        Jet::new(coeffs)
    }

    fn param_deriv(&self, x: f64, lambda: f64) -> f64 {
        self.terms
            .iter()
            .filter(|m| m.lambda_pow > 0)
            .map(|m| m.coeff * m.lambda_pow as f64 * x.powi(m.x_pow as i32) * lambda.powi(m.lambda_pow as i32 - 1))
            .sum()
    }

    fn bound_box(&self) -> BoundBox {
        self.bound_box
    }

    fn max_order(&self) -> usize {
        POLYNOMIAL_MAX_ORDER
    }

    fn dx(&self, x: f64, lambda: f64) -> f64 {
        self.terms
            .iter()
            .filter(|m| m.x_pow > 0)
            .map(|m| m.coeff * m.x_pow as f64 * x.powi(m.x_pow as i32 - 1) * lambda.powi(m.lambda_pow as i32))
            .sum()
    }
}
