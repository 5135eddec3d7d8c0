//! Declarative polynomial model files.
//!
//! ```text
//! # comments start with '#'
//! name: shifted_quadratic
//! f: -1 * x^2 + 2 * x * lambda - 1 * lambda^2 + 0.1
//! ramp: arctan
//! range: -1, 1
//! ```
//!
//! Each term of `f` is a product of an optional numeric coefficient and the
//! factors `x`, `x^i`, `lambda`, `lambda^j`. The ramp comes from the fixed
//! catalogue (`arctan`, `tanh`, `logistic`).

use std::sync::Arc;

use super::{BoundBox, ModelError, ModelSpec, Monomial, PolynomialField, RampShape, StandardRamp, DEFAULT_X_MAX};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub name: String,
    pub terms: Vec<Monomial>,
    pub ramp: RampShape,
    pub lambda_minus: f64,
    pub lambda_plus: f64,
}

impl ModelFile {
    pub fn into_model(self) -> Result<ModelSpec, ModelError> {
        let bb = BoundBox::new(-DEFAULT_X_MAX, DEFAULT_X_MAX, self.lambda_minus, self.lambda_plus);
        let field = PolynomialField::new(self.terms, bb);
        let ramp = StandardRamp::new(self.ramp, self.lambda_minus, self.lambda_plus);
        ModelSpec::new(self.name, Arc::new(field), Arc::new(ramp))
    }
}

fn err(line: usize, message: impl Into<String>) -> ModelError {
    ModelError::Parse { line, message: message.into() }
}

pub fn parse_model_file(text: &str) -> Result<ModelFile, ModelError> {
    let mut name = None;
    let mut terms = None;
    let mut ramp = None;
    let mut range = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| err(line_no, format!("expected 'key: value', got '{line}'")))?;
        let value = value.trim();
        match key.trim() {
            "name" => name = Some(value.to_string()),
            "f" => {
                if terms.is_some() {
                    return Err(err(line_no, "duplicate 'f:' line"));
                }
                terms = Some(parse_poly(value).map_err(|m| err(line_no, m))?);
            }
            "ramp" => {
                let shape = RampShape::parse(value)
                    .filter(|s| *s != RampShape::Constant)
                    .ok_or_else(|| err(line_no, format!("unknown ramp '{value}' (arctan, tanh, logistic)")))?;
                ramp = Some(shape);
            }
            "range" => {
                let nums: Vec<f64> = value
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<f64>().map_err(|_| err(line_no, format!("bad number '{s}'"))))
                    .collect::<Result<_, _>>()?;
                match nums.as_slice() {
                    [lo, hi] if lo < hi => range = Some((*lo, *hi)),
                    [_, _] => return Err(err(line_no, "range needs lambda_minus < lambda_plus")),
                    _ => return Err(err(line_no, "range needs exactly two numbers")),
                }
            }
            other => return Err(err(line_no, format!("unknown key '{other}'"))),
        }
    }

    let terms = terms.ok_or_else(|| err(0, "missing 'f:' line"))?;
    let ramp = ramp.ok_or_else(|| err(0, "missing 'ramp:' line"))?;
    let (lambda_minus, lambda_plus) = range.ok_or_else(|| err(0, "missing 'range:' line"))?;
    Ok(ModelFile { name: name.unwrap_or_else(|| "user".to_string()), terms, ramp, lambda_minus, lambda_plus })
}

/// Splits `a - b + c` into signed terms, leaving exponent signs alone.
fn split_terms(s: &str) -> Vec<(f64, String)> {
    let mut out = Vec::new();
    let mut sign = 1.0;
    let mut cur = String::new();
    let mut prev: Option<char> = None;
    for c in s.chars() {
        let is_binary = matches!(c, '+' | '-')
            && !matches!(prev, Some('^') | Some('e') | Some('E') | Some('*'))
            && !cur.trim().is_empty();
        if is_binary {
            out.push((sign, cur.trim().to_string()));
            cur.clear();
            sign = if c == '-' { -1.0 } else { 1.0 };
        } else if matches!(c, '+' | '-') && cur.trim().is_empty() && prev != Some('*') {
            if c == '-' {
                sign = -sign;
            }
        } else {
            cur.push(c);
        }
        if !c.is_whitespace() {
            prev = Some(c);
        }
    }
    if !cur.trim().is_empty() {
        out.push((sign, cur.trim().to_string()));
    }
    out
}

fn parse_poly(s: &str) -> Result<Vec<Monomial>, String> {
    let terms = split_terms(s);
    if terms.is_empty() {
        return Err("empty polynomial".to_string());
    }
    terms.into_iter().map(|(sign, t)| parse_term(&t).map(|mut m| {
        m.coeff *= sign;
        m
    })).collect()
}

fn parse_term(t: &str) -> Result<Monomial, String> {
    let mut m = Monomial::new(1.0, 0, 0);
    for factor in t.split('*').map(str::trim) {
        if factor.is_empty() {
            return Err(format!("empty factor in term '{t}'"));
        }
        let (base, exp) = match factor.split_once('^') {
            Some((b, e)) => {
                let e: u32 = e.trim().parse().map_err(|_| format!("bad exponent in '{factor}'"))?;
                (b.trim(), e)
            }
            None => (factor, 1),
        };
        match base {
            "x" => m.x_pow += exp,
            "lambda" | "l" => m.lambda_pow += exp,
            num => {
                let c: f64 = num.parse().map_err(|_| format!("unrecognised factor '{factor}'"))?;
                m.coeff *= c.powi(exp as i32);
            }
        }
    }
    Ok(m)
}
