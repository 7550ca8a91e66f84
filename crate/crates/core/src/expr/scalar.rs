//! Scalar semantics shared by the evaluator, constant folding and the kernel
//! interpreter. Every numeric path goes through these functions so that all
//! three produce bit-identical results.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Single-argument primitive operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UnaryOp {
    Neg,
    Exp,
    Log,
    Sqrt,
    Tanh,
    Sigmoid,
    Abs,
}

/// Two-argument primitive operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Min,
    Max,
}

/// Comparison used by piecewise guards.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relation {
    /// `lhs < rhs`; equality selects the second branch.
    Lt,
    /// `lhs <= rhs`; equality selects the first branch.
    Le,
}

impl Relation {
    #[inline]
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Relation::Lt => lhs < rhs,
            Relation::Le => lhs <= rhs,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Lt => "<",
            Relation::Le => "<=",
        }
    }
}

/// Why a primitive could not be evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DomainError {
    DivisionByZero,
    LogOfNonPositive,
    SqrtOfNegative,
    /// Negative base raised to a non-integer power.
    NegativeBase,
}

impl fmt::Display for DomainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match self {
            DomainError::DivisionByZero => "division by zero",
            DomainError::LogOfNonPositive => "logarithm of a non-positive value",
            DomainError::SqrtOfNegative => "square root of a negative value",
            DomainError::NegativeBase => "negative base raised to a non-integer power",
        };
        f.write_str(msg)
    }
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 7] =
        [UnaryOp::Neg, UnaryOp::Exp, UnaryOp::Log, UnaryOp::Sqrt, UnaryOp::Tanh, UnaryOp::Sigmoid, UnaryOp::Abs];

    /// Function-call spelling, `None` for prefix negation.
    pub fn name(self) -> Option<&'static str> {
        match self {
            UnaryOp::Neg => None,
            UnaryOp::Exp => Some("exp"),
            UnaryOp::Log => Some("log"),
            UnaryOp::Sqrt => Some("sqrt"),
            UnaryOp::Tanh => Some("tanh"),
            UnaryOp::Sigmoid => Some("sigmoid"),
            UnaryOp::Abs => Some("abs"),
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> Result<f64, DomainError> {
        Ok(match self {
            UnaryOp::Neg => -x,
            UnaryOp::Exp => x.exp(),
            UnaryOp::Log => {
                if x <= 0.0 {
                    return Err(DomainError::LogOfNonPositive);
                }
                x.ln()
            }
            UnaryOp::Sqrt => {
                if x < 0.0 {
                    return Err(DomainError::SqrtOfNegative);
                }
                x.sqrt()
            }
            UnaryOp::Tanh => x.tanh(),
            UnaryOp::Sigmoid => sigmoid(x),
            UnaryOp::Abs => x.abs(),
        })
    }
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 7] =
        [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div, BinaryOp::Pow, BinaryOp::Min, BinaryOp::Max];

    #[inline]
    pub fn apply(self, a: f64, b: f64) -> Result<f64, DomainError> {
        Ok(match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => {
                if b == 0.0 {
                    return Err(DomainError::DivisionByZero);
                }
                a / b
            }
            BinaryOp::Pow => return pow(a, b),
            BinaryOp::Min => {
                if a <= b {
                    a
                } else {
                    b
                }
            }
            BinaryOp::Max => {
                if b <= a {
                    a
                } else {
                    b
                }
            }
        })
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Largest exponent magnitude handled by repeated multiplication.
pub const INT_POW_LIMIT: f64 = 1024.0;

/// `base^exp`. Integer exponents up to [`INT_POW_LIMIT`] use repeated
/// squaring, so `pow(x, 2.0)` is exactly `x * x`.
pub fn pow(base: f64, exp: f64) -> Result<f64, DomainError> {
    if let Some(n) = integer_exponent(exp) {
        if n < 0 {
            if base == 0.0 {
                return Err(DomainError::DivisionByZero);
            }
            return Ok(1.0 / powi_exact(base, n.unsigned_abs()));
        }
        return Ok(powi_exact(base, n as u32));
    }
    if base < 0.0 {
        return Err(DomainError::NegativeBase);
    }
    if base == 0.0 && exp < 0.0 {
        return Err(DomainError::DivisionByZero);
    }
    Ok(base.powf(exp))
}

/// Returns the exponent as an integer when it takes the repeated-multiplication path.
#[inline]
pub fn integer_exponent(exp: f64) -> Option<i32> {
    if exp.fract() == 0.0 && exp.abs() <= INT_POW_LIMIT {
        Some(exp as i32)
    } else {
        None
    }
}

pub fn powi_exact(base: f64, n: u32) -> f64 {
    let mut acc: Option<f64> = None;
    let mut square = base;
    let mut k = n;
    while k > 0 {
        if k & 1 == 1 {
            acc = Some(match acc {
                None => square,
                Some(a) => a * square,
            });
        }
        k >>= 1;
        if k > 0 {
            square = square * square;
        }
    }
    acc.unwrap_or(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_is_plain_product() {
        for &x in &[0.1, 1.75, -3.3, 1e-200, 7.123456789] {
            assert_eq!(pow(x, 2.0).unwrap().to_bits(), (x * x).to_bits());
        }
    }

    #[test]
    fn integer_powers() {
        assert_eq!(pow(2.0, 9.0).unwrap(), 512.0);
        assert_eq!(pow(-2.0, 3.0).unwrap(), -8.0);
        assert_eq!(pow(0.0, 0.0).unwrap(), 1.0);
        assert_eq!(pow(2.0, -2.0).unwrap(), 0.25);
        assert_eq!(pow(0.0, -1.0), Err(DomainError::DivisionByZero));
    }

    #[test]
    fn real_powers_need_nonnegative_base() {
        assert_eq!(pow(-2.0, 0.5), Err(DomainError::NegativeBase));
        assert!((pow(4.0, 0.5).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn domain_errors() {
        assert_eq!(UnaryOp::Log.apply(0.0), Err(DomainError::LogOfNonPositive));
        assert_eq!(UnaryOp::Sqrt.apply(-1.0), Err(DomainError::SqrtOfNegative));
        assert_eq!(UnaryOp::Sqrt.apply(0.0), Ok(0.0));
        assert_eq!(BinaryOp::Div.apply(1.0, 0.0), Err(DomainError::DivisionByZero));
    }

    #[test]
    fn tie_rule() {
        assert!(!Relation::Lt.holds(1.0, 1.0));
        assert!(Relation::Le.holds(1.0, 1.0));
    }
}
