use std::fmt;

use serde::{Deserialize, Serialize};

use crate::expr::{integer_exponent, powi_exact, BinaryOp, DomainError, Relation, UnaryOp};

/// Closed real interval `[lo, hi]`.
///
/// Results of inexact operations are widened outward by one ulp per
/// endpoint (a few ulps for transcendental functions), so an enclosure
/// computed here contains both the real-valued result and the value the
/// scalar evaluator produces.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

#[inline]
fn down(x: f64, ulps: u32) -> f64 {
    let mut y = x;
    for _ in 0..ulps {
        y = y.next_down();
    }
    y
}

#[inline]
fn up(x: f64, ulps: u32) -> f64 {
    let mut y = x;
    for _ in 0..ulps {
        y = y.next_up();
    }
    y
}

const TRANSCENDENTAL_ULPS: u32 = 2;

impl Interval {
    /// Checked constructor for user-supplied bounds.
    pub fn new(lo: f64, hi: f64) -> Option<Self> {
        (lo.is_finite() && hi.is_finite() && lo <= hi).then_some(Interval { lo, hi })
    }

    pub const fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    #[inline]
    fn raw(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    #[inline]
    fn widened(lo: f64, hi: f64, ulps: u32) -> Self {
        // Rounding never flips a sign, so a computed +0 lower endpoint (or -0
        // upper endpoint) is already a valid bound on that side of zero.
        let lo = if lo == 0.0 && lo.is_sign_positive() { 0.0 } else { down(lo, ulps) };
        let hi = if hi == 0.0 && hi.is_sign_negative() { -0.0 } else { up(hi, ulps) };
        Interval { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        self.lo + 0.5 * (self.hi - self.lo)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_zero(&self) -> bool {
        self.lo <= 0.0 && 0.0 <= self.hi
    }

    pub fn is_subset_of(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    /// Both endpoints finite.
    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn magnitude(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval::raw(self.lo.min(other.lo), self.hi.max(other.hi))
    }

    pub fn split(&self) -> (Interval, Interval) {
        let m = self.mid();
        (Interval::raw(self.lo, m), Interval::raw(m, self.hi))
    }

    /// Decides `self rel other` when every pair of points agrees.
    pub fn compare(&self, rel: Relation, other: &Interval) -> Option<bool> {
        match rel {
            Relation::Lt => {
                if self.hi < other.lo {
                    Some(true)
                } else if self.lo >= other.hi {
                    Some(false)
                } else {
                    None
                }
            }
            Relation::Le => {
                if self.hi <= other.lo {
                    Some(true)
                } else if self.lo > other.hi {
                    Some(false)
                } else {
                    None
                }
            }
        }
    }

    pub fn unary(self, op: UnaryOp) -> Result<Interval, DomainError> {
        let x = self;
        Ok(match op {
            UnaryOp::Neg => Interval::raw(-x.hi, -x.lo),
            UnaryOp::Exp => {
                let r = Interval::widened(x.lo.exp(), x.hi.exp(), TRANSCENDENTAL_ULPS);
                Interval::raw(r.lo.max(0.0), r.hi)
            }
            UnaryOp::Log => {
                if x.lo <= 0.0 {
                    return Err(DomainError::LogOfNonPositive);
                }
                Interval::widened(x.lo.ln(), x.hi.ln(), TRANSCENDENTAL_ULPS)
            }
            UnaryOp::Sqrt => {
                if x.lo < 0.0 {
                    return Err(DomainError::SqrtOfNegative);
                }
                let r = Interval::widened(x.lo.sqrt(), x.hi.sqrt(), 1);
                Interval::raw(r.lo.max(0.0), r.hi)
            }
            UnaryOp::Tanh => {
                let r = Interval::widened(x.lo.tanh(), x.hi.tanh(), TRANSCENDENTAL_ULPS);
                Interval::raw(r.lo.max(-1.0), r.hi.min(1.0))
            }
            UnaryOp::Sigmoid => {
                let r =
                    Interval::widened(crate::expr::sigmoid(x.lo), crate::expr::sigmoid(x.hi), TRANSCENDENTAL_ULPS + 2);
                Interval::raw(r.lo.max(0.0), r.hi.min(1.0))
            }
            UnaryOp::Abs => {
                if x.lo >= 0.0 {
                    x
                } else if x.hi <= 0.0 {
                    Interval::raw(-x.hi, -x.lo)
                } else {
                    Interval::raw(0.0, x.magnitude())
                }
            }
        })
    }

    pub fn binary(self, op: BinaryOp, other: Interval) -> Result<Interval, DomainError> {
        let (a, b) = (self, other);
        Ok(match op {
            BinaryOp::Add => Interval::widened(a.lo + b.lo, a.hi + b.hi, 1),
            BinaryOp::Sub => Interval::widened(a.lo - b.hi, a.hi - b.lo, 1),
            BinaryOp::Mul => a.mul(b),
            BinaryOp::Div => {
                if b.contains_zero() {
                    return Err(DomainError::DivisionByZero);
                }
                let c = [a.lo / b.lo, a.lo / b.hi, a.hi / b.lo, a.hi / b.hi];
                Interval::widened(min4(c), max4(c), 1)
            }
            BinaryOp::Pow => return a.pow(b),
            BinaryOp::Min => Interval::raw(a.lo.min(b.lo), a.hi.min(b.hi)),
            BinaryOp::Max => Interval::raw(a.lo.max(b.lo), a.hi.max(b.hi)),
        })
    }

    fn mul(self, b: Interval) -> Interval {
        let a = self;
        let c = [a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi];
        // 0 * inf products are NaN; treat them as zero contributions.
        let c = c.map(|v| if v.is_nan() { 0.0 } else { v });
        Interval::widened(min4(c), max4(c), 1)
    }

    fn pow(self, e: Interval) -> Result<Interval, DomainError> {
        let base = self;
        if e.lo == e.hi {
            let p = e.lo;
            if let Some(n) = integer_exponent(p) {
                return base.powi(n);
            }
            if base.lo < 0.0 {
                return Err(DomainError::NegativeBase);
            }
            if p < 0.0 && base.lo == 0.0 {
                return Err(DomainError::DivisionByZero);
            }
            let (lo, hi) =
                if p > 0.0 { (base.lo.powf(p), base.hi.powf(p)) } else { (base.hi.powf(p), base.lo.powf(p)) };
            let r = Interval::widened(lo, hi, TRANSCENDENTAL_ULPS);
            return Ok(Interval::raw(r.lo.max(0.0), r.hi));
        }
        // General exponent: exp(e * log(base)).
        if base.lo < 0.0 {
            return Err(DomainError::NegativeBase);
        }
        if base.lo == 0.0 {
            return Err(DomainError::LogOfNonPositive);
        }
        base.unary(UnaryOp::Log)?.mul(e).unary(UnaryOp::Exp)
    }

    fn powi(self, n: i32) -> Result<Interval, DomainError> {
        if n == 0 {
            return Ok(Interval::point(1.0));
        }
        let k = n.unsigned_abs();
        let ulps = 2 * (32 - k.leading_zeros());
        let (lo, hi) = if k.is_multiple_of(2) {
            if self.lo >= 0.0 {
                (powi_exact(self.lo, k), powi_exact(self.hi, k))
            } else if self.hi <= 0.0 {
                (powi_exact(self.hi, k), powi_exact(self.lo, k))
            } else {
                (0.0, powi_exact(self.magnitude(), k))
            }
        } else {
            (powi_exact(self.lo, k), powi_exact(self.hi, k))
        };
        let mut r = Interval::widened(lo, hi, ulps);
        if k.is_multiple_of(2) {
            r.lo = r.lo.max(0.0);
        }
        if n < 0 {
            return Interval::point(1.0).binary(BinaryOp::Div, r);
        }
        Ok(r)
    }
}

#[inline]
fn min4(c: [f64; 4]) -> f64 {
    c[0].min(c[1]).min(c[2].min(c[3]))
}

#[inline]
fn max4(c: [f64; 4]) -> f64 {
    c[0].max(c[1]).max(c[2].max(c[3]))
}
