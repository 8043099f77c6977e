//! Scalar abstraction over plain `f64` and tape variables.
//!
//! Every loss in this crate is written once against [`Real`]. Evaluating
//! with `f64` gives the value; evaluating with [`crate::grad::Var`] records a
//! tape that can be differentiated.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// Forward value.
    fn value(self) -> f64;

    /// A constant living in the same context as `self`.
    fn lit(self, v: f64) -> Self;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    /// Square root. The derivative at exactly zero is taken as zero.
    fn sqrt(self) -> Self;
    fn sinh(self) -> Self;
    fn cosh(self) -> Self;
    fn asinh(self) -> Self;
    fn acosh(self) -> Self;
    fn asin(self) -> Self;
    fn acos(self) -> Self;
    fn abs(self) -> Self;
    fn recip(self) -> Self;

    fn square(self) -> Self {
        self * self
    }

    /// Clamp into `[lo, hi]`; saturated inputs pass zero gradient.
    fn clamp(self, lo: f64, hi: f64) -> Self;

    /// Replace by the constant `v` with zero gradient; counted as a
    /// saturated clamp.
    fn saturate(self, v: f64) -> Self;

    /// `max(0, self)`.
    fn relu(self) -> Self;

    /// Pass the value through and block all gradient flow.
    fn detach(self) -> Self;

    /// Inner product, summed left to right.
    fn dot(a: &[Self], b: &[Self]) -> Self;

    /// Inner product against constant coefficients.
    fn dot_f64(a: &[Self], b: &[f64]) -> Self;

    /// Sum of a nonempty slice.
    fn sum(xs: &[Self]) -> Self;

    /// `ln Σ exp(x_i)` of a nonempty slice, shifted by the max for stability.
    fn log_sum_exp(xs: &[Self]) -> Self;
}

impl Real for f64 {
    fn value(self) -> f64 {
        self
    }
    fn lit(self, v: f64) -> Self {
        v
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sinh(self) -> Self {
        f64::sinh(self)
    }
    fn cosh(self) -> Self {
        f64::cosh(self)
    }
    fn asinh(self) -> Self {
        f64::asinh(self)
    }
    fn acosh(self) -> Self {
        f64::acosh(self)
    }
    fn asin(self) -> Self {
        f64::asin(self)
    }
    fn acos(self) -> Self {
        f64::acos(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn recip(self) -> Self {
        1.0 / self
    }
    fn clamp(self, lo: f64, hi: f64) -> Self {
        if self < lo {
            lo
        } else if self > hi {
            hi
        } else {
            self
        }
    }
    fn saturate(self, v: f64) -> Self {
        v
    }
    fn relu(self) -> Self {
        if self > 0.0 {
            self
        } else {
            0.0
        }
    }
    fn detach(self) -> Self {
        self
    }
    fn dot(a: &[Self], b: &[Self]) -> Self {
        debug_assert_eq!(a.len(), b.len());
        a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
    }
    fn dot_f64(a: &[Self], b: &[f64]) -> Self {
        Self::dot(a, b)
    }
    fn sum(xs: &[Self]) -> Self {
        xs.iter().fold(0.0, |acc, x| acc + x)
    }
    fn log_sum_exp(xs: &[Self]) -> Self {
        let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s = xs.iter().fold(0.0, |acc, x| acc + f64::exp(x - m));
        m + s.ln()
    }
}
