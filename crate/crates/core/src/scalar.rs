//! Scalar abstraction shared by the exact (enumeration-based) modules.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating-point scalar used by exact enumeration, cumulants, expansions and
/// weighted graphs. Implemented for `f32` and `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; used for literal constants.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Streaming log-sum-exp accumulator. Holds `ln(sum)` as `max + ln(scaled)`.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp<T> {
    max: T,
    scaled: T,
}

impl<T: Real> Default for LogSumExp<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> LogSumExp<T> {
    pub fn new() -> Self {
        Self {
            max: T::neg_infinity(),
            scaled: T::zero(),
        }
    }

    #[inline]
    pub fn push(&mut self, log_term: T) {
        if log_term == T::neg_infinity() {
            return;
        }
        if log_term > self.max {
            self.scaled = self.scaled * (self.max - log_term).exp() + T::one();
            self.max = log_term;
        } else {
            self.scaled = self.scaled + (log_term - self.max).exp();
        }
    }

    pub fn merge(&mut self, other: &Self) {
        if other.max == T::neg_infinity() {
            return;
        }
        if self.max == T::neg_infinity() {
            *self = *other;
            return;
        }
        if other.max > self.max {
            self.scaled = self.scaled * (self.max - other.max).exp() + other.scaled;
            self.max = other.max;
        } else {
            self.scaled = self.scaled + other.scaled * (other.max - self.max).exp();
        }
    }

    /// `ln` of the accumulated sum; `-inf` when empty.
    pub fn ln(&self) -> T {
        if self.max == T::neg_infinity() {
            T::neg_infinity()
        } else {
            self.max + self.scaled.ln()
        }
    }
}

/// Relative error `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_error<T: Real>(a: T, b: T) -> T {
    let scale = a.abs().max(b.abs());
    if scale == T::zero() {
        T::zero()
    } else {
        (a - b).abs() / scale
    }
}

/// Relative error between two positive quantities given by their logarithms.
pub fn relative_error_ln<T: Real>(ln_a: T, ln_b: T) -> T {
    (ln_a - ln_b).abs().exp_m1()
}
