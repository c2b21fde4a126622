//! Scalar abstraction for the numeric core.
//!
//! Every probability table, kernel, and estimator in this crate is generic
//! over a floating-point scalar. The crate root exposes `f64` aliases; the
//! documented tolerances refer to that instantiation. `f32` is available for
//! memory-bound experiments with proportionally looser tolerances.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::StandardNormal;

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum<Self> + Debug + Display + Send + Sync + 'static
{
    /// Tolerance for "sums to one" checks on stored distributions.
    fn mass_tol() -> Self;

    /// Tolerance for derived conditional quantities (divisions, linear solves).
    fn cond_tol() -> Self;

    /// Formats with enough significant digits that parsing the output
    /// reproduces the value bit for bit.
    fn format_full(self) -> String;

    /// Inverse of [`Scalar::format_full`]; accepts decimal and scientific text.
    fn parse_text(text: &str) -> Option<Self>;

    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Uniform draw from the half-open unit interval `[0, 1)`.
    fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Scalar for f64 {
    fn mass_tol() -> Self {
        1e-12
    }

    fn cond_tol() -> Self {
        1e-10
    }

    fn format_full(self) -> String {
        // Shortest round-trip form, at most 17 significant digits.
        format!("{:e}", self)
    }

    fn parse_text(text: &str) -> Option<Self> {
        text.parse().ok()
    }

    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }

    fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.gen()
    }
}

impl Scalar for f32 {
    fn mass_tol() -> Self {
        1e-5
    }

    fn cond_tol() -> Self {
        1e-4
    }

    fn format_full(self) -> String {
        format!("{:e}", self)
    }

    fn parse_text(text: &str) -> Option<Self> {
        text.parse().ok()
    }

    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }

    fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.gen()
    }
}

/// Shorthand for lifting `f64` constants into a generic scalar.
pub(crate) fn real<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("finite f64 constant converts to any Scalar")
}

/// Compensated (Neumaier) summation; keeps totals of long nonnegative tables
/// accurate to a few ulps independent of length.
pub(crate) fn kahan_sum<S: Scalar, I: IntoIterator<Item = S>>(values: I) -> S {
    let mut sum = S::zero();
    let mut comp = S::zero();
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp = comp + ((sum - t) + v);
        } else {
            comp = comp + ((v - t) + sum);
        }
        sum = t;
    }
    sum + comp
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_full_round_trips_exactly() {
        for &x in &[
            0.1_f64,
            1.0 / 3.0,
            0.25,
            1e-300,
            std::f64::consts::PI,
            6.02e23,
        ] {
            let text = x.format_full();
            let back = f64::parse_text(&text).unwrap();
            assert_eq!(x.to_bits(), back.to_bits(), "text {text}");
        }
    }
}
