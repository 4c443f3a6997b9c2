//! Closed real intervals `[lo, hi]`.
//!
//! Arithmetic uses round-to-nearest without outward rounding, so enclosures
//! are practical rather than verified: they are tight enough to rank node
//! significances, but an endpoint may be off by an ulp from a rigorous
//! result. Every elementary function returns the exact range of the real
//! function over the argument (up to that rounding), except the SiLU
//! derivative, which uses the natural interval extension clipped to the
//! function's global range.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::special;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntervalError {
    #[error("interval bound is NaN")]
    NaN,
    #[error("inverted interval: lo {lo} > hi {hi}")]
    Inverted { lo: f64, hi: f64 },
    #[error("hull of an empty point set")]
    EmptyHull,
    #[error("divisor interval {0} contains zero")]
    DivisionByZero(Interval),
    #[error("logarithm of interval {0} that is not strictly positive")]
    LogDomain(Interval),
}

/// A closed interval with `lo <= hi`. NaN bounds are never stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub const ZERO: Interval = Interval { lo: 0.0, hi: 0.0 };
    pub const ONE: Interval = Interval { lo: 1.0, hi: 1.0 };

    pub fn new(lo: f64, hi: f64) -> Result<Self, IntervalError> {
        if lo.is_nan() || hi.is_nan() {
            return Err(IntervalError::NaN);
        }
        if lo > hi {
            return Err(IntervalError::Inverted { lo, hi });
        }
        Ok(Interval { lo, hi })
    }

    /// Degenerate interval `[p, p]`.
    ///
    /// # Panics
    /// If `p` is NaN.
    pub fn point(p: f64) -> Self {
        assert!(!p.is_nan(), "point interval from NaN");
        Interval { lo: p, hi: p }
    }

    /// Builds `[min(a, b), max(a, b)]`.
    pub fn spanning(a: f64, b: f64) -> Result<Self, IntervalError> {
        Self::new(a.min(b), a.max(b))
    }

    pub fn hull(points: &[f64]) -> Result<Self, IntervalError> {
        let (first, rest) = points.split_first().ok_or(IntervalError::EmptyHull)?;
        let mut out = Self::new(*first, *first)?;
        for &p in rest {
            if p.is_nan() {
                return Err(IntervalError::NaN);
            }
            out.lo = out.lo.min(p);
            out.hi = out.hi.max(p);
        }
        Ok(out)
    }

    // Internal constructor for results of operations on valid intervals.
    #[inline]
    fn raw(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi || lo.is_nan() || hi.is_nan(), "[{lo}, {hi}]");
        Interval { lo, hi }
    }

    #[inline]
    pub fn lo(&self) -> f64 {
        self.lo
    }

    #[inline]
    pub fn hi(&self) -> f64 {
        self.hi
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    #[inline]
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// `max(|lo|, |hi|)`, the largest magnitude attained in the interval.
    #[inline]
    pub fn max_abs(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    #[inline]
    pub fn contains(&self, p: f64) -> bool {
        self.lo <= p && p <= self.hi
    }

    #[inline]
    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn is_subset_of(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    /// Smallest interval containing both operands.
    pub fn join(&self, other: &Interval) -> Interval {
        Interval::raw(self.lo.min(other.lo), self.hi.max(other.hi))
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }

    pub fn checked_div(self, rhs: Interval) -> Result<Interval, IntervalError> {
        if rhs.contains(0.0) {
            return Err(IntervalError::DivisionByZero(rhs));
        }
        // endpoint quotients rather than a reciprocal, so points divide exactly
        let q = [self.lo / rhs.lo, self.lo / rhs.hi, self.hi / rhs.lo, self.hi / rhs.hi];
        let lo = q[0].min(q[1]).min(q[2]).min(q[3]);
        let hi = q[0].max(q[1]).max(q[2]).max(q[3]);
        Ok(Interval::raw(lo, hi))
    }

    pub fn square(self) -> Interval {
        let (a, b) = (self.lo * self.lo, self.hi * self.hi);
        if self.contains(0.0) {
            Interval::raw(0.0, a.max(b))
        } else {
            Interval::raw(a.min(b), a.max(b))
        }
    }

    pub fn exp(self) -> Interval {
        Interval::raw(self.lo.exp(), self.hi.exp())
    }

    pub fn ln(self) -> Result<Interval, IntervalError> {
        if self.lo <= 0.0 {
            return Err(IntervalError::LogDomain(self));
        }
        Ok(Interval::raw(self.lo.ln(), self.hi.ln()))
    }

    pub fn cos(self) -> Interval {
        periodic_range(self, 0.0, f64::cos)
    }

    pub fn sin(self) -> Interval {
        // sin peaks at π/2 + 2kπ
        periodic_range(self, 0.5 * PI, f64::sin)
    }

    pub fn relu(self) -> Interval {
        Interval::raw(special::relu(self.lo), special::relu(self.hi))
    }

    /// Subderivative hull of ReLU with `relu'(0) = 1`.
    pub fn relu_deriv(self) -> Interval {
        if self.lo >= 0.0 {
            Interval::ONE
        } else if self.hi < 0.0 {
            Interval::ZERO
        } else {
            Interval::raw(0.0, 1.0)
        }
    }

    /// Heaviside step, i.e. [`Interval::relu_deriv`].
    pub fn step(self) -> Interval {
        self.relu_deriv()
    }

    pub fn sigmoid(self) -> Interval {
        Interval::raw(special::sigmoid(self.lo), special::sigmoid(self.hi))
    }

    pub fn sigmoid_deriv(self) -> Interval {
        let (a, b) = (special::sigmoid_deriv(self.lo), special::sigmoid_deriv(self.hi));
        let top = if self.contains(0.0) { 0.25 } else { a.max(b) };
        Interval::raw(a.min(b), top)
    }

    /// Exact range of `x·σ(x)`: decreasing left of its minimiser, increasing right of it.
    pub fn silu(self) -> Interval {
        let (a, b) = (special::silu(self.lo), special::silu(self.hi));
        if self.contains(special::SILU_ARGMIN) {
            Interval::raw(special::SILU_MIN, a.max(b))
        } else {
            Interval::raw(a.min(b), a.max(b))
        }
    }

    /// Natural extension of `σ(k)·(1 + k·(1 − σ(k)))`, clipped to the global range of SiLU'.
    pub fn silu_deriv(self) -> Interval {
        let s = self.sigmoid();
        let natural = s * (Interval::ONE + self * (Interval::ONE - s));
        let global = Interval::raw(special::SILU_DERIV_MIN, special::SILU_DERIV_MAX);
        // The natural extension always encloses the true range, which lies in `global`.
        natural.intersect(&global).unwrap_or(global)
    }

    pub fn norm_cdf(self) -> Interval {
        Interval::raw(special::norm_cdf(self.lo), special::norm_cdf(self.hi))
    }

    pub fn norm_pdf(self) -> Interval {
        let (a, b) = (special::norm_pdf(self.lo), special::norm_pdf(self.hi));
        let top = if self.contains(0.0) {
            special::INV_SQRT_2PI
        } else {
            a.max(b)
        };
        Interval::raw(a.min(b), top)
    }
}

/// Range of a 2π-periodic function `f` with maxima at `peak + 2kπ` and
/// minima at `peak + π + 2kπ`, monotone in between.
fn periodic_range(x: Interval, peak: f64, f: fn(f64) -> f64) -> Interval {
    if x.width() >= 2.0 * PI {
        return Interval::raw(-1.0, 1.0);
    }
    let (a, b) = (f(x.lo), f(x.hi));
    let hits = |offset: f64| {
        let k = ((x.lo - offset) / (2.0 * PI)).ceil();
        offset + 2.0 * PI * k <= x.hi
    };
    let hi = if hits(peak) { 1.0 } else { a.max(b) };
    let lo = if hits(peak + PI) { -1.0 } else { a.min(b) };
    Interval::raw(lo, hi)
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match f.precision() {
            Some(p) => write!(f, "[{:.*}, {:.*}]", p, self.lo, p, self.hi),
            None => write!(f, "[{}, {}]", self.lo, self.hi),
        }
    }
}

impl From<f64> for Interval {
    fn from(p: f64) -> Self {
        Interval::point(p)
    }
}

impl Add for Interval {
    type Output = Interval;
    #[inline]
    fn add(self, rhs: Interval) -> Interval {
        Interval::raw(self.lo + rhs.lo, self.hi + rhs.hi)
    }
}

impl Sub for Interval {
    type Output = Interval;
    #[inline]
    fn sub(self, rhs: Interval) -> Interval {
        Interval::raw(self.lo - rhs.hi, self.hi - rhs.lo)
    }
}

impl Neg for Interval {
    type Output = Interval;
    #[inline]
    fn neg(self) -> Interval {
        Interval::raw(-self.hi, -self.lo)
    }
}

impl Mul for Interval {
    type Output = Interval;
    #[inline]
    fn mul(self, rhs: Interval) -> Interval {
        let p = [
            self.lo * rhs.lo,
            self.lo * rhs.hi,
            self.hi * rhs.lo,
            self.hi * rhs.hi,
        ];
        let lo = p[0].min(p[1]).min(p[2]).min(p[3]);
        let hi = p[0].max(p[1]).max(p[2]).max(p[3]);
        Interval::raw(lo, hi)
    }
}

impl Mul<f64> for Interval {
    type Output = Interval;
    #[inline]
    fn mul(self, rhs: f64) -> Interval {
        self * Interval::point(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(lo: f64, hi: f64) -> Interval {
        Interval::new(lo, hi).unwrap()
    }

    fn close(a: Interval, lo: f64, hi: f64, tol: f64) -> bool {
        (a.lo() - lo).abs() <= tol && (a.hi() - hi).abs() <= tol
    }

    #[test]
    fn construction_rejects_nan_and_inversion() {
        assert_eq!(Interval::new(f64::NAN, 1.0), Err(IntervalError::NaN));
        assert!(matches!(Interval::new(2.0, 1.0), Err(IntervalError::Inverted { .. })));
        assert_eq!(Interval::spanning(2.0, 1.0).unwrap(), iv(1.0, 2.0));
        assert!(Interval::new(3.0, 3.0).unwrap().is_point());
    }

    #[test]
    fn addition() {
        assert_eq!(iv(1.0, 2.0) + iv(3.0, 4.0), iv(4.0, 6.0));
        assert_eq!(Interval::point(5.0) + Interval::ZERO, Interval::point(5.0));
        // first pre-activation of the two-layer example network
        let k = iv(0.12544, 1.2544) + iv(0.0277, 0.277) + Interval::point(0.1619);
        assert!(close(k, 0.31504, 1.6933, 1e-9));
    }

    #[test]
    fn multiplication() {
        assert!(close(iv(1.0, 10.0) * 0.12544, 0.12544, 1.2544, 1e-15));
        assert!(close(iv(1.0, 10.0) * -0.0023, -0.023, -0.0023, 1e-15));
        assert_eq!(iv(-1.0, 2.0) * iv(3.0, 4.0), iv(-4.0, 8.0));
    }

    #[test]
    fn four_endpoint_products_oracle() {
        let cases = [(-3.0, -1.0), (-2.0, 5.0), (0.5, 4.0), (0.0, 0.0)];
        for &(a, b) in &cases {
            for &(c, d) in &cases {
                let prods = [a * c, a * d, b * c, b * d];
                let expect = Interval::hull(&prods).unwrap();
                assert_eq!(iv(a, b) * iv(c, d), expect);
            }
        }
    }

    #[test]
    fn subtraction_negation_division() {
        assert_eq!(iv(1.0, 2.0) - iv(0.5, 3.0), iv(-2.0, 1.5));
        assert_eq!(-iv(1.0, 2.0), iv(-2.0, -1.0));
        assert_eq!(iv(1.0, 2.0).checked_div(iv(2.0, 4.0)).unwrap(), iv(0.25, 1.0));
        assert!(matches!(
            iv(1.0, 2.0).checked_div(iv(-1.0, 1.0)),
            Err(IntervalError::DivisionByZero(_))
        ));
        assert!(iv(1.0, 2.0).checked_div(iv(0.0, 1.0)).is_err());
    }

    #[test]
    fn relu_cases() {
        assert_eq!(iv(0.315, 1.693).relu(), iv(0.315, 1.693));
        assert_eq!(iv(-2.0, -1.0).relu(), Interval::ZERO);
        assert_eq!(iv(-2.0, 3.0).relu(), iv(0.0, 3.0));
        assert_eq!(iv(0.2, 1.0).relu_deriv(), Interval::ONE);
        assert_eq!(iv(-2.0, -0.1).relu_deriv(), Interval::ZERO);
        assert_eq!(iv(-2.0, 0.0).relu_deriv(), iv(0.0, 1.0));
        assert_eq!(Interval::ZERO.relu_deriv(), Interval::ONE);
    }

    #[test]
    fn silu_range_against_dense_scan() {
        for &(lo, hi) in &[(-1.0, 1.0), (-3.0, -2.0), (-3.0, 0.5), (0.0, 4.0), (-1.3, -1.25)] {
            let n = 200_000;
            let mut pts = Vec::with_capacity(n + 1);
            for k in 0..=n {
                pts.push(special::silu(lo + (hi - lo) * k as f64 / n as f64));
            }
            let scan = Interval::hull(&pts).unwrap();
            let got = iv(lo, hi).silu();
            assert!(scan.is_subset_of(&got), "{got} vs scan {scan}");
            assert!(close(got, scan.lo(), scan.hi(), 1e-9), "{got} vs scan {scan}");
        }
        assert!(close(iv(-1.0, 1.0).silu(), -0.268_941_421_369_995, 0.731_058_578_630_005, 1e-12));
    }

    #[test]
    fn silu_deriv_is_clipped_to_global_range() {
        let d = iv(-50.0, 50.0).silu_deriv();
        assert!(close(d, special::SILU_DERIV_MIN, special::SILU_DERIV_MAX, 0.0));
    }

    #[test]
    fn trig_ranges() {
        assert!(close(iv(0.0, 1.0).cos(), 1.0f64.cos(), 1.0, 0.0));
        assert!(close(iv(3.0, 3.5).cos(), -1.0, 3.0f64.cos().max(3.5f64.cos()), 0.0));
        assert_eq!(iv(0.0, 7.0).cos(), iv(-1.0, 1.0));
        assert!(close(iv(1.0, 2.0).sin(), 1.0f64.sin().min(2.0f64.sin()), 1.0, 0.0));
        assert!(close(iv(-0.5, 0.5).sin(), (-0.5f64).sin(), 0.5f64.sin(), 0.0));
    }

    #[test]
    fn helpers() {
        assert!((iv(0.241, 0.733).width() - 0.492).abs() < 1e-12);
        assert_eq!(iv(0.4287, 0.4287).max_abs(), 0.4287);
        assert!((iv(0.241, 0.733).width() * iv(0.4287, 0.4287).max_abs() - 0.2109).abs() < 1e-3);
        assert!((iv(0.1034, 0.3141).midpoint() - 0.20875).abs() < 1e-12);
        assert!(iv(1.0, 10.0).contains(5.5));
        assert!(!iv(1.0, 10.0).contains(0.9));
        assert_eq!(iv(-7.0, 3.0).max_abs(), 7.0);
        assert_eq!(Interval::hull(&[]), Err(IntervalError::EmptyHull));
        assert_eq!(Interval::hull(&[3.0, -1.0, 2.0]).unwrap(), iv(-1.0, 3.0));
    }

    #[test]
    fn log_domain() {
        assert!(iv(0.0, 1.0).ln().is_err());
        assert_eq!(iv(1.0, std::f64::consts::E).ln().unwrap(), iv(0.0, 1.0));
    }
}
