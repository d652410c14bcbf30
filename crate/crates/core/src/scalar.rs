//! Floating-point abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Real scalar used by the moment, physics and toy-model code: `f32` or `f64`.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(x).expect("f64 literal representable")
    }

    /// Conversion from a count.
    #[inline]
    fn from_count(n: usize) -> Self {
        <Self as num_traits::FromPrimitive>::from_usize(n).expect("count representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum<T> {
    sum: T,
    carry: T,
}

impl<T: Scalar> CompensatedSum<T> {
    pub(crate) fn new() -> Self {
        Self {
            sum: T::zero(),
            carry: T::zero(),
        }
    }

    #[inline]
    pub(crate) fn add(&mut self, x: T) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub(crate) fn value(&self) -> T {
        self.sum + self.carry
    }
}

/// Unevaluated sum `hi + lo` carrying roughly twice the precision of `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct DoubleDouble<T> {
    pub(crate) hi: T,
    pub(crate) lo: T,
}

#[inline]
fn two_sum<T: Scalar>(a: T, b: T) -> (T, T) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum<T: Scalar>(a: T, b: T) -> (T, T) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod<T: Scalar>(a: T, b: T) -> (T, T) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl<T: Scalar> DoubleDouble<T> {
    pub(crate) fn new(x: T) -> Self {
        Self { hi: x, lo: T::zero() }
    }

    fn from_pair((hi, lo): (T, T)) -> Self {
        Self { hi, lo }
    }

    pub(crate) fn value(self) -> T {
        self.hi + self.lo
    }

    pub(crate) fn add(self, b: Self) -> Self {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Self::from_pair(quick_two_sum(s, e + f))
    }

    pub(crate) fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    pub(crate) fn sub(self, b: Self) -> Self {
        self.add(b.neg())
    }

    pub(crate) fn mul(self, b: Self) -> Self {
        let (p, e) = two_prod(self.hi, b.hi);
        let e = e + (self.hi * b.lo + self.lo * b.hi);
        Self::from_pair(quick_two_sum(p, e))
    }

    pub(crate) fn div(self, b: Self) -> Self {
        let q1 = self.hi / b.hi;
        let r = self.sub(b.mul(Self::new(q1)));
        let q2 = r.hi / b.hi;
        let r = r.sub(b.mul(Self::new(q2)));
        let q3 = r.hi / b.hi;
        Self::from_pair(quick_two_sum(q1, q2)).add(Self::new(q3))
    }

    /// One Newton step from the `T` square root; `self` must be positive.
    pub(crate) fn sqrt(self) -> Self {
        let x = self.hi.sqrt();
        let r = self.sub(Self::from_pair(two_prod(x, x)));
        Self::from_pair(quick_two_sum(x, r.hi / (x + x)))
    }
}
