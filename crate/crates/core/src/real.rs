//! Scalar abstraction shared by every numerical module.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point type the simulator can run on. In practice `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + Sum
    + 'static
{
    /// Converts an `f64` literal. Every supported type can represent (a rounding of) any `f64`.
    #[inline(always)]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline(always)]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline(always)]
    fn two_pi() -> Self {
        Self::TAU()
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// `e^{iθ}`.
#[inline(always)]
pub fn cis<T: Real>(theta: T) -> Complex<T> {
    let (s, c) = theta.sin_cos();
    Complex::new(c, s)
}

/// Pairwise (tree) summation. The association order depends only on the length, so results are
/// bitwise reproducible no matter how the summands were produced.
pub fn pairwise_sum<T: Copy + std::ops::Add<Output = T>>(xs: &[T], zero: T) -> T {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().fold(zero, |acc, &x| acc + x);
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid], zero) + pairwise_sum(&xs[mid..], zero)
}

/// Angular frequency in rad/s from a frequency in MHz.
pub fn mhz<T: Real>(f_mhz: f64) -> T {
    T::lit(std::f64::consts::TAU * f_mhz * 1e6)
}

/// Angular chirp rate in rad/s² from a sweep rate in MHz/ms.
pub fn mhz_per_ms<T: Real>(rate: f64) -> T {
    T::lit(std::f64::consts::TAU * rate * 1e9)
}

/// Seconds from microseconds.
pub fn us<T: Real>(t_us: f64) -> T {
    T::lit(t_us * 1e-6)
}
