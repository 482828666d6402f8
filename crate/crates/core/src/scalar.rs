//! Scalar abstraction shared by every numerical module.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::{Complex, RealField};
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating-point scalar the decomposition is generic over: `f32` or `f64`.
///
/// All transcendental functions come from [`RealField`]; this trait only adds
/// lossless-enough conversions to and from `f64` for literals and file I/O.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + LowerExp + Send + Sync + 'static
{
    /// Converts an `f64` literal or parameter into this scalar.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 is representable in every Real")
    }

    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::lit(n as f64)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// Machine epsilon of the scalar type.
    #[inline]
    fn eps() -> Self {
        Self::default_epsilon()
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Complex number over a [`Real`] scalar.
pub type C<T> = Complex<T>;

#[inline]
pub(crate) fn cplx<T: Real>(re: T, im: T) -> C<T> {
    Complex::new(re, im)
}

#[inline]
pub(crate) fn creal<T: Real>(re: T) -> C<T> {
    Complex::new(re, T::zero())
}

#[inline]
pub(crate) fn cabs<T: Real>(z: C<T>) -> T {
    z.re.hypot(z.im)
}

#[inline]
pub(crate) fn carg<T: Real>(z: C<T>) -> T {
    z.im.atan2(z.re)
}

/// `z^n` by repeated squaring; exact for `n = 0`.
pub(crate) fn cpowu<T: Real>(z: C<T>, mut n: usize) -> C<T> {
    let mut acc = creal(T::one());
    let mut base = z;
    while n > 0 {
        if n & 1 == 1 {
            acc *= base;
        }
        base *= base;
        n >>= 1;
    }
    acc
}

/// Principal-branch complex logarithm: imaginary part in `(-π, π]`.
pub(crate) fn cln<T: Real>(z: C<T>) -> C<T> {
    cplx(cabs(z).ln(), carg(z))
}

#[cfg(test)]
pub(crate) fn cexp<T: Real>(z: C<T>) -> C<T> {
    let m = z.re.exp();
    cplx(m * z.im.cos(), m * z.im.sin())
}
