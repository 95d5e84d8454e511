//! Scalar abstraction shared by every numerical routine in the crate.
//!
//! All matrices and states are complex over a real field `T`. The library is
//! exercised with `f64`; `f32` works for coarse runs but cannot meet the
//! tolerances quoted in the tests.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive};

/// Real field the library is generic over.
pub trait Real:
    Float + FloatConst + FromPrimitive + Debug + Display + LowerExp + Default + Sum + Send + Sync + 'static
{
}

impl<T> Real for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + Debug
        + Display
        + LowerExp
        + Default
        + Sum
        + Send
        + Sync
        + 'static
{
}

/// Complex amplitude over `T`.
pub type C<T> = Complex<T>;

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

#[inline]
pub fn from_usize<T: Real>(n: usize) -> T {
    T::from_usize(n).expect("integer representable in scalar type")
}

#[inline]
pub fn czero<T: Real>() -> C<T> {
    Complex::new(T::zero(), T::zero())
}

#[inline]
pub fn cone<T: Real>() -> C<T> {
    Complex::new(T::one(), T::zero())
}

#[inline]
pub fn creal<T: Real>(x: T) -> C<T> {
    Complex::new(x, T::zero())
}

/// `-i * z`
#[inline]
pub fn mul_neg_i<T: Real>(z: C<T>) -> C<T> {
    Complex::new(z.im, -z.re)
}

/// Tolerance used when tagging operators Hermitian: the larger of `1e-12` and
/// a few hundred ulps of the scalar type.
pub fn hermitian_tolerance<T: Real>() -> T {
    lit::<T>(1e-12).max(T::epsilon() * lit(256.0))
}

/// `sqrt(sum |z|^2)`
pub fn norm<T: Real>(v: &[C<T>]) -> T {
    v.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt()
}

/// `<a|b>` with the first argument conjugated.
pub fn inner<T: Real>(a: &[C<T>], b: &[C<T>]) -> C<T> {
    a.iter()
        .zip(b)
        .fold(czero(), |acc, (x, y)| acc + x.conj() * y)
}

/// Views complex values as interleaved `re, im` reals.
#[inline]
pub(crate) fn as_reals<T: Real>(v: &[C<T>]) -> &[T] {
    // SAFETY: `Complex<T>` is `#[repr(C)]` with exactly two `T` fields.
    unsafe { std::slice::from_raw_parts(v.as_ptr() as *const T, v.len() * 2) }
}

#[inline]
pub(crate) fn as_reals_mut<T: Real>(v: &mut [C<T>]) -> &mut [T] {
    // SAFETY: as for `as_reals`; the borrow is exclusive.
    unsafe { std::slice::from_raw_parts_mut(v.as_mut_ptr() as *mut T, v.len() * 2) }
}
