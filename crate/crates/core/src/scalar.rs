//! Scalar abstraction: the crate works over `Complex<f32>` or `Complex<f64>`.

use ndarray_linalg::types::{Lapack, Scalar};
use num_traits::ToPrimitive;

/// Complex scalar type for all state and operator data.
///
/// Bundles the LAPACK-backed factorization support with the conversions the
/// engines need. The `Complex = Self` bound restricts implementors to the
/// complex types; the real counterpart is reached through `Self::Real`.
pub trait ComplexScalar:
    Scalar<Complex = Self, Real: Send + Sync> + Lapack + Send + Sync + 'static
{
    /// The imaginary unit.
    fn i() -> Self {
        Self::complex(0.0, 1.0)
    }

    /// Lift an `f64` into the scalar (imaginary part zero).
    fn from_re(x: f64) -> Self {
        Self::from_real(Self::real(x))
    }

    /// Squared modulus as the associated real type.
    fn abs_sq(self) -> Self::Real {
        self.re() * self.re() + self.im() * self.im()
    }

    /// Convert an `f64` into the associated real type.
    fn real_from_f64(x: f64) -> Self::Real {
        Self::real(x)
    }

    /// Convert the associated real type back to `f64`.
    fn real_to_f64(x: Self::Real) -> f64 {
        x.to_f64().expect("real scalar representable as f64")
    }
}

impl ComplexScalar for num_complex::Complex<f32> {}
impl ComplexScalar for num_complex::Complex<f64> {}
