//! Scalar abstraction shared by every numerical routine in the crate.
//!
//! All matrix math is written against [`Real`], which is implemented for
//! `f32` and `f64`. Complex quantities are `Complex<T>` with `T: Real`.

use nalgebra::{Complex, DMatrix, DVector, RealField};
use num_traits::{FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::fmt::{Debug, Display};

/// Real floating-point scalar: `f32` or `f64`.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    /// Machine epsilon.
    const EPSILON: Self;

    /// Converts an `f64` constant into `Self`, rounding if needed.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar converts to f64")
    }

    /// Relative tolerance that is at least a small multiple of epsilon.
    fn rel_tol(requested: f64) -> Self {
        let floor = Self::EPSILON * Self::lit(64.0);
        let t = Self::lit(requested);
        if t > floor {
            t
        } else {
            floor
        }
    }
}

impl Real for f32 {
    const EPSILON: Self = f32::EPSILON;
}

impl Real for f64 {
    const EPSILON: Self = f64::EPSILON;
}

pub type Cplx<T> = Complex<T>;
pub type CMat<T> = DMatrix<Complex<T>>;
pub type CVec<T> = DVector<Complex<T>>;

#[inline]
pub fn cplx<T: Real>(re: T, im: T) -> Complex<T> {
    Complex::new(re, im)
}

#[inline]
pub fn real<T: Real>(re: T) -> Complex<T> {
    Complex::new(re, T::zero())
}

/// Draws one CN(0, 1) sample: independent real and imaginary parts, each with
/// variance 1/2. Sampling happens in `f64` so that a seed produces the same
/// stream for every scalar type.
pub fn complex_normal<T: Real, R: Rng + ?Sized>(rng: &mut R) -> Complex<T> {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Complex::new(T::lit(re * s), T::lit(im * s))
}

/// Matrix with i.i.d. CN(0, 1) entries, filled column by column.
pub fn complex_normal_matrix<T: Real, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> CMat<T> {
    let mut out = CMat::<T>::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            out[(i, j)] = complex_normal(rng);
        }
    }
    out
}

pub fn complex_normal_vector<T: Real, R: Rng + ?Sized>(len: usize, rng: &mut R) -> CVec<T> {
    CVec::<T>::from_fn(len, |_, _| complex_normal(rng))
}

/// Squared Frobenius norm as a real scalar.
pub fn frob_sq<T: Real>(m: &CMat<T>) -> T {
    m.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr())
}

pub fn is_finite_matrix<T: Real>(m: &CMat<T>) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}
