//! Scalar abstraction shared by every numerical module.
//!
//! The linear algebra runs on `nalgebra` matrices of `Complex<T>` where `T`
//! is a real floating type. `f64` is the production type; `f32` is supported
//! for the deterministic model code but the acceptance tolerances assume `f64`.

use nalgebra::{DMatrix, DVector, RealField};
use num_complex::Complex;
use num_traits::{FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Real floating-point scalar: `f32` or `f64`.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    /// Machine epsilon of the type.
    fn eps() -> Self;

    /// One draw from the standard normal distribution.
    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// One draw from `Uniform[lo, hi)`.
    fn sample_uniform<R: Rng + ?Sized>(rng: &mut R, lo: Self, hi: Self) -> Self;
}

impl Real for f32 {
    fn eps() -> Self {
        f32::EPSILON
    }

    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn sample_uniform<R: Rng + ?Sized>(rng: &mut R, lo: Self, hi: Self) -> Self {
        lo + (hi - lo) * rng.random::<f32>()
    }
}

impl Real for f64 {
    fn eps() -> Self {
        f64::EPSILON
    }

    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn sample_uniform<R: Rng + ?Sized>(rng: &mut R, lo: Self, hi: Self) -> Self {
        lo + (hi - lo) * rng.random::<f64>()
    }
}

pub type Cx<T> = Complex<T>;
pub type CMatrix<T> = DMatrix<Complex<T>>;
pub type CVector<T> = DVector<Complex<T>>;

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    nalgebra::convert(x)
}

#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

#[inline]
pub fn cx<T: Real>(re: T, im: T) -> Cx<T> {
    Complex::new(re, im)
}

#[inline]
pub fn real<T: Real>(re: T) -> Cx<T> {
    Complex::new(re, T::zero())
}

/// `e^{j·phase}`.
#[inline]
pub fn cis<T: Real>(phase: T) -> Cx<T> {
    Complex::new(phase.cos(), phase.sin())
}

#[inline]
pub fn modulus<T: Real>(z: Cx<T>) -> T {
    (z.re * z.re + z.im * z.im).sqrt()
}

/// Circularly-symmetric standard complex Gaussian, `CN(0, 1)`.
pub fn sample_cn<T: Real, R: Rng + ?Sized>(rng: &mut R) -> Cx<T> {
    let half = lit::<T>(0.5).sqrt();
    Complex::new(
        T::sample_standard_normal(rng) * half,
        T::sample_standard_normal(rng) * half,
    )
}

/// Real part of the trace of a square complex matrix.
pub fn trace_re<T: Real>(m: &CMatrix<T>) -> T {
    m.diagonal().iter().fold(T::zero(), |acc, z| acc + z.re)
}

/// `diag(v) · m`, scaling row `i` of `m` by `v[i]`.
pub fn scale_rows<T: Real>(v: &CVector<T>, m: &CMatrix<T>) -> CMatrix<T> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= v[i];
    }
    out
}

/// `diag(X · Y^H)` computed row-wise without forming the product.
pub fn diag_xyh<T: Real>(x: &CMatrix<T>, y: &CMatrix<T>) -> CVector<T> {
    debug_assert_eq!(x.shape(), y.shape());
    CVector::from_fn(x.nrows(), |i, _| {
        let mut acc = Complex::new(T::zero(), T::zero());
        for j in 0..x.ncols() {
            acc += x[(i, j)] * y[(i, j)].conj();
        }
        acc
    })
}

/// Frobenius norm of `a - b` relative to the Frobenius norm of `b`.
pub fn rel_frobenius<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> T {
    let den = b.norm();
    let num = (a - b).norm();
    if den == T::zero() {
        num
    } else {
        num / den
    }
}
