//! Hermitian and positive-semidefinite matrix kernels.
//!
//! Every routine takes the Hermitian part `(A + A^H)/2` of its input, so small
//! asymmetries from accumulated round-off are tolerated. Determinants are only
//! ever handled in the log domain.

use crate::error::{Error, Result};
use crate::scalar::{is_finite_matrix, real, CMat, Cplx, Real};
use matrixmultiply::CGemmOption;
use nalgebra::{Cholesky, Dyn};
use std::any::TypeId;

/// Negative eigenvalues down to `-PSD_CLAMP * max_eigenvalue` are treated as
/// round-off and clamped to zero.
pub const PSD_CLAMP: f64 = 1e-8;

/// Eigen-decomposition `A = U diag(eigenvalues) U^H` of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct HermitianSpectrum<T: Real> {
    /// Sorted in descending order.
    pub eigenvalues: Vec<T>,
    /// Unitary; column `k` pairs with `eigenvalues[k]`.
    pub eigenvectors: CMat<T>,
}

impl<T: Real> HermitianSpectrum<T> {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn max_eigenvalue(&self) -> T {
        self.eigenvalues.first().copied().unwrap_or_else(T::zero)
    }

    pub fn min_eigenvalue(&self) -> T {
        self.eigenvalues.last().copied().unwrap_or_else(T::zero)
    }

    /// `U f(Λ) U^H` for a scalar map applied to each eigenvalue.
    pub fn map(&self, f: impl Fn(T) -> T) -> CMat<T> {
        let n = self.dim();
        let mut scaled = self.eigenvectors.clone();
        for (k, &lam) in self.eigenvalues.iter().enumerate() {
            let s = real(f(lam));
            for i in 0..n {
                scaled[(i, k)] *= s;
            }
        }
        scaled * self.eigenvectors.adjoint()
    }

    pub fn reconstruct(&self) -> CMat<T> {
        self.map(|x| x)
    }
}

/// `(A + A^H) / 2`.
pub fn hermitian_part<T: Real>(a: &CMat<T>) -> CMat<T> {
    let half = real(T::lit(0.5));
    (a + a.adjoint()) * half
}

fn check_square<T: Real>(a: &CMat<T>) -> Result<()> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "expected a non-empty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if !is_finite_matrix(a) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

/// Eigen-decomposition of the Hermitian part of `a`, eigenvalues descending.
pub fn eig_hermitian<T: Real>(a: &CMat<T>) -> Result<HermitianSpectrum<T>> {
    check_square(a)?;
    let eig = hermitian_part(a).symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .expect("finite eigenvalues")
    });
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let eigenvectors = CMat::<T>::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(HermitianSpectrum {
        eigenvalues,
        eigenvectors,
    })
}

/// Checks the PSD clamping rule on a spectrum and returns the clamped copy.
pub fn clamp_psd_spectrum<T: Real>(mut spec: HermitianSpectrum<T>) -> Result<HermitianSpectrum<T>> {
    let max = spec.max_eigenvalue();
    let min = spec.min_eigenvalue();
    let floor = -(T::rel_tol(PSD_CLAMP) * if max > T::zero() { max } else { T::one() });
    if min < floor {
        return Err(Error::NotPsd {
            min: min.as_f64(),
            max: max.as_f64(),
        });
    }
    for lam in spec.eigenvalues.iter_mut() {
        if *lam < T::zero() {
            *lam = T::zero();
        }
    }
    Ok(spec)
}

/// Hermitian PSD square root `S` with `S S = A`.
pub fn sqrt_psd<T: Real>(a: &CMat<T>) -> Result<CMat<T>> {
    let spec = clamp_psd_spectrum(eig_hermitian(a)?)?;
    Ok(hermitian_part(&spec.map(|x| x.sqrt())))
}

/// Cholesky factor of a Hermitian positive-definite matrix.
#[derive(Clone, Debug)]
pub struct PsdFactor<T: Real> {
    chol: Cholesky<nalgebra::Complex<T>, Dyn>,
}

impl<T: Real> PsdFactor<T> {
    pub fn new(a: &CMat<T>) -> Result<Self> {
        check_square(a)?;
        let chol = Cholesky::new(hermitian_part(a)).ok_or(Error::Singular)?;
        // The complex factorization takes square roots of negative pivots
        // without complaint; a valid factor has a real positive diagonal.
        let l = chol.l_dirty();
        let valid = (0..l.nrows()).all(|i| {
            let d = l[(i, i)];
            d.re > T::zero() && d.re.is_finite() && d.im.abs() <= T::EPSILON * d.re
        });
        if !valid {
            return Err(Error::Singular);
        }
        Ok(Self { chol })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn logdet(&self) -> T {
        let l = self.chol.l_dirty();
        let two = T::lit(2.0);
        (0..l.nrows()).fold(T::zero(), |acc, i| acc + two * l[(i, i)].re.ln())
    }

    pub fn solve(&self, b: &CMat<T>) -> CMat<T> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &crate::scalar::CVec<T>) -> crate::scalar::CVec<T> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> CMat<T> {
        hermitian_part(&self.chol.inverse())
    }

    /// The lower-triangular factor `L` with `L L^H = A`.
    pub fn lower(&self) -> CMat<T> {
        self.chol.l()
    }
}

/// Natural-log determinant of a Hermitian positive-definite matrix.
pub fn logdet_psd<T: Real>(a: &CMat<T>) -> Result<T> {
    Ok(PsdFactor::new(a)?.logdet())
}

/// Solves `A X = B` for Hermitian positive-definite `A`.
pub fn solve_psd<T: Real>(a: &CMat<T>, b: &CMat<T>) -> Result<CMat<T>> {
    if a.nrows() != b.nrows() {
        return Err(Error::Dimension(format!(
            "solve_psd: A is {}x{} but B has {} rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    if !is_finite_matrix(b) {
        return Err(Error::NonFinite);
    }
    Ok(PsdFactor::new(a)?.solve(b))
}

/// Thin factor `B` (M x r) with `B B^H = A`, keeping eigen-directions whose
/// eigenvalue exceeds `rel_cutoff * max_eigenvalue`.
pub fn low_rank_factor<T: Real>(spec: &HermitianSpectrum<T>, rel_cutoff: f64) -> CMat<T> {
    let max = spec.max_eigenvalue();
    let m = spec.dim();
    if max <= T::zero() {
        return CMat::<T>::zeros(m, 0);
    }
    let cutoff = T::rel_tol(rel_cutoff) * max;
    let kept: Vec<usize> = (0..m).filter(|&k| spec.eigenvalues[k] > cutoff).collect();
    CMat::<T>::from_fn(m, kept.len(), |i, j| {
        let k = kept[j];
        spec.eigenvectors[(i, k)] * real(spec.eigenvalues[k].sqrt())
    })
}

/// Operand form for [`gemm`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    /// `A`
    N,
    /// `A^H`
    H,
}

/// A strided matrix operand: element `(i, j)` lives at `data[i * rs + j * cs]`.
#[derive(Clone, Copy, Debug)]
pub struct Strided<'a, T: Real> {
    pub data: &'a [Cplx<T>],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T: Real> Strided<'a, T> {
    /// Column-major `rows x cols` block starting at `data[0]`.
    pub fn col_major(data: &'a [Cplx<T>], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, rs: 1, cs: rows }
    }

    /// The transpose (not conjugated), by swapping strides.
    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    fn in_bounds(&self) -> bool {
        self.rows == 0 || self.cols == 0 || (self.rows - 1) * self.rs + (self.cols - 1) * self.cs < self.data.len()
    }
}

/// `C <- alpha A B + beta C` on strided operands; `C` is column-major with
/// leading dimension `ldc`.
///
/// `f32` and `f64` go through the blocked `matrixmultiply` kernels; other
/// scalars use a plain triple loop.
pub fn gemm_strided<T: Real>(alpha: Cplx<T>, a: Strided<T>, b: Strided<T>, beta: Cplx<T>, c: &mut [Cplx<T>], ldc: usize) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(b.rows == k, "gemm: inner dimensions differ");
    assert!(a.in_bounds() && b.in_bounds(), "gemm: operand out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    assert!(ldc >= m && (n - 1) * ldc + m <= c.len(), "gemm: output out of bounds");
    // Complex<T> is repr(C) and laid out as [re, im]; the bounds checks
    // above cover every element the kernels touch.
    if TypeId::of::<T>() == TypeId::of::<f64>() {
        unsafe {
            matrixmultiply::zgemm(
                CGemmOption::Standard,
                CGemmOption::Standard,
                m,
                k,
                n,
                [alpha.re.as_f64(), alpha.im.as_f64()],
                a.data.as_ptr() as *const [f64; 2],
                a.rs as isize,
                a.cs as isize,
                b.data.as_ptr() as *const [f64; 2],
                b.rs as isize,
                b.cs as isize,
                [beta.re.as_f64(), beta.im.as_f64()],
                c.as_mut_ptr() as *mut [f64; 2],
                1,
                ldc as isize,
            );
        }
    } else if TypeId::of::<T>() == TypeId::of::<f32>() {
        unsafe {
            matrixmultiply::cgemm(
                CGemmOption::Standard,
                CGemmOption::Standard,
                m,
                k,
                n,
                [alpha.re.as_f64() as f32, alpha.im.as_f64() as f32],
                a.data.as_ptr() as *const [f32; 2],
                a.rs as isize,
                a.cs as isize,
                b.data.as_ptr() as *const [f32; 2],
                b.rs as isize,
                b.cs as isize,
                [beta.re.as_f64() as f32, beta.im.as_f64() as f32],
                c.as_mut_ptr() as *mut [f32; 2],
                1,
                ldc as isize,
            );
        }
    } else {
        for j in 0..n {
            for i in 0..m {
                let mut acc = Cplx::<T>::new(T::zero(), T::zero());
                for l in 0..k {
                    acc += a.data[i * a.rs + l * a.cs] * b.data[l * b.rs + j * b.cs];
                }
                let dst = &mut c[j * ldc + i];
                *dst = *dst * beta + acc * alpha;
            }
        }
    }
}

/// `C <- alpha op(A) op(B) + beta C`. `Op::H` operands are copied once.
pub fn gemm<T: Real>(alpha: Cplx<T>, a: &CMat<T>, opa: Op, b: &CMat<T>, opb: Op, beta: Cplx<T>, c: &mut CMat<T>) {
    let a_adj;
    let a = match opa {
        Op::N => a,
        Op::H => {
            a_adj = a.adjoint();
            &a_adj
        }
    };
    let b_adj;
    let b = match opb {
        Op::N => b,
        Op::H => {
            b_adj = b.adjoint();
            &b_adj
        }
    };
    assert!(c.nrows() == a.nrows() && c.ncols() == b.ncols(), "gemm: output shape mismatch");
    let ldc = c.nrows();
    gemm_strided(
        alpha,
        Strided::col_major(a.as_slice(), a.nrows(), a.ncols()),
        Strided::col_major(b.as_slice(), b.nrows(), b.ncols()),
        beta,
        c.as_mut_slice(),
        ldc,
    );
}

/// In-place Cholesky of the Hermitian positive-definite `n x n` column-major
/// block `a` (lower triangle read). On success the lower triangle holds `L`,
/// the strict upper triangle is zeroed and `log|A|` is returned.
pub fn cholesky_in_place<T: Real>(a: &mut [Cplx<T>], n: usize) -> Option<T> {
    assert!(a.len() >= n * n);
    let mut logdet = T::zero();
    for j in 0..n {
        let mut d = a[j * n + j].re;
        for k in 0..j {
            d -= a[k * n + j].norm_sqr();
        }
        if !(d > T::zero()) || !d.is_finite() {
            return None;
        }
        let ljj = d.sqrt();
        logdet += d.ln();
        a[j * n + j] = real(ljj);
        for i in j + 1..n {
            let mut acc = a[j * n + i];
            for k in 0..j {
                acc -= a[k * n + i] * a[k * n + j].conj();
            }
            a[j * n + i] = acc / ljj;
        }
        for i in 0..j {
            a[j * n + i] = real(T::zero());
        }
    }
    Some(logdet)
}

/// Solves `L L^H x = b` in place given the lower factor from
/// [`cholesky_in_place`].
pub fn cholesky_solve_in_place<T: Real>(l: &[Cplx<T>], n: usize, x: &mut [Cplx<T>]) {
    for j in 0..n {
        x[j] /= l[j * n + j];
        let xj = x[j];
        for i in j + 1..n {
            x[i] -= l[j * n + i] * xj;
        }
    }
    for j in (0..n).rev() {
        let mut acc = x[j];
        for i in j + 1..n {
            acc -= l[j * n + i].conj() * x[i];
        }
        x[j] = acc / l[j * n + j];
    }
}

/// Writes `L^-1` for a lower-triangular column-major `n x n` block into `out`.
pub fn lower_inverse_into<T: Real>(l: &[Cplx<T>], n: usize, out: &mut [Cplx<T>]) {
    let zero = real(T::zero());
    out[..n * n].fill(zero);
    for j in 0..n {
        let col = &mut out[j * n..(j + 1) * n];
        col[j] = real(T::one());
        for k in j..n {
            let xk = col[k] / l[k * n + k];
            col[k] = xk;
            for i in k + 1..n {
                col[i] -= l[k * n + i] * xk;
            }
        }
    }
}

/// Inverse of a lower-triangular matrix with nonzero diagonal.
pub fn lower_inverse<T: Real>(l: &CMat<T>) -> CMat<T> {
    let n = l.nrows();
    let mut x = CMat::<T>::zeros(n, n);
    lower_inverse_into(l.as_slice(), n, x.as_mut_slice());
    x
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;
    use crate::scalar::complex_normal_matrix;
    use rand::Rng;

    pub fn random_hermitian<R: Rng>(n: usize, rng: &mut R) -> CMat<f64> {
        hermitian_part(&complex_normal_matrix::<f64, _>(n, n, rng))
    }

    /// `G G^H + shift I` with complex Gaussian `G`.
    pub fn random_pd<R: Rng>(n: usize, shift: f64, rng: &mut R) -> CMat<f64> {
        let g = complex_normal_matrix::<f64, _>(n, n, rng);
        hermitian_part(&(&g * g.adjoint())) + CMat::<f64>::identity(n, n) * real(shift)
    }

    pub fn rel_frob(a: &CMat<f64>, b: &CMat<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }
}
