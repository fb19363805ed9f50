//! One denoising pass over all users, using a thin factor `R_i = B_i B_i^H`.
//!
//! Work happens in the coordinates whitened by `Sigma = L L^H`. With
//! `C_i = L^-1 B_i` and `K_i = I + C_i^H C_i`:
//!
//! * `log|R_i + Sigma| - log|Sigma| = log|K_i|`
//! * `theta^H Xi_i theta = c^H K_i^-1 c` with `c = C_i^H L^-1 theta`
//! * `R_i (R_i + Sigma)^-1 = L P_i L^-1` with `P_i = C_i K_i^-1 C_i^H`
//!
//! so every per-user quantity costs `O(M^2 r_i)` and runs as a dense GEMM.

use crate::error::{Error, Result};
use crate::linalg::{
    cholesky_in_place, cholesky_solve_in_place, gemm, gemm_strided, low_rank_factor, lower_inverse, lower_inverse_into, Op,
    PsdFactor, Strided,
};
use crate::scalar::{real, CMat, CVec, Real};
use crate::scenario::CovarianceSet;

use super::denoiser::posterior_from_stats;

/// Eigen-directions of `R_i` below this fraction of its largest eigenvalue
/// are dropped from the factor.
pub const RANK_CUTOFF: f64 = 1e-12;

/// Users whose activity posterior is below this skip the `psi_i A_i` gain
/// term. Since `P_i <= I`, each skipped term moves `Sigma` by at most
/// `PSI_FLOOR * Sigma / tau_p`.
pub const PSI_FLOOR: f64 = 1e-12;

/// All thin factors side by side: user `i` owns columns
/// `offsets[i]..offsets[i + 1]` of `b`.
#[derive(Clone, Debug)]
pub(crate) struct FactorSet<T: Real> {
    b: CMat<T>,
    offsets: Vec<usize>,
    max_rank: usize,
}

impl<T: Real> FactorSet<T> {
    pub(crate) fn new(covs: &CovarianceSet<T>) -> Self {
        let parts: Vec<CMat<T>> = (0..covs.len())
            .map(|i| low_rank_factor(covs.spectrum(i), RANK_CUTOFF))
            .collect();
        let mut offsets = vec![0];
        for p in &parts {
            offsets.push(offsets.last().unwrap() + p.ncols());
        }
        let mut b = CMat::<T>::zeros(covs.antennas(), *offsets.last().unwrap());
        for (p, &off) in parts.iter().zip(&offsets) {
            b.columns_mut(off, p.ncols()).copy_from(p);
        }
        let max_rank = parts.iter().map(|p| p.ncols()).max().unwrap_or(0);
        Self { b, offsets, max_rank }
    }

    fn len(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// Everything one AMP iteration needs from the denoiser.
#[derive(Clone, Debug)]
pub struct SweepOutput<T: Real> {
    /// Denoised estimates, one column per user.
    pub x_hat: CMat<T>,
    pub psi: Vec<T>,
    /// `u_i = log|R_i + Sigma| - log|Sigma|`.
    pub log_det_ratio: Vec<T>,
    /// `w_i = theta_i^H Xi_i theta_i`.
    pub quad_stat: Vec<T>,
    /// `sum_i d eta_i / d theta_i`.
    pub jacobian_sum: CMat<T>,
    /// `sum_i Cov[x_i | theta_i]`.
    pub posterior_cov_sum: CMat<T>,
}

pub(crate) fn sweep<T: Real>(
    factors: &FactorSet<T>,
    theta: &CMat<T>,
    sigma: &CMat<T>,
    epsilon: T,
) -> Result<SweepOutput<T>> {
    let m = sigma.nrows();
    let n = factors.len();
    if theta.nrows() != m || theta.ncols() != n {
        return Err(Error::Dimension(format!(
            "theta is {}x{}, expected {m}x{n}",
            theta.nrows(),
            theta.ncols()
        )));
    }
    let l = PsdFactor::new(sigma)
        .map_err(|_| Error::State("Sigma is not positive definite".into()))?
        .lower();
    let l_inv = lower_inverse(&l);

    let one = real(T::one());
    let zero = real(T::zero());
    let floor = T::lit(PSI_FLOOR);
    let total_rank = factors.b.ncols();
    let mut theta_w = CMat::<T>::zeros(m, n);
    gemm(one, &l_inv, Op::N, theta, Op::N, zero, &mut theta_w);
    // C = L^-1 [B_1 .. B_N], and its conjugate so that C_i^H is a plain
    // transposed view
    let mut c_all = CMat::<T>::zeros(m, total_rank);
    gemm(one, &l_inv, Op::N, &factors.b, Op::N, zero, &mut c_all);
    let d_all = c_all.conjugate();
    // columns sqrt(psi_i) V_i with V_i V_i^H = P_i
    let mut w_all = CMat::<T>::zeros(m, total_rank);

    let rmax = factors.max_rank;
    let mut k = vec![zero; rmax * rmax];
    let mut lk_inv = vec![zero; rmax * rmax];
    let mut lk_inv_h = vec![zero; rmax * rmax];
    let mut cw = vec![zero; rmax];
    let mut s = CVec::<T>::zeros(rmax);

    let mut x_hat = CMat::<T>::zeros(m, n);
    let mut psi = Vec::with_capacity(n);
    let mut log_det_ratio = Vec::with_capacity(n);
    let mut quad_stat = Vec::with_capacity(n);
    // sum_i (psi_i - psi_i^2) q_i (C_i s_i)^H, where C_i s_i = L^H Xi_i theta_i
    let mut jac_rank_one = CMat::<T>::zeros(m, m);
    let mut cov_rank_one = CMat::<T>::zeros(m, m);

    for i in 0..n {
        let (off, end) = (factors.offsets[i], factors.offsets[i + 1]);
        let r = end - off;
        if r == 0 {
            psi.push(posterior_from_stats(T::zero(), T::zero(), epsilon));
            log_det_ratio.push(T::zero());
            quad_stat.push(T::zero());
            continue;
        }
        let c_i = Strided::col_major(&c_all.as_slice()[off * m..end * m], m, r);
        let c_i_h = Strided::col_major(&d_all.as_slice()[off * m..end * m], m, r).t();

        // K = I + C^H C
        let k = &mut k[..r * r];
        k.fill(zero);
        for a in 0..r {
            k[a * r + a] = one;
        }
        gemm_strided(one, c_i_h, c_i, one, k, r);
        let u = cholesky_in_place(k, r)
            .ok_or_else(|| Error::State(format!("user {i}: I + B^H Sigma^-1 B not PD")))?;

        // c = C^H L^-1 theta, s = K^-1 c, w = c^H s
        let th = &theta_w.as_slice()[i * m..(i + 1) * m];
        let cw = &mut cw[..r];
        for (a, ca) in cw.iter_mut().enumerate() {
            let col = &d_all.as_slice()[(off + a) * m..(off + a + 1) * m];
            *ca = col.iter().zip(th).fold(zero, |acc, (x, y)| acc + *x * *y);
        }
        let s = &mut s.as_mut_slice()[..r];
        s.copy_from_slice(cw);
        cholesky_solve_in_place(k, r, s);
        let w = cw.iter().zip(s.iter()).fold(T::zero(), |acc, (x, y)| acc + (x.conj() * *y).re);
        let p = posterior_from_stats(u, w, epsilon);
        let s_vec = CVec::<T>::from_column_slice(s);
        let q: CVec<T> = factors.b.columns(off, r) * &s_vec;
        x_hat.set_column(i, &(&q * real(p)));
        psi.push(p);
        log_det_ratio.push(u);
        quad_stat.push(w);

        if p >= floor {
            // V = C L_K^-H
            lower_inverse_into(k, r, &mut lk_inv[..r * r]);
            for a in 0..r {
                for b in 0..r {
                    lk_inv_h[a * r + b] = lk_inv[b * r + a].conj();
                }
            }
            gemm_strided(
                real(p.sqrt()),
                c_i,
                Strided::col_major(&lk_inv_h[..r * r], r, r),
                zero,
                &mut w_all.as_mut_slice()[off * m..end * m],
                m,
            );
        }
        let v = p - p * p;
        if v > T::zero() {
            let y: CVec<T> = c_all.columns(off, r) * &s_vec;
            jac_rank_one.gerc(real(v), &q, &y, one);
            cov_rank_one.gerc(real(v), &q, &q, one);
        }
    }

    // sum_i psi_i P_i
    let mut p_sum = CMat::<T>::zeros(m, m);
    gemm(one, &w_all, Op::N, &w_all, Op::H, zero, &mut p_sum);
    // jacobian_sum = (L p_sum + jac_rank_one) L^-1
    let mut left = jac_rank_one;
    gemm(one, &l, Op::N, &p_sum, Op::N, one, &mut left);
    let mut jacobian_sum = CMat::<T>::zeros(m, m);
    gemm(one, &left, Op::N, &l_inv, Op::N, zero, &mut jacobian_sum);
    // posterior_cov_sum = L p_sum L^H + cov_rank_one
    let mut lp = CMat::<T>::zeros(m, m);
    gemm(one, &l, Op::N, &p_sum, Op::N, zero, &mut lp);
    let mut posterior_cov_sum = cov_rank_one;
    gemm(one, &lp, Op::N, &l, Op::H, one, &mut posterior_cov_sum);
    Ok(SweepOutput {
        x_hat,
        psi,
        log_det_ratio,
        quad_stat,
        jacobian_sum,
        posterior_cov_sum,
    })
}
