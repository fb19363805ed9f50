//! Per-user MMSE denoiser under the Bernoulli-Gaussian prior, evaluated
//! directly from `(R_i, Sigma)` with dense solves.
//!
//! These are the reference forms of the denoiser quantities. The AMP loop
//! uses the factored evaluation in [`super::sweep`], which must agree with
//! these to round-off.

use crate::error::{Error, Result};
use crate::linalg::{hermitian_part, PsdFactor};
use crate::scalar::{real, CMat, CVec, Real};

/// `u - w` is clamped to this magnitude before exponentiation.
pub const LOG_ODDS_CLAMP: f64 = 500.0;

/// Gaussian-component quantities shared by the denoiser, the posterior and
/// the detector for one user.
#[derive(Clone, Debug)]
pub struct GaussianTerms<T: Real> {
    /// `log|R + Sigma| - log|Sigma|`.
    pub log_det_ratio: T,
    /// `Xi = Sigma^-1 - (R + Sigma)^-1`.
    pub xi: CMat<T>,
    /// `A = R (R + Sigma)^-1`.
    pub gain: CMat<T>,
}

impl<T: Real> GaussianTerms<T> {
    pub fn new(r: &CMat<T>, sigma: &CMat<T>) -> Result<Self> {
        if r.shape() != sigma.shape() {
            return Err(Error::Dimension("R and Sigma must have the same shape".into()));
        }
        let sigma_f = PsdFactor::new(sigma).map_err(|_| Error::State("Sigma is not positive definite".into()))?;
        let total_f = PsdFactor::new(&(r + sigma))?;
        let total_inv = total_f.inverse();
        let xi = hermitian_part(&(sigma_f.inverse() - &total_inv));
        Ok(Self {
            log_det_ratio: total_f.logdet() - sigma_f.logdet(),
            xi,
            gain: r * total_inv,
        })
    }

    /// `theta^H Xi theta`.
    pub fn quad_stat(&self, theta: &CVec<T>) -> T {
        theta.dotc(&(&self.xi * theta)).re
    }
}

/// `psi = 1 / (1 + (1 - eps)/eps * exp(u - w))`, saturating to exactly 0 or 1.
pub fn posterior_from_stats<T: Real>(log_det_ratio: T, quad_stat: T, epsilon: T) -> T {
    let clamp = T::lit(LOG_ODDS_CLAMP);
    let mut d = log_det_ratio - quad_stat;
    if d > clamp {
        d = clamp;
    } else if d < -clamp {
        d = -clamp;
    }
    let prior_odds = ((T::one() - epsilon) / epsilon).ln();
    let t = prior_odds + d;
    let psi = T::one() / (T::one() + t.exp());
    if psi.is_finite() {
        psi
    } else {
        T::zero()
    }
}

pub fn activity_posterior<T: Real>(theta: &CVec<T>, r: &CMat<T>, sigma: &CMat<T>, epsilon: T) -> Result<T> {
    let g = GaussianTerms::new(r, sigma)?;
    Ok(posterior_from_stats(g.log_det_ratio, g.quad_stat(theta), epsilon))
}

/// Posterior mean `E[x | theta] = psi R (R + Sigma)^-1 theta`.
pub fn denoise<T: Real>(theta: &CVec<T>, r: &CMat<T>, sigma: &CMat<T>, epsilon: T) -> Result<CVec<T>> {
    let g = GaussianTerms::new(r, sigma)?;
    let psi = posterior_from_stats(g.log_det_ratio, g.quad_stat(theta), epsilon);
    Ok(&g.gain * theta * real(psi))
}

/// Wirtinger derivative `d eta / d theta` (with `theta*` held fixed):
/// `J = psi A + psi (1 - psi) (A theta) (Xi theta)^H`.
pub fn denoiser_jacobian<T: Real>(theta: &CVec<T>, r: &CMat<T>, sigma: &CMat<T>, epsilon: T) -> Result<CMat<T>> {
    let g = GaussianTerms::new(r, sigma)?;
    let psi = posterior_from_stats(g.log_det_ratio, g.quad_stat(theta), epsilon);
    let q = &g.gain * theta;
    let xi_theta = &g.xi * theta;
    let mut j = &g.gain * real(psi);
    j.gerc(real(psi * (T::one() - psi)), &q, &xi_theta, real(T::one()));
    Ok(j)
}

/// Posterior covariance of one user, `Cov[x | theta]`:
/// `(psi - psi^2) q q^H + psi R (R + Sigma)^-1 Sigma`.
pub fn posterior_covariance<T: Real>(theta: &CVec<T>, r: &CMat<T>, sigma: &CMat<T>, epsilon: T) -> Result<CMat<T>> {
    let g = GaussianTerms::new(r, sigma)?;
    let psi = posterior_from_stats(g.log_det_ratio, g.quad_stat(theta), epsilon);
    let q = &g.gain * theta;
    let mut c = &g.gain * sigma * real(psi);
    c.gerc(real(psi - psi * psi), &q, &q, real(T::one()));
    Ok(c)
}
