//! Bayesian MMV-AMP for joint activity detection and channel estimation.
//!
//! The recursion, starting from `X_hat = 0`, `Z = Y`, `Sigma = se_init`:
//!
//! ```text
//! theta_i = Z^T conj(phi_i) + x_hat_i
//! x_hat_i <- psi_i R_i (R_i + Sigma)^-1 theta_i
//! Z       <- Y - Phi X_hat^T + (1/tau_p) Z (sum_i J_i)^T
//! Sigma   <- sigma^2 I + (1/tau_p) sum_i Cov[x_i | theta_i]
//! ```
//!
//! where `J_i` is the Wirtinger Jacobian of the denoiser. The Onsager term
//! right-multiplies the previous residual by the transposed Jacobian sum,
//! which keeps `theta_i - x_i` approximately `CN(0, Sigma)`.

mod denoiser;
mod sweep;

pub use denoiser::{
    activity_posterior, denoise, denoiser_jacobian, posterior_covariance, posterior_from_stats, GaussianTerms,
    LOG_ODDS_CLAMP,
};
pub use sweep::{SweepOutput, RANK_CUTOFF};

use crate::error::{Error, Result};
use crate::linalg::hermitian_part;
use crate::scalar::{frob_sq, is_finite_matrix, real, CMat, Real};
use crate::scenario::{CovarianceSet, PilotMatrix};
use serde::{Deserialize, Serialize};
use sweep::FactorSet;

/// How the initial state-evolution matrix scales `E[X X^H]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeInit {
    /// `sigma^2 I + (eps / tau_p) sum_i R_i`: the actual covariance of the
    /// matched-filter noise at `X_hat = 0`.
    #[default]
    Scaled,
    /// `sigma^2 I + eps sum_i R_i`.
    Literal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmpParams {
    pub epsilon: f64,
    pub noise_power: f64,
    pub max_iter: usize,
    /// Stop once `||X_new - X_old||_F / ||X_new||_F <= tol`.
    pub tol: f64,
    pub se_init: SeInit,
}

impl AmpParams {
    pub fn new(epsilon: f64, noise_power: f64) -> Self {
        Self {
            epsilon,
            noise_power,
            max_iter: 50,
            tol: 1e-6,
            se_init: SeInit::Scaled,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config(format!("epsilon must lie in (0, 1], got {}", self.epsilon)));
        }
        if !(self.noise_power > 0.0 && self.noise_power.is_finite()) {
            return Err(Error::Config("noise_power must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Config("tol must be non-negative".into()));
        }
        Ok(())
    }
}

/// Residual norm growth beyond this factor of `||Y||_F` counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Clone, Debug)]
pub struct AmpState<T: Real> {
    /// M x N estimate of the effective channels.
    pub x_hat: CMat<T>,
    /// tau_p x M residual.
    pub z: CMat<T>,
    /// State-evolution matrix paired with `theta` (the one `psi` was computed with).
    pub sigma: CMat<T>,
    /// Pseudo-data of the last denoising pass, one column per user.
    pub theta: CMat<T>,
    pub psi: Vec<T>,
    /// `u_i` at (`theta`, `sigma`).
    pub log_det_ratio: Vec<T>,
    /// `w_i = theta_i^H Xi_i theta_i` at (`theta`, `sigma`).
    pub quad_stat: Vec<T>,
    pub iter: usize,
}

#[derive(Clone, Debug)]
pub struct AmpReport<T: Real> {
    pub state: AmpState<T>,
    /// `Sigma^(t)` used at each executed iteration.
    pub sigma_trajectory: Vec<CMat<T>>,
    pub sigma_norms: Vec<T>,
    /// `||Z^(t+1)||_F` after each iteration.
    pub residual_norms: Vec<T>,
    pub converged: bool,
    pub iterations: usize,
}

/// `Theta = Z^T conj(Phi) + X_hat`, i.e. `theta_i = Z^T conj(phi_i) + x_hat_i`.
pub fn pseudo_data<T: Real>(z: &CMat<T>, phi: &CMat<T>, x_hat: &CMat<T>) -> Result<CMat<T>> {
    if z.nrows() != phi.nrows() || x_hat.nrows() != z.ncols() || x_hat.ncols() != phi.ncols() {
        return Err(Error::Dimension(format!(
            "pseudo_data: Z {}x{}, Phi {}x{}, X_hat {}x{}",
            z.nrows(),
            z.ncols(),
            phi.nrows(),
            phi.ncols(),
            x_hat.nrows(),
            x_hat.ncols()
        )));
    }
    let mut theta = x_hat.clone();
    theta.gemm(real(T::one()), &z.transpose(), &phi.conjugate(), real(T::one()));
    Ok(theta)
}

/// `Z_next = Y - Phi X_hat^T + (1/tau_p) Z_prev J^T` with `J = sum_i J_i`.
pub fn residual_update<T: Real>(
    y: &CMat<T>,
    phi: &CMat<T>,
    x_hat_next: &CMat<T>,
    z_prev: &CMat<T>,
    jacobian_sum: &CMat<T>,
) -> Result<CMat<T>> {
    let tau_p = phi.nrows();
    let m = y.ncols();
    if y.nrows() != tau_p
        || z_prev.shape() != y.shape()
        || x_hat_next.shape() != (m, phi.ncols())
        || jacobian_sum.shape() != (m, m)
    {
        return Err(Error::Dimension("residual_update: inconsistent shapes".into()));
    }
    let one = real(T::one());
    let mut z = y.clone();
    z.gemm(-one, phi, &x_hat_next.transpose(), one);
    z.gemm(real(T::one() / T::lit(tau_p as f64)), z_prev, &jacobian_sum.transpose(), one);
    Ok(z)
}

pub fn se_init<T: Real>(noise_power: T, epsilon: T, tau_p: usize, covs: &CovarianceSet<T>, mode: SeInit) -> CMat<T> {
    let m = covs.antennas();
    let scale = match mode {
        SeInit::Scaled => epsilon / T::lit(tau_p as f64),
        SeInit::Literal => epsilon,
    };
    hermitian_part(&(CMat::<T>::identity(m, m) * real(noise_power) + covs.sum() * real(scale)))
}

/// One state-evolution update from the current pseudo-data, with every user
/// evaluated by dense solves.
pub fn se_step<T: Real>(
    sigma: &CMat<T>,
    theta: &CMat<T>,
    covs: &CovarianceSet<T>,
    epsilon: T,
    noise_power: T,
    tau_p: usize,
) -> Result<CMat<T>> {
    let m = sigma.nrows();
    if theta.ncols() != covs.len() || theta.nrows() != m {
        return Err(Error::Dimension("se_step: theta must be M x N".into()));
    }
    let mut acc = CMat::<T>::zeros(m, m);
    for i in 0..covs.len() {
        let th = theta.column(i).into_owned();
        acc += posterior_covariance(&th, covs.get(i), sigma, epsilon)?;
    }
    Ok(next_sigma(acc, noise_power, tau_p))
}

fn next_sigma<T: Real>(posterior_cov_sum: CMat<T>, noise_power: T, tau_p: usize) -> CMat<T> {
    let m = posterior_cov_sum.nrows();
    let s = posterior_cov_sum * real(T::one() / T::lit(tau_p as f64)) + CMat::<T>::identity(m, m) * real(noise_power);
    hermitian_part(&s)
}

/// Reusable AMP engine for one covariance set: the per-user factors are
/// computed once and shared by every run.
#[derive(Clone, Debug)]
pub struct AmpSolver<'a, T: Real> {
    covs: &'a CovarianceSet<T>,
    factors: FactorSet<T>,
    params: AmpParams,
}

impl<'a, T: Real> AmpSolver<'a, T> {
    pub fn new(covs: &'a CovarianceSet<T>, params: AmpParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            covs,
            factors: FactorSet::new(covs),
            params,
        })
    }

    pub fn params(&self) -> &AmpParams {
        &self.params
    }

    pub fn covariances(&self) -> &CovarianceSet<T> {
        self.covs
    }

    /// Denoises every column of `theta` under noise covariance `sigma`.
    pub fn sweep(&self, theta: &CMat<T>, sigma: &CMat<T>) -> Result<SweepOutput<T>> {
        sweep::sweep(&self.factors, theta, sigma, T::lit(self.params.epsilon))
    }

    /// State-evolution update from a sweep.
    pub fn next_sigma(&self, out: &SweepOutput<T>, tau_p: usize) -> CMat<T> {
        next_sigma(out.posterior_cov_sum.clone(), T::lit(self.params.noise_power), tau_p)
    }

    pub fn initial_sigma(&self, tau_p: usize) -> CMat<T> {
        se_init(
            T::lit(self.params.noise_power),
            T::lit(self.params.epsilon),
            tau_p,
            self.covs,
            self.params.se_init,
        )
    }

    pub fn run(&self, y: &CMat<T>, pilots: &PilotMatrix<T>) -> Result<AmpReport<T>> {
        let phi = &pilots.phi;
        let (tau_p, n) = phi.shape();
        let m = self.covs.antennas();
        if n != self.covs.len() || y.shape() != (tau_p, m) {
            return Err(Error::Dimension(format!(
                "Y is {}x{}, expected {tau_p}x{m} for {n} users",
                y.nrows(),
                y.ncols()
            )));
        }
        if !is_finite_matrix(y) {
            return Err(Error::NonFinite);
        }

        let limit = T::lit(DIVERGENCE_FACTOR) * frob_sq(y).sqrt().max(T::EPSILON);
        let tol = T::lit(self.params.tol);
        let mut x_hat = CMat::<T>::zeros(m, n);
        let mut z = y.clone();
        let mut sigma = self.initial_sigma(tau_p);
        let mut sigma_trajectory = Vec::new();
        let mut sigma_norms = Vec::new();
        let mut residual_norms = Vec::new();

        for t in 1..=self.params.max_iter {
            let theta = pseudo_data(&z, phi, &x_hat)?;
            let out = self.sweep(&theta, &sigma)?;
            let sigma_next = self.next_sigma(&out, tau_p);
            let z_next = residual_update(y, phi, &out.x_hat, &z, &out.jacobian_sum)?;

            let res = frob_sq(&z_next).sqrt();
            if !res.is_finite() || res > limit {
                return Err(Error::Divergence {
                    iteration: t,
                    residual: res.as_f64(),
                    limit: limit.as_f64(),
                });
            }
            let new_norm = frob_sq(&out.x_hat).sqrt();
            let change = frob_sq(&(&out.x_hat - &x_hat)).sqrt();
            let rel_change = if new_norm > T::zero() { change / new_norm } else { change };

            sigma_norms.push(frob_sq(&sigma).sqrt());
            sigma_trajectory.push(sigma.clone());
            residual_norms.push(res);

            let converged = rel_change <= tol;
            if converged || t == self.params.max_iter {
                let iterations = sigma_trajectory.len();
                return Ok(AmpReport {
                    state: AmpState {
                        x_hat: out.x_hat,
                        z: z_next,
                        sigma,
                        theta,
                        psi: out.psi,
                        log_det_ratio: out.log_det_ratio,
                        quad_stat: out.quad_stat,
                        iter: iterations,
                    },
                    sigma_trajectory,
                    sigma_norms,
                    residual_norms,
                    converged,
                    iterations,
                });
            }
            x_hat = out.x_hat;
            z = z_next;
            sigma = sigma_next;
        }
        unreachable!("max_iter >= 1 is validated")
    }
}

/// Runs AMP from scratch. Prefer [`AmpSolver`] when the same covariance set
/// is used for many runs.
pub fn run_amp<T: Real>(
    y: &CMat<T>,
    pilots: &PilotMatrix<T>,
    covs: &CovarianceSet<T>,
    params: &AmpParams,
) -> Result<AmpReport<T>> {
    AmpSolver::new(covs, params.clone())?.run(y, pilots)
}
