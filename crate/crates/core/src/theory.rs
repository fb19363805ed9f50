//! Closed-form detection error rates under the Gaussian equivalent model.
//!
//! At convergence `theta_i ~ CN(0, C)` with `C = Sigma + R_i` for an active
//! user and `C = Sigma` for an inactive one, so the detector statistic
//! `Q = theta^H Xi theta` is distributed as `sum_m lambda_m E_m` with
//! `E_m ~ Exp(1)` i.i.d. and `lambda_m` the eigenvalues of
//! `C^{1/2} Xi C^{1/2}`. For distinct `lambda_m`,
//!
//! `F(a) = sum_m g_m (1 - exp(-a / lambda_m))`,
//! `g_m = prod_{j != m} lambda_m / (lambda_m - lambda_j)`.
//!
//! When the weights `g_m` are too large to sum accurately (clustered
//! eigenvalues), the same law is evaluated as a phase-type distribution:
//! `1 - F(a) = e_1^T exp(T a) 1` with `T` the bidiagonal generator of the
//! exponential stages.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amp::{AmpSolver, GaussianTerms};
use crate::detector::{alpha_from_log_det, ThresholdPolicy};
use crate::error::{Error, Result};
use crate::linalg::{eig_hermitian, hermitian_part, sqrt_psd, PsdFactor};
use crate::scalar::{complex_normal_matrix, real, CMat, Real};
use crate::scenario::{synthesize_rx, CovarianceSet, GroundTruth, PilotMatrix, SystemConfig};
use crate::seed;

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const ZERO_EIGENVALUE_REL: f64 = 1e-10;
/// Consecutive eigenvalues closer than this (relative) are pulled apart.
pub const MERGE_GAP_REL: f64 = 1e-6;
/// Multiplicative step used to pull near-duplicates apart.
pub const JITTER_REL: f64 = 1e-5;
/// Partial fractions are used while `sum |g_m| * machine_eps` stays below this.
pub const WEIGHT_ROUNDOFF_LIMIT: f64 = 1e-9;

/// Scale `c` in `exp(-c a / lambda)`.
///
/// With `E[|z|^2] = 1` for `z ~ CN(0, 1)`, each `|z|^2` is `Exp(1)` and the
/// correct constant is 1. The factor 2 arises when `lambda_m` is paired with
/// a chi-square variable of two degrees of freedom instead.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExponentConvention {
    Unit,
    Doubled,
}

impl ExponentConvention {
    pub fn constant<T: Real>(self) -> T {
        match self {
            Self::Unit => T::one(),
            Self::Doubled => T::lit(2.0),
        }
    }
}

/// The convention used by [`quadform_cdf`]; fixed by the Monte-Carlo
/// calibration test in this module.
pub const CDF_CONVENTION: ExponentConvention = ExponentConvention::Unit;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hypothesis {
    Active,
    Inactive,
}

/// `Xi = Sigma^-1 - (R + Sigma)^-1`.
pub fn xi_matrix<T: Real>(r: &CMat<T>, sigma: &CMat<T>) -> Result<CMat<T>> {
    Ok(GaussianTerms::new(r, sigma)?.xi)
}

/// Covariance of `theta_i` under the given hypothesis.
pub fn hypothesis_cov<T: Real>(r: &CMat<T>, sigma: &CMat<T>, hypothesis: Hypothesis) -> CMat<T> {
    match hypothesis {
        Hypothesis::Active => sigma + r,
        Hypothesis::Inactive => sigma.clone(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CdfMethod {
    PartialFractions,
    PhaseType,
}

/// Law of `theta^H Xi theta` for `theta ~ CN(0, C)`.
#[derive(Clone, Debug)]
pub struct QuadFormSpectrum<T: Real> {
    /// Non-zero eigenvalues of `C^{1/2} Xi C^{1/2}`, descending.
    pub lambdas: Vec<T>,
    /// `lambdas` after near-duplicates are pulled apart.
    pub separated: Vec<T>,
    /// Partial-fraction weights for `separated`.
    pub weights: Vec<T>,
    pub method: CdfMethod,
}

impl<T: Real> QuadFormSpectrum<T> {
    /// Builds the law from a list of eigenvalues (any order).
    pub fn from_eigenvalues(values: &[T]) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let max = values.iter().fold(T::zero(), |a, &b| if b > a { b } else { a });
        if max <= T::zero() {
            return Err(Error::DegenerateSpectrum);
        }
        let cut = max * T::lit(ZERO_EIGENVALUE_REL);
        let mut lambdas: Vec<T> = values.iter().copied().filter(|&v| v > cut).collect();
        lambdas.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let separated = separate(&lambdas);
        let weights = partial_fraction_weights(&separated);
        let spread = weights.iter().fold(T::zero(), |a, g| a + g.abs());
        let method = if spread.is_finite() && spread * T::EPSILON <= T::lit(WEIGHT_ROUNDOFF_LIMIT) {
            CdfMethod::PartialFractions
        } else {
            CdfMethod::PhaseType
        };
        Ok(Self {
            lambdas,
            separated,
            weights,
            method,
        })
    }

    /// `E[Q] = sum_m lambda_m`.
    pub fn mean(&self) -> T {
        self.lambdas.iter().fold(T::zero(), |a, &b| a + b)
    }
}

/// Pulls runs of near-equal values apart by `JITTER_REL` steps around their
/// centre.
fn separate<T: Real>(sorted_desc: &[T]) -> Vec<T> {
    let mut out = sorted_desc.to_vec();
    let gap = T::lit(MERGE_GAP_REL);
    let step = T::lit(JITTER_REL);
    let mut start = 0;
    while start < out.len() {
        let mut end = start + 1;
        while end < out.len() && (sorted_desc[end - 1] - sorted_desc[end]) <= gap * sorted_desc[end - 1] {
            end += 1;
        }
        let k = end - start;
        if k > 1 {
            let centre = T::lit((k - 1) as f64 / 2.0);
            for (j, v) in out[start..end].iter_mut().enumerate() {
                // keep descending order: the first member moves up
                *v = *v * (T::one() + step * (centre - T::lit(j as f64)) * T::lit(2.0));
            }
        }
        start = end;
    }
    out
}

/// `g_m = prod_{j != m} lambda_m / (lambda_m - lambda_j)`.
pub fn partial_fraction_weights<T: Real>(lambdas: &[T]) -> Vec<T> {
    (0..lambdas.len())
        .map(|m| {
            lambdas
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != m)
                .fold(T::one(), |acc, (_, &lj)| acc * lambdas[m] / (lambdas[m] - lj))
        })
        .collect()
}

/// Spectrum of `C^{1/2} Xi C^{1/2}`.
pub fn quadform_spectrum<T: Real>(c: &CMat<T>, xi: &CMat<T>) -> Result<QuadFormSpectrum<T>> {
    if c.shape() != xi.shape() {
        return Err(Error::Dimension("C and Xi must have the same shape".into()));
    }
    let root = sqrt_psd(c)?;
    let k = hermitian_part(&(&root * xi * &root));
    let spec = eig_hermitian(&k)?;
    let scale = c.norm() * xi.norm();
    if spec.max_eigenvalue() <= T::lit(1e3) * T::EPSILON * scale {
        return Err(Error::DegenerateSpectrum);
    }
    QuadFormSpectrum::from_eigenvalues(&spec.eigenvalues)
}

/// `Pr(Q <= a)` under the module's exponent convention.
pub fn quadform_cdf<T: Real>(spectrum: &QuadFormSpectrum<T>, alpha: T) -> T {
    quadform_cdf_with(spectrum, alpha, CDF_CONVENTION)
}

pub fn quadform_cdf_with<T: Real>(spectrum: &QuadFormSpectrum<T>, alpha: T, convention: ExponentConvention) -> T {
    if !(alpha > T::zero()) {
        return T::zero();
    }
    if !alpha.is_finite() {
        return T::one();
    }
    let c: T = convention.constant();
    let f = match spectrum.method {
        CdfMethod::PartialFractions => spectrum
            .separated
            .iter()
            .zip(&spectrum.weights)
            .fold(T::zero(), |acc, (&l, &g)| acc - g * (-(c * alpha / l)).exp_m1()),
        CdfMethod::PhaseType => T::one() - phase_type_survival(&spectrum.lambdas, c * alpha),
    };
    clamp_unit(f)
}

fn clamp_unit<T: Real>(p: T) -> T {
    if p < T::zero() {
        T::zero()
    } else if p > T::one() {
        T::one()
    } else {
        p
    }
}

/// `Pr(sum_m lambda_m E_m > t)` through the generator of the serial stages.
fn phase_type_survival<T: Real>(lambdas: &[T], t: T) -> T {
    let n = lambdas.len();
    let mut gen = DMatrix::<T>::zeros(n, n);
    for (m, &l) in lambdas.iter().enumerate() {
        let rate = t / l;
        gen[(m, m)] = -rate;
        if m + 1 < n {
            gen[(m, m + 1)] = rate;
        }
    }
    let e = gen.exp();
    clamp_unit(e.row(0).iter().fold(T::zero(), |a, &b| a + b))
}

/// Predicted error rates for one user.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UserPrediction<T> {
    pub alpha: T,
    pub p_md: T,
    pub p_fa: T,
}

/// `Pr(Q < alpha)` and `Pr(Q >= alpha)` when `Q` may be identically zero.
fn cdf_or_point_mass<T: Real>(c: &CMat<T>, xi: &CMat<T>, alpha: T) -> Result<T> {
    match quadform_spectrum(c, xi) {
        Ok(spec) => Ok(quadform_cdf(&spec, alpha)),
        Err(Error::DegenerateSpectrum) => Ok(if alpha > T::zero() { T::one() } else { T::zero() }),
        Err(e) => Err(e),
    }
}

pub fn predict_rates<T: Real>(r: &CMat<T>, sigma: &CMat<T>, epsilon: T, l: T) -> Result<UserPrediction<T>> {
    let g = GaussianTerms::new(r, sigma)?;
    let alpha = alpha_from_log_det(g.log_det_ratio, epsilon, l)?;
    let p_md = cdf_or_point_mass(&hypothesis_cov(r, sigma, Hypothesis::Active), &g.xi, alpha)?;
    let p_fa = T::one() - cdf_or_point_mass(&hypothesis_cov(r, sigma, Hypothesis::Inactive), &g.xi, alpha)?;
    Ok(UserPrediction { alpha, p_md, p_fa })
}

/// Per-user predictions for one converged `Sigma`.
#[derive(Clone, Debug)]
pub struct DetectionPrediction<T: Real> {
    pub p_md: Vec<T>,
    pub p_fa: Vec<T>,
    pub alpha: Vec<T>,
    pub sigma: CMat<T>,
}

impl<T: Real> DetectionPrediction<T> {
    /// Average over users; with i.i.d. activity this is the pooled rate.
    pub fn mean_p_md(&self) -> T {
        mean(&self.p_md)
    }

    pub fn mean_p_fa(&self) -> T {
        mean(&self.p_fa)
    }
}

fn mean<T: Real>(v: &[T]) -> T {
    if v.is_empty() {
        return T::zero();
    }
    v.iter().fold(T::zero(), |a, &b| a + b) / T::lit(v.len() as f64)
}

pub fn predict_all<T: Real>(
    covs: &CovarianceSet<T>,
    sigma: &CMat<T>,
    epsilon: T,
    policy: &ThresholdPolicy,
) -> Result<DetectionPrediction<T>> {
    if policy.len() != covs.len() {
        return Err(Error::Dimension(format!("{} thresholds for {} users", policy.len(), covs.len())));
    }
    let per_user = (0..covs.len())
        .into_par_iter()
        .map(|i| predict_rates(covs.get(i), sigma, epsilon, T::lit(policy.level(i))))
        .collect::<Result<Vec<_>>>()?;
    Ok(DetectionPrediction {
        p_md: per_user.iter().map(|p| p.p_md).collect(),
        p_fa: per_user.iter().map(|p| p.p_fa).collect(),
        alpha: per_user.iter().map(|p| p.alpha).collect(),
        sigma: sigma.clone(),
    })
}

/// Monte-Carlo estimate of `Pr(Q > alpha)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailEstimate {
    pub prob: f64,
    /// Binomial standard error of `prob`.
    pub std_err: f64,
    /// Sample mean of `Q`.
    pub mean: f64,
    pub samples: usize,
}

/// Draws `n` samples of `theta^H Xi theta` with `theta ~ CN(0, C)`.
pub fn mc_quadform_samples<T: Real, R: Rng + ?Sized>(c: &CMat<T>, xi: &CMat<T>, n: usize, rng: &mut R) -> Result<Vec<T>> {
    if c.shape() != xi.shape() {
        return Err(Error::Dimension("C and Xi must have the same shape".into()));
    }
    let root = sqrt_psd(c)?;
    let k = hermitian_part(&(&root * xi * &root));
    let m = c.nrows();
    let batch = 4096;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let b = batch.min(n - out.len());
        let z = complex_normal_matrix::<T, _>(m, b, rng);
        let kz = &k * &z;
        for j in 0..b {
            out.push(z.column(j).dotc(&kz.column(j)).re);
        }
    }
    Ok(out)
}

pub fn mc_quadform_tail<T: Real, R: Rng + ?Sized>(
    c: &CMat<T>,
    xi: &CMat<T>,
    alpha: T,
    n_samples: usize,
    rng: &mut R,
) -> Result<TailEstimate> {
    if n_samples < 1000 {
        return Err(Error::Config(format!("at least 1000 samples are required, got {n_samples}")));
    }
    let samples = mc_quadform_samples(c, xi, n_samples, rng)?;
    let hits = samples.iter().filter(|&&q| q > alpha).count();
    let n = n_samples as f64;
    let prob = hits as f64 / n;
    Ok(TailEstimate {
        prob,
        std_err: (prob * (1.0 - prob) / n).sqrt(),
        mean: samples.iter().map(|q| q.as_f64()).sum::<f64>() / n,
        samples: n_samples,
    })
}

/// Largest gap between a CDF and the empirical CDF of `samples`.
pub fn sup_distance<T: Real>(samples: &mut [T], cdf: impl Fn(T) -> T) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    samples.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x).as_f64();
        d.max((f - i as f64 / n).abs()).max((f - (i + 1) as f64 / n).abs())
    })
}

/// How the converged effective-noise covariance is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaMethod {
    /// Element-wise average of the final `Sigma` over independent AMP runs.
    #[default]
    AmpAverage,
    /// Fixed point of the covariance recursion with pseudo-data drawn from
    /// the equivalent model `theta = x + Sigma^{1/2} e`.
    EquivalentModel,
}

/// Iteration cap and tolerance for [`SigmaMethod::EquivalentModel`].
pub const FIXED_POINT_MAX_ITER: usize = 200;
pub const FIXED_POINT_TOL: f64 = 1e-6;

/// Converged `Sigma` for one scenario. Trials are keyed by `seed` and their
/// index, so the result does not depend on the thread count.
pub fn converged_sigma<T: Real>(
    solver: &AmpSolver<T>,
    config: &SystemConfig,
    pilots: &PilotMatrix<T>,
    trials: usize,
    seed: u64,
    method: SigmaMethod,
) -> Result<CMat<T>> {
    if trials == 0 {
        return Err(Error::Config("at least one calibration trial is required".into()));
    }
    match method {
        SigmaMethod::AmpAverage => amp_average_sigma(solver, config, pilots, trials, seed),
        SigmaMethod::EquivalentModel => equivalent_model_sigma(solver, config, trials, seed),
    }
}

fn amp_average_sigma<T: Real>(
    solver: &AmpSolver<T>,
    config: &SystemConfig,
    pilots: &PilotMatrix<T>,
    trials: usize,
    seed: u64,
) -> Result<CMat<T>> {
    let covs = solver.covariances();
    let noise = T::lit(config.noise_power);
    let sigmas = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::stream(seed, &[seed::label::CALIBRATION, t as u64]);
            let truth = GroundTruth::sample(config, covs, &mut rng);
            let y = synthesize_rx(pilots, &truth.x, noise, &mut rng)?;
            Ok(solver.run(&y, pilots)?.state.sigma)
        })
        .collect::<Result<Vec<_>>>()?;
    let m = covs.antennas();
    let sum = sigmas.iter().fold(CMat::<T>::zeros(m, m), |acc, s| acc + s);
    Ok(sum * real(T::one() / T::lit(trials as f64)))
}

fn equivalent_model_sigma<T: Real>(solver: &AmpSolver<T>, config: &SystemConfig, draws: usize, seed: u64) -> Result<CMat<T>> {
    let trajectory = state_evolution(solver, config, draws, seed, FIXED_POINT_MAX_ITER, FIXED_POINT_TOL)?;
    Ok(trajectory.into_iter().last().expect("trajectory starts at the initial Sigma"))
}

/// The covariance recursion driven by pseudo-data from the equivalent model
/// `theta_i = x_i + Sigma^{1/2} e_i`, averaged over `draws` scenario draws.
/// Returns every iterate, starting with the initial `Sigma`, and stops once
/// the relative change falls to `tol` or after `max_iter` updates.
pub fn state_evolution<T: Real>(
    solver: &AmpSolver<T>,
    config: &SystemConfig,
    draws: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<Vec<CMat<T>>> {
    if draws == 0 {
        return Err(Error::Config("at least one draw is required".into()));
    }
    let covs = solver.covariances();
    let (m, n) = (covs.antennas(), covs.len());
    let tau_p = config.tau_p;
    // common random numbers: the signal draws and the standard noise stay
    // fixed, only their scaling by Sigma^{1/2} changes between iterations
    let samples: Vec<(CMat<T>, CMat<T>)> = (0..draws)
        .map(|d| {
            let mut rng = seed::stream(seed, &[seed::label::SE_DRAWS, d as u64]);
            let truth = GroundTruth::sample(config, covs, &mut rng);
            let e = complex_normal_matrix::<T, _>(m, n, &mut rng);
            (truth.x, e)
        })
        .collect();
    let mut sigma = solver.initial_sigma(tau_p);
    let mut trajectory = vec![sigma.clone()];
    for _ in 0..max_iter {
        let l = PsdFactor::new(&sigma)
            .map_err(|_| Error::State("Sigma is not positive definite".into()))?
            .lower();
        let next = samples
            .par_iter()
            .map(|(x, e)| {
                let theta = x + &l * e;
                let out = solver.sweep(&theta, &sigma)?;
                Ok(solver.next_sigma(&out, tau_p))
            })
            .collect::<Result<Vec<_>>>()?;
        let next = next.iter().fold(CMat::<T>::zeros(m, m), |acc, s| acc + s) * real(T::one() / T::lit(draws as f64));
        let change = (&next - &sigma).norm() / next.norm();
        sigma = hermitian_part(&next);
        trajectory.push(sigma.clone());
        if change <= T::lit(tol) {
            break;
        }
    }
    Ok(trajectory)
}

#[cfg(test)]
mod tests;
