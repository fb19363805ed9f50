//! Scenario generation: user geometry, spatially correlated covariances,
//! sporadic activity, QPSK pilots, and the received pilot signal.
//!
//! Covariances and pilots are drawn once per experiment; activity, channels,
//! and noise are redrawn for every coherence block.

use crate::error::{Error, Result};
use crate::linalg::{clamp_psd_spectrum, eig_hermitian, hermitian_part, HermitianSpectrum};
use crate::scalar::{complex_normal_matrix, cplx, real, CMat, Real};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PathLossMode {
    /// Every user has `trace(R_i) / M = 1`.
    #[default]
    UnitGain,
}

/// Scenario scalars. Stored in `f64` regardless of the simulation scalar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub n_users: usize,
    pub antennas: usize,
    pub tau_p: usize,
    pub epsilon: f64,
    pub noise_power: f64,
    /// Cell radius in meters.
    pub cell_radius: f64,
    /// Users never sit closer than this to the base station (meters).
    pub guard_radius: f64,
    /// Angular standard deviation of the local scattering model, in degrees.
    pub asd_deg: f64,
    /// Antenna spacing in wavelengths.
    pub antenna_spacing: f64,
    pub pathloss: PathLossMode,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n_users: 200,
            antennas: 16,
            tau_p: 30,
            epsilon: 0.05,
            noise_power: noise_power_from_snr_db(10.0),
            cell_radius: 100.0,
            guard_radius: 5.0,
            asd_deg: 10.0,
            antenna_spacing: 0.5,
            pathloss: PathLossMode::UnitGain,
        }
    }
}

/// Unit pilot norm and unit average channel gain make SNR = 1 / sigma^2.
pub fn noise_power_from_snr_db(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

pub fn snr_db_from_noise_power(noise_power: f64) -> f64 {
    -10.0 * noise_power.log10()
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_users < 1 {
            return fail("n_users must be at least 1".into());
        }
        if self.antennas < 1 {
            return fail("antennas must be at least 1".into());
        }
        if self.tau_p < 1 || self.tau_p > self.n_users {
            return fail(format!("tau_p must lie in [1, n_users], got {}", self.tau_p));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return fail(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if !(self.noise_power > 0.0 && self.noise_power.is_finite()) {
            return fail(format!("noise_power must be positive, got {}", self.noise_power));
        }
        if !(self.asd_deg >= 0.0 && self.asd_deg.is_finite()) {
            return fail(format!("asd_deg must be non-negative, got {}", self.asd_deg));
        }
        if !(self.antenna_spacing > 0.0 && self.antenna_spacing.is_finite()) {
            return fail("antenna_spacing must be positive".into());
        }
        if !(self.cell_radius > 0.0 && self.guard_radius >= 0.0 && self.guard_radius < self.cell_radius) {
            return fail("need 0 <= guard_radius < cell_radius".into());
        }
        Ok(())
    }

    pub fn snr_db(&self) -> f64 {
        snr_db_from_noise_power(self.noise_power)
    }
}

/// Gaussian local-scattering covariance of a half-wavelength-style ULA, before
/// any gain normalization. Entry `(m, n)` depends only on `m - n`.
pub fn local_scattering_covariance<T: Real>(
    antennas: usize,
    spacing: f64,
    asd_rad: f64,
    nominal_angle: f64,
) -> CMat<T> {
    let (s, c) = nominal_angle.sin_cos();
    CMat::<T>::from_fn(antennas, antennas, |m, n| {
        let dist = m as f64 - n as f64;
        let phase = 2.0 * PI * spacing * dist * s;
        let spread = 2.0 * PI * spacing * dist * c;
        let mag = (-(asd_rad * asd_rad / 2.0) * spread * spread).exp();
        cplx(T::lit(mag * phase.cos()), T::lit(mag * phase.sin()))
    })
}

/// Per-user channel covariances `R_i`, together with their spectra and
/// Hermitian square roots (both computed once on construction).
#[derive(Clone, Debug)]
pub struct CovarianceSet<T: Real> {
    covariances: Vec<CMat<T>>,
    spectra: Vec<HermitianSpectrum<T>>,
    roots: Vec<CMat<T>>,
    nominal_angles: Vec<f64>,
}

impl<T: Real> CovarianceSet<T> {
    pub fn from_matrices(covariances: Vec<CMat<T>>) -> Result<Self> {
        Self::with_angles(covariances, Vec::new())
    }

    fn with_angles(covariances: Vec<CMat<T>>, nominal_angles: Vec<f64>) -> Result<Self> {
        let Some(first) = covariances.first() else {
            return Err(Error::Config("covariance set is empty".into()));
        };
        let m = first.nrows();
        let mut spectra = Vec::with_capacity(covariances.len());
        let mut roots = Vec::with_capacity(covariances.len());
        for r in &covariances {
            if r.nrows() != m || r.ncols() != m {
                return Err(Error::Dimension("covariances must all be MxM".into()));
            }
            let spec = clamp_psd_spectrum(eig_hermitian(r)?)?;
            roots.push(hermitian_part(&spec.map(|x| x.sqrt())));
            spectra.push(spec);
        }
        Ok(Self {
            covariances,
            spectra,
            roots,
            nominal_angles,
        })
    }

    pub fn len(&self) -> usize {
        self.covariances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covariances.is_empty()
    }

    pub fn antennas(&self) -> usize {
        self.covariances[0].nrows()
    }

    pub fn get(&self, i: usize) -> &CMat<T> {
        &self.covariances[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &CMat<T>> {
        self.covariances.iter()
    }

    pub fn spectrum(&self, i: usize) -> &HermitianSpectrum<T> {
        &self.spectra[i]
    }

    /// Hermitian square root of `R_i`.
    pub fn root(&self, i: usize) -> &CMat<T> {
        &self.roots[i]
    }

    /// Nominal angles (radians); empty when built from raw matrices.
    pub fn nominal_angles(&self) -> &[f64] {
        &self.nominal_angles
    }

    pub fn sum(&self) -> CMat<T> {
        let m = self.antennas();
        self.covariances.iter().fold(CMat::<T>::zeros(m, m), |acc, r| acc + r)
    }
}

/// Draws a user position uniformly over the annulus `[guard, radius]` and
/// returns its angle as seen from the base station at the cell center.
fn draw_nominal_angle<R: Rng + ?Sized>(config: &SystemConfig, rng: &mut R) -> f64 {
    let (g2, r2) = (config.guard_radius.powi(2), config.cell_radius.powi(2));
    let _radius = (g2 + (r2 - g2) * rng.random::<f64>()).sqrt();
    -PI + 2.0 * PI * rng.random::<f64>()
}

pub fn build_covariances<T: Real, R: Rng + ?Sized>(
    config: &SystemConfig,
    rng: &mut R,
) -> Result<CovarianceSet<T>> {
    config.validate()?;
    let m = config.antennas;
    let asd = config.asd_deg.to_radians();
    let mut covs = Vec::with_capacity(config.n_users);
    let mut angles = Vec::with_capacity(config.n_users);
    for _ in 0..config.n_users {
        let angle = draw_nominal_angle(config, rng);
        let r = local_scattering_covariance::<T>(m, config.antenna_spacing, asd, angle);
        let trace = (0..m).fold(T::zero(), |acc, k| acc + r[(k, k)].re);
        let scale = real(T::lit(m as f64) / trace);
        covs.push(hermitian_part(&(r * scale)));
        angles.push(angle);
    }
    CovarianceSet::with_angles(covs, angles)
}

/// I.i.d. Bernoulli(epsilon) activity indicators.
pub fn sample_activity<R: Rng + ?Sized>(config: &SystemConfig, rng: &mut R) -> Vec<bool> {
    (0..config.n_users).map(|_| rng.random::<f64>() < config.epsilon).collect()
}

/// Channels `h_i = R_i^{1/2} z_i`, `z_i ~ CN(0, I)`, as the columns of an MxN matrix.
pub fn sample_channels<T: Real, R: Rng + ?Sized>(covs: &CovarianceSet<T>, rng: &mut R) -> CMat<T> {
    let m = covs.antennas();
    let n = covs.len();
    let z = complex_normal_matrix::<T, _>(m, n, rng);
    let mut h = CMat::<T>::zeros(m, n);
    for i in 0..n {
        h.set_column(i, &(covs.root(i) * z.column(i)));
    }
    h
}

/// Activity, channels, and effective channels of one coherence block.
#[derive(Clone, Debug)]
pub struct GroundTruth<T: Real> {
    pub gamma: Vec<bool>,
    pub h: CMat<T>,
    /// `x_i = gamma_i h_i`.
    pub x: CMat<T>,
}

impl<T: Real> GroundTruth<T> {
    pub fn new(gamma: Vec<bool>, h: CMat<T>) -> Self {
        let mut x = h.clone();
        for (i, &g) in gamma.iter().enumerate() {
            if !g {
                x.column_mut(i).fill(real(T::zero()));
            }
        }
        Self { gamma, h, x }
    }

    pub fn sample<R: Rng + ?Sized>(config: &SystemConfig, covs: &CovarianceSet<T>, rng: &mut R) -> Self {
        let gamma = sample_activity(config, rng);
        let h = sample_channels(covs, rng);
        Self::new(gamma, h)
    }

    pub fn active_set(&self) -> Vec<usize> {
        self.gamma
            .iter()
            .enumerate()
            .filter_map(|(i, &g)| g.then_some(i))
            .collect()
    }
}

/// Pilot matrix with unit-norm QPSK columns.
#[derive(Clone, Debug)]
pub struct PilotMatrix<T: Real> {
    pub phi: CMat<T>,
}

impl<T: Real> PilotMatrix<T> {
    pub fn tau_p(&self) -> usize {
        self.phi.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.phi.ncols()
    }
}

/// Entries drawn uniformly from `(+-1 +- j) / sqrt(2 tau_p)`.
pub fn gen_pilots<T: Real, R: Rng + ?Sized>(config: &SystemConfig, rng: &mut R) -> PilotMatrix<T> {
    let amp = T::lit(1.0 / (2.0 * config.tau_p as f64).sqrt());
    let mut phi = CMat::<T>::zeros(config.tau_p, config.n_users);
    for j in 0..config.n_users {
        for i in 0..config.tau_p {
            let re = if rng.random::<bool>() { amp } else { -amp };
            let im = if rng.random::<bool>() { amp } else { -amp };
            phi[(i, j)] = cplx(re, im);
        }
    }
    PilotMatrix { phi }
}

/// `Y = Phi X^T + W` with `W` i.i.d. CN(0, noise_power).
pub fn synthesize_rx<T: Real, R: Rng + ?Sized>(
    pilots: &PilotMatrix<T>,
    x: &CMat<T>,
    noise_power: T,
    rng: &mut R,
) -> Result<CMat<T>> {
    if x.ncols() != pilots.n_users() {
        return Err(Error::Dimension(format!(
            "X has {} columns but there are {} pilots",
            x.ncols(),
            pilots.n_users()
        )));
    }
    let clean = &pilots.phi * x.transpose();
    if noise_power == T::zero() {
        return Ok(clean);
    }
    let w = complex_normal_matrix::<T, _>(clean.nrows(), clean.ncols(), rng);
    Ok(clean + w * real(noise_power.sqrt()))
}
