//! Quick oracle checks behind the `validate` subcommand.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::amp::{denoise, denoiser_jacobian, AmpParams, AmpSolver};
use crate::error::Result;
use crate::linalg::hermitian_part;
use crate::scalar::{complex_normal_matrix, complex_normal_vector, cplx, real, CMat, CVec};
use crate::scenario::{build_covariances, gen_pilots, synthesize_rx, GroundTruth, SystemConfig};
use crate::seed;
use crate::theory::{
    mc_quadform_samples, quadform_cdf, quadform_cdf_with, quadform_spectrum, sup_distance, xi_matrix,
    ExponentConvention,
};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub limit: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.value <= self.limit
    }
}

fn random_pd(m: usize, shift: f64, rng: &mut ChaCha8Rng) -> CMat<f64> {
    let g = complex_normal_matrix::<f64, _>(m, m, rng);
    hermitian_part(&(&g * g.adjoint())) + CMat::<f64>::identity(m, m) * real(shift)
}

/// Largest sup-distance between the closed-form CDF and sampled quadratic forms.
pub fn quadform_cdf_check(instances: usize, samples: usize, seed: u64) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let mut rng = seed::stream(seed, &[k as u64]);
        let m = [1, 2, 4, 8][k % 4];
        let c = random_pd(m, 0.05, &mut rng);
        let xi = xi_matrix(&random_pd(m, 0.0, &mut rng), &random_pd(m, 0.1, &mut rng))?;
        let s = quadform_spectrum(&c, &xi)?;
        let mut draws = mc_quadform_samples(&c, &xi, samples, &mut rng)?;
        worst = worst.max(sup_distance(&mut draws, |a| quadform_cdf(&s, a)));
    }
    Ok(Check { name: "quadratic-form CDF vs sampling (sup distance)", value: worst, limit: 0.01 })
}

/// Sup-distance of the exponential law `1 - exp(-alpha)` at `M = 1`.
pub fn exponent_check(samples: usize, seed: u64) -> Result<Check> {
    let mut rng = seed::stream(seed, &[0]);
    let c = CMat::<f64>::identity(1, 1);
    let s = quadform_spectrum(&c, &c)?;
    let mut draws = mc_quadform_samples(&c, &c, samples, &mut rng)?;
    let d = sup_distance(&mut draws, |a| quadform_cdf_with(&s, a, ExponentConvention::Unit));
    Ok(Check { name: "exponent convention at M = 1 (sup distance)", value: d, limit: 0.005 })
}

/// Worst relative error of the analytic Jacobian against central differences.
pub fn jacobian_check(instances: usize, seed: u64) -> Result<Check> {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let mut rng = seed::stream(seed, &[k as u64]);
        let m = [1, 2, 4][k % 3];
        let r = random_pd(m, 0.0, &mut rng);
        let sigma = random_pd(m, 0.2, &mut rng);
        let eps = rng.random_range(0.05..0.5);
        let theta: CVec<f64> = complex_normal_vector(m, &mut rng) * real(rng.random_range(0.5..2.0));
        let j = denoiser_jacobian(&theta, &r, &sigma, eps)?;
        let mut fd = CMat::<f64>::zeros(m, m);
        for b in 0..m {
            let mut col = CVec::<f64>::zeros(m);
            // d/dz = (d/dx - i d/dy) / 2
            for (dir, w) in [(cplx(1.0, 0.0), cplx(0.5, 0.0)), (cplx(0.0, 1.0), cplx(0.0, -0.5))] {
                let mut up = theta.clone();
                let mut down = theta.clone();
                up[b] += dir * h;
                down[b] -= dir * h;
                let diff = (denoise(&up, &r, &sigma, eps)? - denoise(&down, &r, &sigma, eps)?) / real(2.0 * h);
                col += diff * w;
            }
            fd.set_column(b, &col);
        }
        worst = worst.max((&j - &fd).norm() / j.norm().max(1e-12));
    }
    Ok(Check { name: "denoiser Jacobian vs finite differences (relative)", value: worst, limit: 1e-5 })
}

/// Relative Frobenius gap between the empirical covariance of `theta_i - x_i`
/// at convergence and the averaged state-evolution `Sigma`.
pub fn se_consistency_check(config: &SystemConfig, trials: usize, seed: u64) -> Result<Check> {
    let covs = build_covariances::<f64, _>(config, &mut seed::stream(seed, &[seed::label::COVARIANCES]))?;
    let pilots = gen_pilots::<f64, _>(config, &mut seed::stream(seed, &[seed::label::PILOTS]));
    let solver = AmpSolver::new(&covs, AmpParams::new(config.epsilon, config.noise_power))?;
    let m = config.antennas;
    let mut emp = CMat::<f64>::zeros(m, m);
    let mut se = CMat::<f64>::zeros(m, m);
    for t in 0..trials {
        let mut rng = seed::stream(seed, &[seed::label::TRIAL, t as u64]);
        let truth = GroundTruth::sample(config, &covs, &mut rng);
        let y = synthesize_rx(&pilots, &truth.x, config.noise_power, &mut rng)?;
        let state = solver.run(&y, &pilots)?.state;
        let e = &state.theta - &truth.x;
        emp += &e * e.adjoint() / real(config.n_users as f64);
        se += state.sigma;
    }
    let gap = (&emp - &se).norm() / se.norm();
    Ok(Check { name: "state evolution vs empirical pseudo-data error (relative)", value: gap, limit: 0.15 })
}

/// The default suite: seconds, not minutes.
pub fn run_all(seed: u64) -> Result<Vec<Check>> {
    let config = SystemConfig { n_users: 100, antennas: 4, tau_p: 30, ..SystemConfig::default() };
    Ok(vec![
        exponent_check(200_000, seed)?,
        quadform_cdf_check(8, 100_000, seed)?,
        jacobian_check(30, seed)?,
        se_consistency_check(&config, 40, seed)?,
    ])
}
