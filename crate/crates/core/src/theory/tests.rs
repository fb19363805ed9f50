use super::*;
use crate::amp::AmpParams;
use crate::linalg::test_util::{random_pd, rel_frob};
use crate::scenario::{build_covariances, gen_pilots};
use nalgebra::Complex;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scalar(v: f64) -> CMat<f64> {
    CMat::from_element(1, 1, Complex::new(v, 0.0))
}

fn diag(values: &[f64]) -> CMat<f64> {
    let mut d = CMat::zeros(values.len(), values.len());
    for (i, &v) in values.iter().enumerate() {
        d[(i, i)] = Complex::new(v, 0.0);
    }
    d
}

/// Erlang(k, 1) CDF.
fn erlang_cdf(k: usize, a: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for j in 1..k {
        term *= a / j as f64;
        sum += term;
    }
    1.0 - (-a).exp() * sum
}

#[test]
fn xi_examples() {
    assert!((xi_matrix(&scalar(1.0), &scalar(1.0)).unwrap()[(0, 0)].re - 0.5).abs() < 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let sigma = random_pd(3, 0.1, &mut rng);
    assert_eq!(xi_matrix(&CMat::zeros(3, 3), &sigma).unwrap().norm(), 0.0);
    for _ in 0..50 {
        let r = random_pd(4, 0.0, &mut rng);
        let sigma = random_pd(4, 0.05, &mut rng);
        let xi = xi_matrix(&r, &sigma).unwrap();
        assert!(eig_hermitian(&xi).unwrap().min_eigenvalue() >= -1e-10);
    }
}

#[test]
fn hypothesis_cov_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let sigma = random_pd(3, 0.1, &mut rng);
    let r = random_pd(3, 0.0, &mut rng);
    assert_eq!(hypothesis_cov(&r, &sigma, Hypothesis::Inactive), sigma);
    assert_eq!(hypothesis_cov(&CMat::zeros(3, 3), &sigma, Hypothesis::Active), sigma);
    assert!((hypothesis_cov(&scalar(3.0), &scalar(1.0), Hypothesis::Active)[(0, 0)].re - 4.0).abs() < 1e-15);
}

#[test]
fn spectrum_examples() {
    let s = quadform_spectrum(&scalar(2.0), &scalar(0.5)).unwrap();
    assert_eq!(s.lambdas.len(), 1);
    assert!((s.lambdas[0] - 1.0).abs() < 1e-14);
    assert!((s.weights[0] - 1.0).abs() < 1e-14);

    let g = partial_fraction_weights(&[2.0f64, 1.0]);
    assert!((g[0] - 2.0).abs() < 1e-15 && (g[1] + 1.0).abs() < 1e-15);

    assert!(matches!(
        quadform_spectrum(&diag(&[1.0, 2.0]), &CMat::zeros(2, 2)),
        Err(Error::DegenerateSpectrum)
    ));
}

#[test]
fn spectrum_matches_power_sums_of_xi_c() {
    // the eigenvalues of C^{1/2} Xi C^{1/2} and Xi C coincide, so their power
    // sums equal tr((Xi C)^k)
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    for m in [1, 2, 4, 6] {
        let c = random_pd(m, 0.1, &mut rng);
        let xi = xi_matrix(&random_pd(m, 0.0, &mut rng), &random_pd(m, 0.2, &mut rng)).unwrap();
        let s = quadform_spectrum(&c, &xi).unwrap();
        let xc = &xi * &c;
        let mut pow = CMat::<f64>::identity(m, m);
        for k in 1..=3 {
            pow = &pow * &xc;
            let want = pow.trace().re;
            let got: f64 = s.lambdas.iter().map(|l| l.powi(k)).sum();
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "m={m} k={k}");
        }
    }
}

#[test]
fn weights_sum_to_one_for_distinct_eigenvalues() {
    let s = QuadFormSpectrum::<f64>::from_eigenvalues(&[3.0, 1.5, 0.7, 0.2]).unwrap();
    assert_eq!(s.method, CdfMethod::PartialFractions);
    assert!((s.weights.iter().sum::<f64>() - 1.0).abs() < 1e-8);
}

#[test]
fn cdf_limits() {
    let s = QuadFormSpectrum::<f64>::from_eigenvalues(&[2.0, 0.5]).unwrap();
    assert_eq!(quadform_cdf(&s, 0.0), 0.0);
    assert_eq!(quadform_cdf(&s, -3.0), 0.0);
    assert!((quadform_cdf(&s, 200.0) - 1.0).abs() < 1e-12);
    assert_eq!(quadform_cdf(&s, f64::INFINITY), 1.0);
    assert_eq!(quadform_cdf(&s, f64::NAN), 0.0);
}

#[test]
fn scalar_cdf_is_exponential() {
    let s = QuadFormSpectrum::<f64>::from_eigenvalues(&[1.7]).unwrap();
    for a in [0.1, 1.0, 4.0] {
        assert!((quadform_cdf(&s, a) - (1.0 - (-a / 1.7f64).exp())).abs() < 1e-15);
        let doubled = quadform_cdf_with(&s, a, ExponentConvention::Doubled);
        assert!((doubled - (1.0 - (-2.0 * a / 1.7f64).exp())).abs() < 1e-15);
    }
}

#[test]
fn repeated_eigenvalues_follow_erlang_law() {
    let two = QuadFormSpectrum::from_eigenvalues(&[1.0, 1.0]).unwrap();
    assert!(two.separated[0] > two.separated[1]);
    let three = QuadFormSpectrum::from_eigenvalues(&[1.0, 1.0, 1.0]).unwrap();
    assert_eq!(three.method, CdfMethod::PhaseType);
    let five = QuadFormSpectrum::from_eigenvalues(&[1.0; 5]).unwrap();
    for a in [0.2, 1.0, 2.5, 6.0] {
        assert!((quadform_cdf(&two, a) - erlang_cdf(2, a)).abs() < 1e-4);
        assert!((quadform_cdf(&three, a) - erlang_cdf(3, a)).abs() < 1e-10);
        assert!((quadform_cdf(&five, a) - erlang_cdf(5, a)).abs() < 1e-10);
    }
}

#[test]
fn phase_type_agrees_with_partial_fractions() {
    let lambdas = [4.0f64, 2.5, 1.0, 0.3, 0.05];
    let s = QuadFormSpectrum::<f64>::from_eigenvalues(&lambdas).unwrap();
    assert_eq!(s.method, CdfMethod::PartialFractions);
    for a in [0.01, 0.5, 2.0, 7.0, 30.0] {
        let pf = quadform_cdf(&s, a);
        let pt = 1.0 - phase_type_survival(&s.lambdas, a);
        assert!((pf - pt).abs() < 1e-10, "a={a}: {pf} vs {pt}");
    }
}

#[test]
fn clustered_spectrum_uses_phase_type_and_matches_sampling() {
    // the inactive hypothesis at high SNR: eigenvalues crowd just below 1
    let lambdas: Vec<f64> = (0..16).map(|k| 1.0 - 0.004 * k as f64 - 1e-4 * (k * k) as f64).collect();
    let s = QuadFormSpectrum::<f64>::from_eigenvalues(&lambdas).unwrap();
    assert_eq!(s.method, CdfMethod::PhaseType);
    let mut rng = ChaCha8Rng::seed_from_u64(63);
    let c = CMat::<f64>::identity(16, 16);
    let mut samples = mc_quadform_samples(&c, &diag(&lambdas), 100_000, &mut rng).unwrap();
    let d = sup_distance(&mut samples, |a| quadform_cdf(&s, a));
    assert!(d < 0.01, "sup distance {d}");
}

#[test]
fn exponent_convention_is_fixed_by_sampling() {
    // M = 1, C = 2, Xi = 1/2: Q = |z|^2 with z ~ CN(0, 1), lambda = 1
    let s = quadform_spectrum(&scalar(2.0), &scalar(0.5)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let samples = mc_quadform_samples(&scalar(2.0), &scalar(0.5), 1_000_000, &mut rng).unwrap();
    let unit = sup_distance(&mut samples.clone(), |a| quadform_cdf_with(&s, a, ExponentConvention::Unit));
    let doubled = sup_distance(&mut samples.clone(), |a| quadform_cdf_with(&s, a, ExponentConvention::Doubled));
    println!("sup distance: unit {unit:.5}, doubled {doubled:.5}");
    assert!(unit <= 0.005);
    assert!(doubled > 0.1);
    assert_eq!(CDF_CONVENTION, ExponentConvention::Unit);
}

#[test]
fn cdf_matches_sampling_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(65);
    for (k, m) in [1usize, 2, 4, 8].iter().cycle().take(8).enumerate() {
        let c = random_pd(*m, 0.05, &mut rng);
        let xi = xi_matrix(&random_pd(*m, 0.0, &mut rng), &random_pd(*m, 0.1, &mut rng)).unwrap();
        let s = quadform_spectrum(&c, &xi).unwrap();
        let mut samples = mc_quadform_samples(&c, &xi, 20_000, &mut rng).unwrap();
        let d = sup_distance(&mut samples, |a| quadform_cdf(&s, a));
        assert!(d < 0.02, "instance {k} (M={m}): sup distance {d}");
        let a = s.mean();
        let tail = mc_quadform_tail(&c, &xi, a, 20_000, &mut rng).unwrap();
        let pred = 1.0 - quadform_cdf(&s, a);
        assert!((tail.prob - pred).abs() <= 4.0 * tail.std_err.max(1e-3), "instance {k}");
        assert!((tail.mean - a).abs() <= 0.05 * a, "instance {k}: mean {} vs {a}", tail.mean);
    }
}

#[test]
fn tail_estimator_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let c = random_pd(3, 0.1, &mut rng);
    let zero = CMat::<f64>::zeros(3, 3);
    assert_eq!(mc_quadform_tail(&c, &zero, 0.5, 1000, &mut rng).unwrap().prob, 0.0);
    let xi = xi_matrix(&random_pd(3, 0.0, &mut rng), &c).unwrap();
    let t = mc_quadform_tail(&c, &xi, -1.0, 1000, &mut rng).unwrap();
    assert_eq!(t.prob, 1.0);
    assert_eq!(t.std_err, 0.0);
    assert!(matches!(mc_quadform_tail(&c, &xi, 1.0, 999, &mut rng), Err(Error::Config(_))));
}

#[test]
fn scalar_rates_have_closed_form() {
    // Xi = r / (s (r + s)); active lambda = r / s, inactive lambda = r / (r + s)
    let (s, r, eps, l) = (0.3, 2.0, 0.05, 0.5);
    let p = predict_rates(&scalar(r), &scalar(s), eps, l).unwrap();
    let alpha = ((r + s) / s).ln() + 19f64.ln();
    assert!((p.alpha - alpha).abs() < 1e-12);
    assert!((p.p_md - (1.0 - (-alpha * s / r).exp())).abs() < 1e-12);
    assert!((p.p_fa - (-alpha * (r + s) / r).exp()).abs() < 1e-12);
}

#[test]
fn rates_at_extreme_thresholds() {
    let r = diag(&[1.0, 1.0]);
    let sigma = diag(&[1.0, 1.0]);
    let low = predict_rates(&r, &sigma, 0.05, 1e-300).unwrap();
    assert_eq!((low.p_md, low.p_fa), (0.0, 1.0));
    let high = predict_rates(&r, &sigma, 0.05, 1.0 - 1e-12).unwrap();
    assert!(high.p_md > 1.0 - 1e-9 && high.p_fa < 1e-9);
    // a user with no channel energy is never declared active
    let none = predict_rates(&CMat::zeros(2, 2), &sigma, 0.05, 0.5).unwrap();
    assert_eq!((none.p_md, none.p_fa), (1.0, 0.0));
}

#[test]
fn rates_are_monotone_in_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(67);
    for _ in 0..10 {
        let r = random_pd(4, 0.0, &mut rng);
        let sigma = random_pd(4, 0.1, &mut rng);
        let mut last = (0.0, 1.0);
        for k in 1..40 {
            let l = k as f64 / 40.0;
            let p = predict_rates(&r, &sigma, 0.05, l).unwrap();
            assert!((0.0..=1.0).contains(&p.p_md) && (0.0..=1.0).contains(&p.p_fa));
            assert!(p.p_md >= last.0 - 1e-12 && p.p_fa <= last.1 + 1e-12);
            last = (p.p_md, p.p_fa);
        }
    }
}

#[test]
fn predict_all_averages_users() {
    let mut rng = ChaCha8Rng::seed_from_u64(68);
    let covs = CovarianceSet::from_matrices(vec![random_pd(2, 0.0, &mut rng), random_pd(2, 0.0, &mut rng)]).unwrap();
    let sigma = random_pd(2, 0.2, &mut rng);
    let policy = ThresholdPolicy::uniform(2, 0.5).unwrap();
    let all = predict_all(&covs, &sigma, 0.05, &policy).unwrap();
    let a = predict_rates(covs.get(0), &sigma, 0.05, 0.5).unwrap();
    let b = predict_rates(covs.get(1), &sigma, 0.05, 0.5).unwrap();
    assert!((all.mean_p_md() - (a.p_md + b.p_md) / 2.0).abs() < 1e-15);
    assert!((all.mean_p_fa() - (a.p_fa + b.p_fa) / 2.0).abs() < 1e-15);
    assert!(predict_all(&covs, &sigma, 0.05, &ThresholdPolicy::uniform(3, 0.5).unwrap()).is_err());
}

fn small_scenario(epsilon: f64, noise_power: f64) -> (SystemConfig, CovarianceSet<f64>, PilotMatrix<f64>) {
    let config = SystemConfig {
        n_users: 80,
        antennas: 4,
        tau_p: 24,
        epsilon,
        noise_power,
        ..SystemConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(69);
    let covs = build_covariances::<f64, _>(&config, &mut rng).unwrap();
    let pilots = gen_pilots::<f64, _>(&config, &mut rng);
    (config, covs, pilots)
}

#[test]
fn converged_sigma_in_the_trivial_regime() {
    let (config, covs, pilots) = small_scenario(1e-6, 10.0);
    let solver = AmpSolver::new(&covs, AmpParams::new(config.epsilon, config.noise_power)).unwrap();
    let init = solver.initial_sigma(config.tau_p);
    for method in [SigmaMethod::AmpAverage, SigmaMethod::EquivalentModel] {
        let s = converged_sigma(&solver, &config, &pilots, 5, 1, method).unwrap();
        assert!(rel_frob(&s, &init) < 0.01, "{method:?}");
    }
}

#[test]
fn converged_sigma_is_deterministic_and_methods_agree() {
    let (config, covs, pilots) = small_scenario(0.1, 0.1);
    let solver = AmpSolver::new(&covs, AmpParams::new(config.epsilon, config.noise_power)).unwrap();
    let a = converged_sigma(&solver, &config, &pilots, 30, 5, SigmaMethod::AmpAverage).unwrap();
    let b = converged_sigma(&solver, &config, &pilots, 30, 5, SigmaMethod::AmpAverage).unwrap();
    assert_eq!(a, b);
    let se = converged_sigma(&solver, &config, &pilots, 30, 5, SigmaMethod::EquivalentModel).unwrap();
    let gap = rel_frob(&a, &se);
    assert!(gap < 0.1, "methods differ by {gap}");
    assert!(converged_sigma(&solver, &config, &pilots, 0, 5, SigmaMethod::AmpAverage).is_err());
}

#[test]
fn f32_cdf_is_sane() {
    let s = QuadFormSpectrum::<f32>::from_eigenvalues(&[2.0, 1.0, 0.5]).unwrap();
    assert_eq!(s.method, CdfMethod::PhaseType);
    let s64 = QuadFormSpectrum::<f64>::from_eigenvalues(&[2.0, 1.0, 0.5]).unwrap();
    for a in [0.3f32, 1.0, 4.0] {
        assert!((quadform_cdf(&s, a) as f64 - quadform_cdf(&s64, a as f64)).abs() < 1e-5);
    }
}

proptest! {
    #[test]
    fn cdf_is_monotone(values in proptest::collection::vec(0.01f64..10.0, 1..9), steps in 5usize..40) {
        let s = QuadFormSpectrum::<f64>::from_eigenvalues(&values).unwrap();
        let top = 10.0 * s.mean();
        let mut last = 0.0;
        for k in 0..=steps {
            let f = quadform_cdf(&s, top * k as f64 / steps as f64);
            prop_assert!((0.0..=1.0).contains(&f));
            prop_assert!(f >= last - 1e-9);
            last = f;
        }
    }

    #[test]
    fn both_evaluations_agree(values in proptest::collection::vec(0.05f64..5.0, 1..7), a in 0.01f64..20.0) {
        let s = QuadFormSpectrum::<f64>::from_eigenvalues(&values).unwrap();
        let pt = 1.0 - phase_type_survival(&s.lambdas, a);
        prop_assert!((quadform_cdf(&s, a) - pt).abs() < 1e-6);
    }
}

#[test]
fn state_evolution_trajectory() {
    let (config, covs, _) = small_scenario(0.1, 0.1);
    let solver = AmpSolver::new(&covs, AmpParams::new(config.epsilon, config.noise_power)).unwrap();
    let traj = state_evolution(&solver, &config, 10, 3, 25, 0.0).unwrap();
    assert_eq!(traj.len(), 26);
    assert_eq!(traj[0], solver.initial_sigma(config.tau_p));
    let norms: Vec<f64> = traj.iter().map(|s| s.norm()).collect();
    assert!(norms[25] < norms[0]);
    assert!((norms[25] - norms[24]).abs() <= 1e-3 * norms[24]);
    let fixed = converged_sigma(&solver, &config, &PilotMatrix { phi: CMat::zeros(1, 1) }, 10, 3, SigmaMethod::EquivalentModel).unwrap();
    let stopped = state_evolution(&solver, &config, 10, 3, FIXED_POINT_MAX_ITER, FIXED_POINT_TOL).unwrap();
    assert_eq!(&fixed, stopped.last().unwrap());
    assert!(state_evolution(&solver, &config, 0, 3, 5, 0.0).is_err());
}
