//! Empirical detection rates, NASE, and the oracle MMSE channel estimator.

use crate::amp::RANK_CUTOFF;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_in_place, cholesky_solve_in_place, low_rank_factor};
use crate::scalar::{frob_sq, real, CMat, Real};
use crate::scenario::CovarianceSet;

/// True and decided activity plus true and estimated channels of one block.
#[derive(Clone, Debug)]
pub struct TrialOutcome<T: Real> {
    pub gamma: Vec<bool>,
    pub gamma_hat: Vec<bool>,
    /// `M x N`, zero columns for inactive users.
    pub x: CMat<T>,
    pub x_hat: CMat<T>,
}

impl<T: Real> TrialOutcome<T> {
    pub fn new(gamma: Vec<bool>, gamma_hat: Vec<bool>, x: CMat<T>, x_hat: CMat<T>) -> Result<Self> {
        let n = gamma.len();
        if gamma_hat.len() != n || x.ncols() != n || x_hat.shape() != x.shape() {
            return Err(Error::Dimension(format!(
                "outcome for {n} users has {} decisions, X {}x{}, X_hat {}x{}",
                gamma_hat.len(),
                x.nrows(),
                x.ncols(),
                x_hat.nrows(),
                x_hat.ncols()
            )));
        }
        Ok(Self { gamma, gamma_hat, x, x_hat })
    }

    pub fn active_set(&self) -> Vec<usize> {
        active_set(&self.gamma)
    }
}

pub fn active_set(gamma: &[bool]) -> Vec<usize> {
    gamma.iter().enumerate().filter_map(|(i, &g)| g.then_some(i)).collect()
}

/// Rates with binomial standard errors `sqrt(p (1 - p) / n)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateEstimate {
    pub p_md: f64,
    pub p_md_se: f64,
    pub p_fa: f64,
    pub p_fa_se: f64,
    pub actives: u64,
    pub inactives: u64,
}

/// Running miss and false-alarm counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DetectionTally {
    pub misses: u64,
    pub actives: u64,
    pub false_alarms: u64,
    pub inactives: u64,
}

impl DetectionTally {
    pub fn add(&mut self, gamma: &[bool], gamma_hat: &[bool]) {
        for (&g, &d) in gamma.iter().zip(gamma_hat) {
            if g {
                self.actives += 1;
                self.misses += u64::from(!d);
            } else {
                self.inactives += 1;
                self.false_alarms += u64::from(d);
            }
        }
    }

    pub fn merge(&mut self, other: &Self) {
        self.misses += other.misses;
        self.actives += other.actives;
        self.false_alarms += other.false_alarms;
        self.inactives += other.inactives;
    }

    pub fn rates(&self) -> Result<RateEstimate> {
        if self.actives == 0 {
            return Err(Error::Undefined("miss-detection rate with no active users"));
        }
        if self.inactives == 0 {
            return Err(Error::Undefined("false-alarm rate with no inactive users"));
        }
        let (p_md, p_md_se) = binomial(self.misses, self.actives);
        let (p_fa, p_fa_se) = binomial(self.false_alarms, self.inactives);
        Ok(RateEstimate {
            p_md,
            p_md_se,
            p_fa,
            p_fa_se,
            actives: self.actives,
            inactives: self.inactives,
        })
    }
}

fn binomial(k: u64, n: u64) -> (f64, f64) {
    let p = k as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

pub fn empirical_rates<T: Real>(outcomes: &[TrialOutcome<T>]) -> Result<RateEstimate> {
    let mut tally = DetectionTally::default();
    for o in outcomes {
        tally.add(&o.gamma, &o.gamma_hat);
    }
    tally.rates()
}

/// Sums of `||X_S - X_hat_S||_F^2` and `||X_S||_F^2` over trials.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NaseTally {
    pub error: f64,
    pub energy: f64,
    pub trials: u64,
}

impl NaseTally {
    /// `x_hat_s` holds one column per entry of `active`.
    pub fn add<T: Real>(&mut self, x: &CMat<T>, x_hat_s: &CMat<T>, active: &[usize]) {
        if active.is_empty() {
            return;
        }
        for (k, &i) in active.iter().enumerate() {
            let d = x.column(i) - x_hat_s.column(k);
            self.error += d.norm_squared().as_f64();
            self.energy += x.column(i).norm_squared().as_f64();
        }
        self.trials += 1;
    }

    pub fn merge(&mut self, other: &Self) {
        self.error += other.error;
        self.energy += other.energy;
        self.trials += other.trials;
    }

    /// Ratio of the averaged error to the averaged energy.
    pub fn nase(&self) -> Result<f64> {
        if self.trials == 0 || self.energy <= 0.0 {
            return Err(Error::Undefined("NASE without any active user"));
        }
        Ok(self.error / self.energy)
    }

    pub fn nase_db(&self) -> Result<f64> {
        self.nase().map(to_db)
    }
}

pub fn to_db(v: f64) -> f64 {
    10.0 * v.log10()
}

pub fn nase<T: Real>(outcomes: &[TrialOutcome<T>]) -> Result<f64> {
    let mut tally = NaseTally::default();
    for o in outcomes {
        let s = o.active_set();
        let x_hat_s = o.x_hat.select_columns(&s);
        tally.add(&o.x, &x_hat_s, &s);
    }
    tally.nase()
}

/// Joint MMSE estimate of the active channels given the true active set.
///
/// With `x = vec(X_S)` stacked user-major (`x = [x_s1; x_s2; ..]`), the
/// received signal is `vec(Y^T) = (Phi_S kron I_M) x + w`. Writing
/// `blockdiag(R_i) = B B^H` with thin factors,
///
/// ```text
/// x_hat = B (B^H (G kron I_M) B + sigma^2 I)^-1 B^H vec(Y^T conj(Phi_S)),   G = Phi_S^H Phi_S
/// ```
///
/// which equals `R A^H (A R A^H + sigma^2 I)^-1 y` and only needs a system of
/// size `sum_i rank(R_i)`. Returns an `M x |S|` matrix.
pub fn oracle_mmse<T: Real>(
    y: &CMat<T>,
    phi: &CMat<T>,
    active: &[usize],
    covs: &CovarianceSet<T>,
    noise_power: T,
) -> Result<CMat<T>> {
    let m = covs.antennas();
    let tau_p = phi.nrows();
    if active.is_empty() {
        return Err(Error::Config("the oracle estimator needs at least one active user".into()));
    }
    if y.shape() != (tau_p, m) || phi.ncols() != covs.len() {
        return Err(Error::Dimension(format!(
            "Y is {}x{}, Phi is {}x{}, covariances are {}x{m}x{m}",
            y.nrows(),
            y.ncols(),
            tau_p,
            phi.ncols(),
            covs.len()
        )));
    }
    if let Some(&bad) = active.iter().find(|&&i| i >= covs.len()) {
        return Err(Error::Dimension(format!("active user {bad} out of range")));
    }

    let factors: Vec<CMat<T>> = active
        .iter()
        .map(|&i| low_rank_factor(covs.spectrum(i), RANK_CUTOFF))
        .collect();
    let mut offsets = vec![0];
    for b in &factors {
        offsets.push(offsets.last().unwrap() + b.ncols());
    }
    let total = *offsets.last().unwrap();

    let phi_s = phi.select_columns(active);
    let gram = phi_s.adjoint() * &phi_s;
    // matched filter outputs Y^T conj(phi_i), one column per active user
    let z = y.transpose() * phi_s.map(|c| c.conj());

    let mut k = CMat::<T>::zeros(total, total);
    for a in 0..active.len() {
        for b in a..active.len() {
            let block = (factors[a].adjoint() * &factors[b]) * gram[(a, b)];
            k.view_mut((offsets[a], offsets[b]), block.shape()).copy_from(&block);
            if a != b {
                k.view_mut((offsets[b], offsets[a]), (block.ncols(), block.nrows()))
                    .copy_from(&block.adjoint());
            }
        }
    }
    for d in 0..total {
        k[(d, d)] += real(noise_power);
    }
    let mut rhs = vec![real(T::zero()); total];
    for (a, b) in factors.iter().enumerate() {
        let part = b.adjoint() * z.column(a);
        rhs[offsets[a]..offsets[a + 1]].copy_from_slice(part.as_slice());
    }
    cholesky_in_place(k.as_mut_slice(), total).ok_or(Error::Singular)?;
    cholesky_solve_in_place(k.as_slice(), total, &mut rhs);

    let mut x_hat = CMat::<T>::zeros(m, active.len());
    for (a, b) in factors.iter().enumerate() {
        let coeffs = nalgebra::DVector::from_column_slice(&rhs[offsets[a]..offsets[a + 1]]);
        x_hat.set_column(a, &(b * coeffs));
    }
    Ok(x_hat)
}

/// Squared Frobenius error of an estimate against the active columns of `x`.
pub fn active_error<T: Real>(x: &CMat<T>, x_hat_s: &CMat<T>, active: &[usize]) -> f64 {
    frob_sq(&(x.select_columns(active) - x_hat_s)).as_f64()
}
