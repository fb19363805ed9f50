//! Threshold test on the AMP output: user `i` is declared active when
//! `theta_i^H Xi_i theta_i >= alpha_i`, with
//! `alpha_i = u_i - log(eps (1 - l_i) / (l_i (1 - eps)))`.
//!
//! With `l_i = 1/2` this is the MAP rule `psi_i >= 1/2`.

use crate::amp::GaussianTerms;
use crate::error::{Error, Result};
use crate::scalar::{CMat, CVec, Real};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

fn check_unit_interval<T: Real>(name: &str, v: T) -> Result<()> {
    if v > T::zero() && v < T::one() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")))
    }
}

/// `log(eps (1 - l) / (l (1 - eps)))`.
pub fn threshold_offset<T: Real>(epsilon: T, l: T) -> Result<T> {
    check_unit_interval("threshold l", l)?;
    check_unit_interval("activity probability", epsilon)?;
    let one = T::one();
    Ok((epsilon / (one - epsilon)).ln() + ((one - l) / l).ln())
}

/// `alpha = u - log(eps (1 - l) / (l (1 - eps)))` for a known `u`.
pub fn alpha_from_log_det<T: Real>(log_det_ratio: T, epsilon: T, l: T) -> Result<T> {
    Ok(log_det_ratio - threshold_offset(epsilon, l)?)
}

pub fn compute_alpha<T: Real>(r: &CMat<T>, sigma: &CMat<T>, epsilon: T, l: T) -> Result<T> {
    let g = GaussianTerms::new(r, sigma)?;
    alpha_from_log_det(g.log_det_ratio, epsilon, l)
}

/// Ties go to "active".
pub fn decide_stat<T: Real>(quad_stat: T, alpha: T) -> bool {
    quad_stat >= alpha
}

pub fn decide<T: Real>(theta: &CVec<T>, r: &CMat<T>, sigma: &CMat<T>, alpha: T) -> Result<bool> {
    let g = GaussianTerms::new(r, sigma)?;
    Ok(decide_stat(g.quad_stat(theta), alpha))
}

/// Per-user probability thresholds `l_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdPolicy {
    levels: Vec<f64>,
}

impl ThresholdPolicy {
    pub fn uniform(n_users: usize, l: f64) -> Result<Self> {
        Self::per_user(vec![l; n_users])
    }

    pub fn per_user(levels: Vec<f64>) -> Result<Self> {
        for &l in &levels {
            check_unit_interval("threshold l", l)?;
        }
        Ok(Self { levels })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level(&self, i: usize) -> f64 {
        self.levels[i]
    }

    /// Thresholds for the `u_i` of the current `Sigma`.
    pub fn alphas<T: Real>(&self, log_det_ratio: &[T], epsilon: T) -> Result<Vec<T>> {
        if log_det_ratio.len() != self.levels.len() {
            return Err(Error::Dimension(format!(
                "{} log-det ratios for {} thresholds",
                log_det_ratio.len(),
                self.levels.len()
            )));
        }
        log_det_ratio
            .iter()
            .zip(&self.levels)
            .map(|(&u, &l)| alpha_from_log_det(u, epsilon, T::lit(l)))
            .collect()
    }

    /// Decisions from the per-user statistics `(u_i, w_i)` of one AMP run.
    pub fn decide_all<T: Real>(&self, log_det_ratio: &[T], quad_stat: &[T], epsilon: T) -> Result<Vec<bool>> {
        if quad_stat.len() != self.levels.len() {
            return Err(Error::Dimension("one quadratic statistic per user is required".into()));
        }
        Ok(self
            .alphas(log_det_ratio, epsilon)?
            .into_iter()
            .zip(quad_stat)
            .map(|(a, &w)| decide_stat(w, a))
            .collect())
    }
}
