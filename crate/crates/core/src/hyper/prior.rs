use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{log_marginal_likelihood, Dataset};
use crate::kernels::{HyperBox, HyperVector, KernelFamily, KernelSpec};

/// Prior over hyperparameters.
///
/// Each variant has a natural reference measure: `UniformBox` is flat in the
/// raw hyperparameters, `GaussianLog` is a Gaussian in their logarithms.
/// [`HyperPrior::log_density`] is relative to that measure; the two
/// `*_correction` methods convert between measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HyperPrior {
    UniformBox(HyperBox),
    GaussianLog {
        /// Mean of `log ϑ` in `[ℓ…, σ_f², σ_n²]` order.
        mean: Vec<f64>,
        /// Diagonal of the precision matrix of `log ϑ`.
        precision: Vec<f64>,
    },
}

impl HyperPrior {
    pub fn gaussian_log(mean: Vec<f64>, precision: Vec<f64>) -> Result<Self> {
        if mean.len() != precision.len() || mean.len() < 3 {
            return Err(Error::Input("GaussianLog prior needs matching mean/precision of length d+2".into()));
        }
        if precision.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::Input("precision entries must be positive".into()));
        }
        Ok(HyperPrior::GaussianLog { mean, precision })
    }

    /// Number of scalar hyperparameters (`d + 2`).
    pub fn len(&self) -> usize {
        match self {
            HyperPrior::UniformBox(b) => b.dim() + 2,
            HyperPrior::GaussianLog { mean, .. } => mean.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.len() - 2
    }

    /// Coordinates the sampler moves; pinned box coordinates are excluded.
    pub fn free_indices(&self) -> Vec<usize> {
        match self {
            HyperPrior::UniformBox(b) => b.free_indices(),
            HyperPrior::GaussianLog { mean, .. } => (0..mean.len()).collect(),
        }
    }

    /// Unnormalized log density in the prior's natural measure; `-∞` outside
    /// the support.
    pub fn log_density(&self, theta: &HyperVector) -> f64 {
        match self {
            HyperPrior::UniformBox(b) => {
                if b.contains_rounded(theta) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            HyperPrior::GaussianLog { mean, precision } => {
                let u = theta.to_log();
                -0.5 * u.iter().zip(mean).zip(precision).map(|((u, m), h)| h * (u - m) * (u - m)).sum::<f64>()
            }
        }
    }

    /// Add to [`HyperPrior::log_density`] to get a density in `log ϑ`.
    pub fn log_space_correction(&self, theta: &HyperVector) -> f64 {
        match self {
            HyperPrior::UniformBox(b) => {
                let lo = b.lower.as_vec();
                let hi = b.upper.as_vec();
                theta.as_vec().iter().enumerate().filter(|(i, _)| lo[*i] < hi[*i]).map(|(_, v)| v.ln()).sum()
            }
            HyperPrior::GaussianLog { .. } => 0.0,
        }
    }

    /// Add to [`HyperPrior::log_density`] to get a density in raw `ϑ`.
    pub fn raw_space_correction(&self, theta: &HyperVector) -> f64 {
        match self {
            HyperPrior::UniformBox(_) => 0.0,
            HyperPrior::GaussianLog { .. } => -theta.as_vec().iter().map(|v| v.ln()).sum::<f64>(),
        }
    }

    /// Initial point for a chain.
    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> HyperVector {
        match self {
            HyperPrior::UniformBox(b) => b.sample_log_uniform(rng),
            HyperPrior::GaussianLog { mean, precision } => {
                let u: Vec<f64> = mean
                    .iter()
                    .zip(precision)
                    .map(|(m, h)| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + z / h.sqrt()
                    })
                    .collect();
                HyperVector::from_log(&u)
            }
        }
    }

    /// Log-space proposal scale per coordinate before adaptation.
    pub(crate) fn initial_scales(&self) -> Vec<f64> {
        match self {
            HyperPrior::UniformBox(b) => b
                .log_lower()
                .iter()
                .zip(b.log_upper())
                .map(|(lo, hi)| (0.05 * (hi - lo)).clamp(1e-3, 0.5))
                .collect(),
            HyperPrior::GaussianLog { precision, .. } => precision.iter().map(|h| (1.0 / h.sqrt()).min(1.0)).collect(),
        }
    }

    /// Value pinned for coordinate `i`, if any.
    pub(crate) fn pinned_value(&self, i: usize) -> Option<f64> {
        match self {
            HyperPrior::UniformBox(b) => {
                let lo = b.lower.as_vec()[i];
                (lo == b.upper.as_vec()[i]).then_some(lo)
            }
            HyperPrior::GaussianLog { .. } => None,
        }
    }
}

/// `log p(y | X, ϑ) + log p(ϑ)` in the prior's natural measure. `-∞` outside
/// the prior support or where the kernel matrix cannot be factorized.
pub fn log_unnormalized_posterior(data: &Dataset, family: KernelFamily, prior: &HyperPrior, theta: &HyperVector) -> f64 {
    if theta.validate().is_err() || theta.len() != prior.len() {
        return f64::NEG_INFINITY;
    }
    let lp = prior.log_density(theta);
    if lp == f64::NEG_INFINITY {
        return lp;
    }
    match log_marginal_likelihood(&KernelSpec::new(family, theta.clone()), data) {
        Ok(l) => l + lp,
        Err(e) => {
            log::debug!("rejecting {:?}: {e}", theta.as_vec());
            f64::NEG_INFINITY
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> Dataset {
        Dataset::from_rows(&[vec![0.0], vec![0.7], vec![1.5]], &[0.3, -0.1, 0.8]).unwrap()
    }

    #[test]
    fn outside_box_is_neg_infinity() {
        let b = HyperBox::uniform(1, (0.1, 10.0), (0.1, 10.0), (0.01, 1.0)).unwrap();
        let p = HyperPrior::UniformBox(b);
        let out = HyperVector::new(vec![20.0], 1.0, 0.1).unwrap();
        assert_eq!(log_unnormalized_posterior(&data(), KernelFamily::SquaredExponential, &p, &out), f64::NEG_INFINITY);
    }

    #[test]
    fn flat_prior_differences_equal_lml_differences() {
        let b = HyperBox::uniform(1, (0.1, 10.0), (0.1, 10.0), (0.01, 1.0)).unwrap();
        let p = HyperPrior::UniformBox(b);
        let fam = KernelFamily::SquaredExponential;
        let a = HyperVector::new(vec![0.5], 1.0, 0.1).unwrap();
        let c = HyperVector::new(vec![2.0], 3.0, 0.05).unwrap();
        let lml = |h: &HyperVector| log_marginal_likelihood(&KernelSpec::new(fam, h.clone()), &data()).unwrap();
        let lhs = log_unnormalized_posterior(&data(), fam, &p, &a) - log_unnormalized_posterior(&data(), fam, &p, &c);
        assert_eq!(lhs, lml(&a) - lml(&c));
    }

    #[test]
    fn gaussian_prior_at_mean_adds_nothing() {
        let h = HyperVector::new(vec![0.8], 1.2, 0.05).unwrap();
        let p = HyperPrior::gaussian_log(h.to_log(), vec![3.0, 3.0, 3.0]).unwrap();
        let fam = KernelFamily::Matern52;
        let lml = log_marginal_likelihood(&KernelSpec::new(fam, h.clone()), &data()).unwrap();
        assert_eq!(log_unnormalized_posterior(&data(), fam, &p, &h), lml);
    }

    #[test]
    fn invalid_gaussian_prior() {
        assert!(HyperPrior::gaussian_log(vec![0.0; 3], vec![1.0, 0.0, 1.0]).is_err());
        assert!(HyperPrior::gaussian_log(vec![0.0; 3], vec![1.0; 2]).is_err());
    }
}
