use log::info;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::prior::{log_unnormalized_posterior, HyperPrior};
use crate::error::{Error, Result};
use crate::gp::{lml_at_log, Dataset};
use crate::kernels::{HyperVector, KernelFamily};

/// Central-difference step in log space.
pub const HESSIAN_STEP: f64 = 1e-3;
/// Lower bound on the empirical-Bayes precision.
pub const MIN_PRIOR_PRECISION: f64 = 1e-6;

/// Gaussian approximation of the posterior over `log ϑ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceApprox {
    /// `log ϑ₀` in `[ℓ…, σ_f², σ_n²]` order.
    pub mean: Vec<f64>,
    /// Row-major covariance; rows/columns of pinned coordinates are zero.
    pub covariance: Vec<Vec<f64>>,
}

impl LaplaceApprox {
    pub fn std_devs(&self) -> Vec<f64> {
        (0..self.mean.len()).map(|i| self.covariance[i][i].max(0.0).sqrt()).collect()
    }

    pub fn center(&self) -> HyperVector {
        HyperVector::from_log(&self.mean)
    }
}

/// Central finite-difference Hessian of `f` at `u`.
pub fn fd_hessian<F: Fn(&[f64]) -> f64>(f: F, u: &[f64], h: f64) -> DMatrix<f64> {
    let p = u.len();
    let f0 = f(u);
    let at = |d: &[(usize, f64)]| {
        let mut v = u.to_vec();
        for &(i, s) in d {
            v[i] += s;
        }
        f(&v)
    };
    let mut hess = DMatrix::zeros(p, p);
    for i in 0..p {
        hess[(i, i)] = (at(&[(i, h)]) - 2.0 * f0 + at(&[(i, -h)])) / (h * h);
        for j in 0..i {
            let v = (at(&[(i, h), (j, h)]) - at(&[(i, h), (j, -h)]) - at(&[(i, -h), (j, h)]) + at(&[(i, -h), (j, -h)]))
                / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

/// Laplace approximation of an arbitrary log density over `free` coordinates
/// of `u0`.
pub fn laplace_from_log_density<F: Fn(&[f64]) -> f64>(f: F, u0: &[f64], free: &[usize]) -> Result<LaplaceApprox> {
    let embed = |z: &[f64]| {
        let mut u = u0.to_vec();
        for (k, &i) in free.iter().enumerate() {
            u[i] = z[k];
        }
        u
    };
    let z0: Vec<f64> = free.iter().map(|&i| u0[i]).collect();
    let hess = fd_hessian(|z| f(&embed(z)), &z0, HESSIAN_STEP);
    if hess.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotNegativeDefinite {
            max_eigenvalue: f64::NAN,
        });
    }
    let max_eig = SymmetricEigen::new(hess.clone()).eigenvalues.max();
    if free.is_empty() {
        return Ok(LaplaceApprox {
            mean: u0.to_vec(),
            covariance: vec![vec![0.0; u0.len()]; u0.len()],
        });
    }
    if max_eig >= 0.0 {
        return Err(Error::NotNegativeDefinite { max_eigenvalue: max_eig });
    }
    let cov_free = (-hess).try_inverse().ok_or(Error::NotNegativeDefinite { max_eigenvalue: max_eig })?;
    let mut covariance = vec![vec![0.0; u0.len()]; u0.len()];
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            covariance[i][j] = cov_free[(a, b)];
        }
    }
    Ok(LaplaceApprox {
        mean: u0.to_vec(),
        covariance,
    })
}

/// Gaussian approximation at `theta0` using the finite-difference Hessian of
/// the log posterior in log space.
pub fn laplace_approximation(data: &Dataset, family: KernelFamily, prior: &HyperPrior, theta0: &HyperVector) -> Result<LaplaceApprox> {
    let target = |u: &[f64]| log_unnormalized_posterior(data, family, prior, &HyperVector::from_log(u));
    laplace_from_log_density(target, &theta0.to_log(), &prior.free_indices())
}

/// `h_p = 10 · max(0, λ_max(H))`, floored at [`MIN_PRIOR_PRECISION`] and
/// doubled until `H - h_p I` is negative definite.
pub fn empirical_bayes_precision(lml_hessian: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(lml_hessian.clone()).eigenvalues;
    let lmax = eig.max();
    let mut hp = (10.0 * lmax.max(0.0)).max(MIN_PRIOR_PRECISION);
    while lmax - hp >= 0.0 {
        hp *= 2.0;
        info!("empirical-Bayes precision doubled to {hp:e}");
    }
    hp
}

/// Normal prior on `log ϑ` centered on `theta0` whose precision makes the
/// log-posterior Hessian negative definite there.
pub fn empirical_bayes_prior(data: &Dataset, family: KernelFamily, theta0: &HyperVector) -> Result<HyperPrior> {
    let u0 = theta0.to_log();
    let hess = fd_hessian(|u| lml_at_log(family, data, u), &u0, HESSIAN_STEP);
    if hess.iter().any(|v| !v.is_finite()) {
        return Err(Error::Factorization { jitter: f64::NAN });
    }
    let hp = empirical_bayes_precision(&hess);
    HyperPrior::gaussian_log(u0.clone(), vec![hp; u0.len()])
}
