//! Uniform error bounds that remain valid when the hyperparameters are only
//! known to lie in a box `[ϑ′, ϑ″]`.
//!
//! The posterior standard deviation at any `ϑ` in the box is dominated by
//! `γ · σ_{ϑ′}` with `γ² = Π ϑ″_i / ϑ′_i`, and the posterior mean moves by at
//! most `2γ‖y‖σ_{ϑ′}/σ_n`. A box holding `1 − δ` posterior mass therefore
//! turns any per-hyperparameter bound into one that holds under the
//! hyperparameter uncertainty.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::gp::{Dataset, GPModel};
use crate::hyper::{LaplaceApprox, PosteriorSampleSet};
use crate::kernels::{lengthscale_gamma_sq, HyperVector, KernelFamily, KernelSpec};

/// Minimum number of samples per unit of `δ` required to certify mass.
pub const SAMPLES_PER_DELTA: f64 = 50.0;
/// Default practical scaling: `β = 4`, i.e. a 2σ interval.
pub const DEFAULT_PRACTICAL_BETA: f64 = 4.0;
/// Default `max β^{1/2}(ϑ)` over the box.
pub const DEFAULT_BETA_MAX_SQRT: f64 = std::f64::consts::SQRT_2;

/// Hyperparameter box `[lower, upper]` with the mass it was certified for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingPair {
    pub lower: HyperVector,
    pub upper: HyperVector,
    pub delta: f64,
    pub achieved_mass: f64,
    pub gamma: f64,
}

impl BoundingPair {
    pub fn new(lower: HyperVector, upper: HyperVector, delta: f64, achieved_mass: f64) -> Result<Self> {
        if lower.dim() != upper.dim() {
            return Err(Error::Dimension {
                expected: lower.dim(),
                got: upper.dim(),
            });
        }
        if !lower.le(&upper) {
            return Err(Error::Input("bounding pair lower exceeds upper".into()));
        }
        let gamma = lengthscale_gamma_sq(&lower.lengthscales, &upper.lengthscales).sqrt();
        Ok(BoundingPair {
            lower,
            upper,
            delta,
            achieved_mass,
            gamma,
        })
    }

    pub fn contains(&self, h: &HyperVector) -> bool {
        self.lower.le(h) && h.le(&self.upper)
    }

    /// `‖ϑ″ − ϑ′‖₂` over all hyperparameters.
    pub fn width(&self) -> f64 {
        self.lower.as_vec().iter().zip(self.upper.as_vec()).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt()
    }

    /// Conservative hyperparameters: shortest lengthscales, largest variances.
    pub fn envelope_hyper(&self) -> HyperVector {
        HyperVector {
            lengthscales: self.lower.lengthscales.clone(),
            signal_variance: self.upper.signal_variance,
            noise_variance: self.upper.noise_variance,
        }
    }
}

pub fn gamma_of(pair: &BoundingPair) -> f64 {
    pair.gamma
}

/// Smallest box found by greedy face shrinking that contains `theta0` and at
/// least a `1 − δ` fraction of `samples`.
///
/// The search starts from the bounding hull of all samples and `theta0` and
/// repeatedly drops the extreme samples on whichever face gives the largest
/// reduction of `‖ϑ″ − ϑ′‖₂` per dropped sample, stopping when no face can
/// move without losing too much mass. The path does not depend on `δ`, so a
/// smaller `δ` always yields a box containing the one for a larger `δ`.
pub fn find_bounding_pair(samples: &PosteriorSampleSet, theta0: &HyperVector, delta: f64) -> Result<BoundingPair> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Input(format!("delta must lie in (0, 1), got {delta}")));
    }
    let n = samples.len();
    let need = (SAMPLES_PER_DELTA / delta).ceil() as usize;
    if n < need {
        return Err(Error::TooFewSamples { have: n, need, delta });
    }
    let p = theta0.len();
    let pts: Vec<Vec<f64>> = samples.samples.iter().map(HyperVector::as_vec).collect();
    if pts.iter().any(|s| s.len() != p) {
        return Err(Error::Dimension {
            expected: p,
            got: pts.iter().map(Vec::len).find(|l| *l != p).unwrap_or(p),
        });
    }
    let t0 = theta0.as_vec();
    let required = (((1.0 - delta) * n as f64) - 1e-9).ceil().max(0.0) as usize;

    let mut inside = vec![true; n];
    let mut count = n;

    let hull = |inside: &[bool]| -> (Vec<f64>, Vec<f64>) {
        let mut lo = t0.clone();
        let mut hi = t0.clone();
        for (s, _) in pts.iter().zip(inside).filter(|(_, &k)| k) {
            for i in 0..p {
                lo[i] = lo[i].min(s[i]);
                hi[i] = hi[i].max(s[i]);
            }
        }
        (lo, hi)
    };
    let width = |lo: &[f64], hi: &[f64]| lo.iter().zip(hi).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt();

    loop {
        let (lo, hi) = hull(&inside);
        let w0 = width(&lo, &hi);
        // (score, coord, upper_face, extreme value)
        let mut best: Option<(f64, usize, bool, f64)> = None;
        for i in 0..p {
            for upper_face in [false, true] {
                // extreme value on this face and the next distinct one inward
                let mut ext = if upper_face { f64::NEG_INFINITY } else { f64::INFINITY };
                let mut next = ext;
                let mut at_ext = 0usize;
                for (s, _) in pts.iter().zip(&inside).filter(|(_, &k)| k) {
                    let v = s[i];
                    let further = if upper_face { v > ext } else { v < ext };
                    if v == ext {
                        at_ext += 1;
                    } else if further {
                        next = ext;
                        ext = v;
                        at_ext = 1;
                    } else if if upper_face { v > next } else { v < next } {
                        next = v;
                    }
                }
                if at_ext == 0 || count - at_ext < required {
                    continue;
                }
                let beyond_t0 = if upper_face { ext > t0[i] } else { ext < t0[i] };
                if !beyond_t0 {
                    continue;
                }
                let mut new_lo = lo.clone();
                let mut new_hi = hi.clone();
                if upper_face {
                    new_hi[i] = if next.is_finite() { next.max(t0[i]) } else { t0[i] };
                } else {
                    new_lo[i] = if next.is_finite() { next.min(t0[i]) } else { t0[i] };
                }
                let gain = w0 - width(&new_lo, &new_hi);
                if gain <= 0.0 {
                    continue;
                }
                let score = gain / at_ext as f64;
                if best.is_none_or(|b| score > b.0) {
                    best = Some((score, i, upper_face, ext));
                }
            }
        }
        let Some((_, i, _, ext)) = best else { break };
        for (k, s) in inside.iter_mut().zip(&pts) {
            if *k && s[i] == ext {
                *k = false;
                count -= 1;
            }
        }
    }

    let (lo, hi) = hull(&inside);
    let lower = HyperVector::from_slice(&lo);
    let upper = HyperVector::from_slice(&hi);
    let mass = crate::hyper::posterior_mass_in_box(samples, &lower, &upper)?;
    BoundingPair::new(lower, upper, delta, mass)
}

/// Rectangular region of a Laplace approximation: per-coordinate central
/// intervals at level `(1 − δ)^{1/p}` in log space, mapped back to raw
/// hyperparameters. Zero-variance coordinates collapse to the mean.
pub fn sidak_box(laplace: &LaplaceApprox, delta: f64) -> Result<BoundingPair> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Input(format!("delta must lie in (0, 1), got {delta}")));
    }
    let sd = laplace.std_devs();
    let free = sd.iter().filter(|s| **s > 0.0).count().max(1);
    let level = sidak_level(delta, free);
    let z = standard_normal_quantile(0.5 + 0.5 * level);
    let lo: Vec<f64> = laplace.mean.iter().zip(&sd).map(|(m, s)| m - z * s).collect();
    let hi: Vec<f64> = laplace.mean.iter().zip(&sd).map(|(m, s)| m + z * s).collect();
    BoundingPair::new(HyperVector::from_log(&lo), HyperVector::from_log(&hi), delta, level.powi(free as i32))
}

/// Per-coordinate level `(1 − δ)^{1/p}`.
pub fn sidak_level(delta: f64, p: usize) -> f64 {
    (1.0 - delta).powf(1.0 / p as f64)
}

pub fn standard_normal_quantile(q: f64) -> f64 {
    Normal::standard().inverse_cdf(q)
}

/// `β̄ = γ² (max β^{1/2} + 2‖y‖₂ / σ_n)²`.
pub fn beta_bar_theoretical(gamma: f64, beta_max_sqrt: f64, y: &[f64], sigma_n: f64) -> Result<f64> {
    if !(sigma_n > 0.0) {
        return Err(Error::Input(format!("noise standard deviation must be positive, got {sigma_n}")));
    }
    let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(gamma * gamma * (beta_max_sqrt + 2.0 * ynorm / sigma_n).powi(2))
}

/// Upper bound on `|μ_{ϑ₀}(x) − μ_ϑ(x)|` for `ϑ₀, ϑ` in the box:
/// `2γ‖y‖₂ σ_env(x) / σ_n`.
pub fn mean_discrepancy_bound(gamma: f64, y: &[f64], sigma_n: f64, sigma_env_at_x: f64) -> f64 {
    let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    2.0 * gamma * ynorm * sigma_env_at_x / sigma_n
}

/// `β^{1/2}(ϑ)`, the per-hyperparameter scaling of a uniform error bound.
pub type ScalingFn = Arc<dyn Fn(&HyperVector) -> f64 + Send + Sync>;

/// The constant scaling `β^{1/2}(ϑ) ≡ c`.
pub fn constant_scaling(c: f64) -> ScalingFn {
    Arc::new(move |_| c)
}

/// Largest value of `scaling` over a `per_axis`-point log grid of the box.
pub fn max_scaling_over_box(scaling: &ScalingFn, pair: &BoundingPair, per_axis: usize) -> f64 {
    let lo = pair.lower.to_log();
    let hi = pair.upper.to_log();
    let p = lo.len();
    let per_axis = per_axis.max(2);
    let axes: Vec<Vec<f64>> = (0..p)
        .map(|i| {
            if hi[i] > lo[i] {
                (0..per_axis).map(|k| lo[i] + (hi[i] - lo[i]) * k as f64 / (per_axis - 1) as f64).collect()
            } else {
                vec![lo[i]]
            }
        })
        .collect();
    let mut idx = vec![0usize; p];
    let mut best = f64::NEG_INFINITY;
    loop {
        let u: Vec<f64> = (0..p).map(|i| axes[i][idx[i]]).collect();
        best = best.max(scaling(&HyperVector::from_log(&u)));
        let mut k = 0;
        while k < p {
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == p {
            break;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    /// `β̄ = β`; the discrepancy term is dropped and `γ` taken as one.
    Practical { beta: f64 },
    /// `β̄` from the bounding pair, with `beta_max_sqrt = max β^{1/2}(ϑ)`.
    Theoretical { beta_max_sqrt: f64 },
}

impl Default for BetaMode {
    fn default() -> Self {
        BetaMode::Practical {
            beta: DEFAULT_PRACTICAL_BETA,
        }
    }
}

/// Working model at `ϑ₀` plus the envelope model whose scaled standard
/// deviation bounds the error.
#[derive(Debug, Clone)]
pub struct RobustBound {
    pub working_model: GPModel,
    pub envelope_model: GPModel,
    pub beta_bar: f64,
    pub mode: BetaMode,
    pub pair: BoundingPair,
}

impl RobustBound {
    pub fn new(data: &Dataset, family: KernelFamily, theta0: &HyperVector, pair: BoundingPair, mode: BetaMode) -> Result<Self> {
        let working_model = GPModel::fit(KernelSpec::new(family, theta0.clone()), data.clone())?;
        let envelope_model = GPModel::fit(KernelSpec::new(family, pair.envelope_hyper()), data.clone())?;
        let beta_bar = match mode {
            BetaMode::Practical { beta } => beta,
            BetaMode::Theoretical { beta_max_sqrt } => {
                // smallest noise level gives the largest discrepancy term
                let sigma_n = pair.lower.noise_variance.sqrt();
                beta_bar_theoretical(pair.gamma, beta_max_sqrt, data.y.as_slice(), sigma_n)?
            }
        };
        Ok(RobustBound {
            working_model,
            envelope_model,
            beta_bar,
            mode,
            pair,
        })
    }

    pub fn beta_bar_sqrt(&self) -> f64 {
        self.beta_bar.sqrt()
    }

    /// `μ_{ϑ₀}(x) ∓ β̄^{1/2} σ_env(x)`.
    pub fn interval(&self, xstar: &[f64]) -> Result<(f64, f64)> {
        let m = self.working_model.mean(xstar)?;
        let s = self.envelope_model.std(xstar)?;
        let r = self.beta_bar_sqrt() * s;
        Ok((m - r, m + r))
    }

    /// Interval half-width at `xstar`.
    pub fn half_width(&self, xstar: &[f64]) -> Result<f64> {
        Ok(self.beta_bar_sqrt() * self.envelope_model.std(xstar)?)
    }
}

pub fn robust_interval(rb: &RobustBound, xstar: &[f64]) -> Result<(f64, f64)> {
    rb.interval(xstar)
}

/// `μ_ϑ(x) ∓ β^{1/2} σ_ϑ(x)` for a single model.
pub fn vanilla_interval(model: &GPModel, beta_sqrt: f64, xstar: &[f64]) -> Result<(f64, f64)> {
    let (m, v) = model.predict(xstar)?;
    let r = beta_sqrt * v.sqrt();
    Ok((m - r, m + r))
}
