//! Adaptive random-walk Metropolis in log-hyperparameter space.
//!
//! During burn-in the global step size follows a Robbins–Monro recursion
//! toward [`TARGET_ACCEPTANCE`]; halfway through burn-in the proposal shape
//! is replaced by the empirical covariance of the chain so far. Both are
//! frozen once burn-in ends, so the retained draws come from a fixed
//! Metropolis kernel.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::prior::{log_unnormalized_posterior, HyperPrior};
use crate::error::{Error, Result};
use crate::gp::Dataset;
use crate::kernels::{HyperVector, KernelFamily};

pub const TARGET_ACCEPTANCE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub chains: usize,
    pub steps: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 4,
            steps: 5000,
            burn_in: 1000,
            thinning: 2,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.thinning == 0 {
            return Err(Error::Input("chains and thinning must be positive".into()));
        }
        if self.steps <= self.burn_in {
            return Err(Error::Input(format!("steps ({}) must exceed burn_in ({})", self.steps, self.burn_in)));
        }
        Ok(())
    }

    /// Retained draws per chain.
    pub fn kept_per_chain(&self) -> usize {
        (self.steps - self.burn_in).div_ceil(self.thinning)
    }
}

/// Raw output of [`metropolis`]: retained points and their target values,
/// chains concatenated in order.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub points: Vec<Vec<f64>>,
    pub log_target: Vec<f64>,
    /// Post-burn-in acceptance rate pooled over chains.
    pub acceptance_rate: f64,
    pub step_sizes: Vec<f64>,
}

/// Runs `cfg.chains` independent chains on `log_target`. `init` supplies a
/// starting point for each chain from that chain's RNG and must return a
/// point with finite target value.
pub fn metropolis<F, I>(log_target: F, init: I, initial_scales: &[f64], cfg: &SamplerConfig) -> Result<ChainOutput>
where
    F: Fn(&[f64]) -> f64 + Sync,
    I: Fn(&mut ChaCha8Rng) -> Result<Vec<f64>> + Sync,
{
    cfg.validate()?;
    let p = initial_scales.len();
    let chains: Vec<Result<(Vec<Vec<f64>>, Vec<f64>, usize, f64)>> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(c as u64);
            let mut x = init(&mut rng)?;
            let mut fx = log_target(&x);
            if !fx.is_finite() {
                return Err(Error::Input(format!("chain {c} starts at a point with log target {fx}")));
            }
            // proposal = step · L · z
            let mut chol = DMatrix::from_diagonal(&DVector::from_column_slice(initial_scales));
            let mut log_step = 0.0f64;
            let mut history: Vec<Vec<f64>> = Vec::with_capacity(cfg.burn_in);
            let mut kept = Vec::with_capacity(cfg.kept_per_chain());
            let mut kept_f = Vec::with_capacity(cfg.kept_per_chain());
            let mut accepted_after = 0usize;
            let mut accepted_total = 0usize;
            let reshape_at = cfg.burn_in / 2;

            for t in 0..cfg.steps {
                if t == reshape_at && p > 0 && history.len() > 10 * p {
                    if let Some(l) = empirical_cholesky(&history[history.len() / 2..]) {
                        chol = l;
                        log_step = (2.38 / (p as f64).sqrt()).ln();
                    }
                }
                let z = DVector::from_iterator(p, (0..p).map(|_| StandardNormal.sample(&mut rng)));
                let step = &chol * z * log_step.exp();
                let y: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
                let fy = log_target(&y);
                let log_ratio = fy - fx;
                let accept_prob = if log_ratio.is_nan() { 0.0 } else { log_ratio.min(0.0).exp() };
                let u: f64 = rng.random();
                let accepted = u < accept_prob;
                if accepted {
                    x = y;
                    fx = fy;
                    accepted_total += 1;
                }
                if t < cfg.burn_in {
                    let gain = 1.0 / ((t + 1) as f64).powf(0.6);
                    log_step += gain * (accept_prob - TARGET_ACCEPTANCE);
                    history.push(x.clone());
                } else {
                    if accepted {
                        accepted_after += 1;
                    }
                    if (t - cfg.burn_in) % cfg.thinning == 0 {
                        kept.push(x.clone());
                        kept_f.push(fx);
                    }
                }
            }
            if accepted_total == 0 && p > 0 {
                return Err(Error::AllRejected { chain: c });
            }
            Ok((kept, kept_f, accepted_after, log_step.exp()))
        })
        .collect();

    let mut out = ChainOutput {
        points: Vec::new(),
        log_target: Vec::new(),
        acceptance_rate: 0.0,
        step_sizes: Vec::new(),
    };
    let mut accepted = 0usize;
    for chain in chains {
        let (pts, fs, acc, step) = chain?;
        out.points.extend(pts);
        out.log_target.extend(fs);
        out.step_sizes.push(step);
        accepted += acc;
    }
    out.acceptance_rate = accepted as f64 / (cfg.chains * (cfg.steps - cfg.burn_in)) as f64;
    Ok(out)
}

fn empirical_cholesky(points: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let p = points[0].len();
    let n = points.len() as f64;
    let mut mean = vec![0.0; p];
    for x in points {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / n;
        }
    }
    let mut cov: DMatrix<f64> = DMatrix::zeros(p, p);
    for x in points {
        for i in 0..p {
            for j in 0..p {
                cov[(i, j)] += (x[i] - mean[i]) * (x[j] - mean[j]) / (n - 1.0);
            }
        }
    }
    let scale = cov.diagonal().max();
    if !(scale.is_finite() && scale > 0.0) {
        return None;
    }
    for i in 0..p {
        cov[(i, i)] += 1e-10 * scale + 1e-12;
    }
    nalgebra::Cholesky::new(cov).map(|c| c.l())
}

/// Posterior draws of the hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSampleSet {
    pub samples: Vec<HyperVector>,
    /// `log_unnormalized_posterior` at each sample.
    pub log_posts: Vec<f64>,
    pub acceptance_rate: f64,
    pub chains: usize,
    pub burn_in: usize,
    pub thinning: usize,
}

impl PosteriorSampleSet {
    /// Wraps externally produced samples (e.g. exact draws in tests).
    pub fn from_samples(samples: Vec<HyperVector>) -> Self {
        let n = samples.len();
        PosteriorSampleSet {
            samples,
            log_posts: vec![0.0; n],
            acceptance_rate: 1.0,
            chains: 1,
            burn_in: 0,
            thinning: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Every `stride`-th sample starting at `offset`.
    pub fn strided(&self, offset: usize, stride: usize) -> PosteriorSampleSet {
        let pick = |i: usize| i >= offset && (i - offset) % stride == 0;
        PosteriorSampleSet {
            samples: self.samples.iter().enumerate().filter(|(i, _)| pick(*i)).map(|(_, s)| s.clone()).collect(),
            log_posts: self.log_posts.iter().enumerate().filter(|(i, _)| pick(*i)).map(|(_, s)| *s).collect(),
            ..self.clone()
        }
    }

    /// One row per sample: `ell_1..ell_d,signal_variance,noise_variance,log_post`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.samples.first().map_or(0, HyperVector::dim);
        let mut header: Vec<String> = (1..=d).map(|i| format!("ell_{i}")).collect();
        header.extend(["signal_variance", "noise_variance", "log_post"].map(String::from));
        w.write_record(&header)?;
        for (s, lp) in self.samples.iter().zip(&self.log_posts) {
            let mut row: Vec<String> = s.as_vec().iter().map(|v| format!("{v:e}")).collect();
            row.push(format!("{lp:e}"));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Draws from `p(ϑ | y, X) ∝ p(y | X, ϑ) p(ϑ)` by adaptive Metropolis over
/// `log ϑ`. Pinned box coordinates stay fixed.
pub fn sample_posterior(data: &Dataset, family: KernelFamily, prior: &HyperPrior, cfg: &SamplerConfig) -> Result<PosteriorSampleSet> {
    if data.dim() != prior.dim() {
        return Err(Error::Dimension {
            expected: prior.dim(),
            got: data.dim(),
        });
    }
    let free = prior.free_indices();
    let full_len = prior.len();
    let base: Vec<f64> = (0..full_len).map(|i| prior.pinned_value(i).map_or(0.0, f64::ln)).collect();
    let pinned: Vec<Option<f64>> = (0..full_len).map(|i| prior.pinned_value(i)).collect();
    let embed = |z: &[f64]| {
        let mut u = base.clone();
        for (k, &i) in free.iter().enumerate() {
            u[i] = z[k];
        }
        // exp(ln v) need not round-trip to v exactly
        let raw: Vec<f64> = u.iter().zip(&pinned).map(|(x, p)| p.unwrap_or_else(|| x.exp())).collect();
        HyperVector::from_slice(&raw)
    };
    let target = |z: &[f64]| {
        let theta = embed(z);
        let lp = log_unnormalized_posterior(data, family, prior, &theta);
        if lp == f64::NEG_INFINITY {
            lp
        } else {
            lp + prior.log_space_correction(&theta)
        }
    };
    let init = |rng: &mut ChaCha8Rng| {
        for _ in 0..200 {
            let u = prior.sample_initial(rng).to_log();
            let z: Vec<f64> = free.iter().map(|&i| u[i]).collect();
            if target(&z).is_finite() {
                return Ok(z);
            }
        }
        Err(Error::Input("no initial point with finite posterior found in 200 draws".into()))
    };
    let all_scales = prior.initial_scales();
    let scales: Vec<f64> = free.iter().map(|&i| all_scales[i]).collect();
    let out = metropolis(target, init, &scales, cfg)?;

    let samples: Vec<HyperVector> = out.points.iter().map(|z| embed(z)).collect();
    let log_posts = samples
        .iter()
        .zip(&out.log_target)
        .map(|(s, f)| f - prior.log_space_correction(s))
        .collect();
    Ok(PosteriorSampleSet {
        samples,
        log_posts,
        acceptance_rate: out.acceptance_rate,
        chains: cfg.chains,
        burn_in: cfg.burn_in,
        thinning: cfg.thinning,
    })
}

/// Fraction of samples inside `[lo, hi]` (inclusive, componentwise).
pub fn posterior_mass_in_box(samples: &PosteriorSampleSet, lo: &HyperVector, hi: &HyperVector) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Input("empty sample set".into()));
    }
    if !lo.le(hi) {
        return Err(Error::Input("box lower bound exceeds upper bound".into()));
    }
    let inside = samples.samples.iter().filter(|s| lo.le(s) && s.le(hi)).count();
    Ok(inside as f64 / samples.len() as f64)
}
