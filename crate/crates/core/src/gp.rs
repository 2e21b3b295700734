//! Exact GP regression with a zero prior mean.

use std::f64::consts::PI;

use log::debug;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{HyperBox, HyperVector, KernelFamily, KernelSpec};
use crate::optimize::{nelder_mead, NelderMeadOptions};

/// First jitter tried (relative to `σ_f²`) when a factorization fails.
pub const JITTER_START: f64 = 1e-10;
/// Largest jitter tried (relative to `σ_f²`).
pub const JITTER_MAX: f64 = 1e-4;
/// Negative variances above `-VARIANCE_ROUNDOFF·σ_f²` are clamped to zero.
pub const VARIANCE_ROUNDOFF: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// N×d inputs, one row per observation.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Input(format!("{} input rows but {} targets", x.nrows(), y.len())));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Input("dataset contains non-finite values".into()));
        }
        Ok(Dataset { x, y })
    }

    pub fn empty(dim: usize) -> Self {
        Dataset {
            x: DMatrix::zeros(0, dim),
            y: DVector::zeros(0),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Input("ragged input rows".into()));
        }
        let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self::new(x, DVector::from_column_slice(y))
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// Rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: self.y.select_rows(idx),
        }
    }
}

/// Cholesky of `K + (σ_n² + jitter)I`, escalating the jitter on failure.
pub(crate) fn factorize(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut k = spec.gram(x)?;
    for i in 0..k.nrows() {
        k[(i, i)] += spec.hyper.noise_variance;
    }
    jittered_cholesky(k, spec.hyper.signal_variance)
}

pub(crate) fn jittered_cholesky(k: DMatrix<f64>, scale: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(k.clone()) {
        return Ok((c, 0.0));
    }
    let mut jitter = JITTER_START * scale;
    loop {
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(kj) {
            debug!("cholesky needed jitter {jitter:e}");
            return Ok((c, jitter));
        }
        if jitter >= JITTER_MAX * scale {
            return Err(Error::Factorization { jitter });
        }
        jitter = (jitter * 2.0).min(JITTER_MAX * scale);
    }
}

/// A GP conditioned on a dataset at fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct GPModel {
    spec: KernelSpec,
    data: Dataset,
    factor: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl GPModel {
    pub fn fit(spec: KernelSpec, data: Dataset) -> Result<Self> {
        spec.hyper.validate()?;
        if data.dim() != spec.dim() && !(data.is_empty() && data.dim() == 0) {
            return Err(Error::Dimension {
                expected: spec.dim(),
                got: data.dim(),
            });
        }
        if data.is_empty() {
            return Ok(GPModel {
                data: Dataset::empty(spec.dim()),
                spec,
                factor: None,
                alpha: DVector::zeros(0),
                jitter: 0.0,
            });
        }
        let (chol, jitter) = factorize(&spec, &data.x)?;
        let alpha = chol.solve(&data.y);
        Ok(GPModel {
            spec,
            data,
            factor: Some(chol),
            alpha,
            jitter,
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn hyper(&self) -> &HyperVector {
        &self.spec.hyper
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    /// Jitter that was added to the diagonal during fitting.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn mean(&self, xstar: &[f64]) -> Result<f64> {
        if self.data.is_empty() {
            self.check_point(xstar)?;
            return Ok(0.0);
        }
        let k = self.spec.cross(&self.data.x, xstar)?;
        Ok(k.dot(&self.alpha))
    }

    /// Latent-function variance at `xstar`, clamped to `[0, σ_f²]`.
    pub fn variance(&self, xstar: &[f64]) -> Result<f64> {
        let sf2 = self.spec.hyper.signal_variance;
        let Some(chol) = &self.factor else {
            self.check_point(xstar)?;
            return Ok(sf2);
        };
        let k = self.spec.cross(&self.data.x, xstar)?;
        let v = chol.l_dirty().solve_lower_triangular(&k).expect("cholesky factor has a nonzero diagonal");
        clamp_variance(sf2 - v.norm_squared(), sf2)
    }

    /// Mean and variance sharing one kernel-vector evaluation.
    pub fn predict(&self, xstar: &[f64]) -> Result<(f64, f64)> {
        let sf2 = self.spec.hyper.signal_variance;
        let Some(chol) = &self.factor else {
            self.check_point(xstar)?;
            return Ok((0.0, sf2));
        };
        let k = self.spec.cross(&self.data.x, xstar)?;
        let mean = k.dot(&self.alpha);
        let v = chol.l_dirty().solve_lower_triangular(&k).expect("cholesky factor has a nonzero diagonal");
        Ok((mean, clamp_variance(sf2 - v.norm_squared(), sf2)?))
    }

    pub fn std(&self, xstar: &[f64]) -> Result<f64> {
        Ok(self.variance(xstar)?.sqrt())
    }

    /// Log marginal likelihood of the training targets.
    pub fn log_marginal_likelihood(&self) -> f64 {
        match &self.factor {
            None => 0.0,
            Some(chol) => lml_from_factor(chol, &self.data.y, &self.alpha),
        }
    }

    fn check_point(&self, xstar: &[f64]) -> Result<()> {
        if xstar.len() != self.spec.dim() {
            return Err(Error::Dimension {
                expected: self.spec.dim(),
                got: xstar.len(),
            });
        }
        Ok(())
    }
}

fn clamp_variance(var: f64, sf2: f64) -> Result<f64> {
    if var >= 0.0 {
        Ok(var.min(sf2))
    } else if var > -VARIANCE_ROUNDOFF * sf2 {
        Ok(0.0)
    } else {
        Err(Error::NegativeVariance { value: var })
    }
}

fn lml_from_factor(chol: &Cholesky<f64, Dyn>, y: &DVector<f64>, alpha: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    let half_logdet: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    -0.5 * y.dot(alpha) - half_logdet - 0.5 * n * (2.0 * PI).ln()
}

pub fn fit(spec: KernelSpec, data: Dataset) -> Result<GPModel> {
    GPModel::fit(spec, data)
}

pub fn posterior_mean(model: &GPModel, xstar: &[f64]) -> Result<f64> {
    model.mean(xstar)
}

pub fn posterior_var(model: &GPModel, xstar: &[f64]) -> Result<f64> {
    model.variance(xstar)
}

/// `log p(y | X, ϑ) = -½ yᵀ(K+σ_n²I)⁻¹y - ½ log|K+σ_n²I| - (N/2) log 2π`.
pub fn log_marginal_likelihood(spec: &KernelSpec, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Input("log marginal likelihood needs at least one observation".into()));
    }
    let (chol, _) = factorize(spec, &data.x)?;
    let alpha = chol.solve(&data.y);
    Ok(lml_from_factor(&chol, &data.y, &alpha))
}

/// LML at a log-space hyperparameter point; `-∞` where factorization fails.
pub(crate) fn lml_at_log(family: KernelFamily, data: &Dataset, u: &[f64]) -> f64 {
    let spec = KernelSpec::new(family, HyperVector::from_log(u));
    log_marginal_likelihood(&spec, data).unwrap_or(f64::NEG_INFINITY)
}

/// Best point found by multi-start Nelder–Mead in log space. Initial points
/// are uniform in log space inside `bounds`.
pub fn maximize_log_marginal_likelihood(
    data: &Dataset,
    family: KernelFamily,
    bounds: &HyperBox,
    restarts: usize,
    seed: u64,
) -> Result<HyperVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<HyperVector> = (0..restarts.max(1)).map(|_| bounds.sample_log_uniform(&mut rng)).collect();
    maximize_log_marginal_likelihood_from(data, family, bounds, &starts)
}

/// Like [`maximize_log_marginal_likelihood`] with explicit starting points.
pub fn maximize_log_marginal_likelihood_from(
    data: &Dataset,
    family: KernelFamily,
    bounds: &HyperBox,
    starts: &[HyperVector],
) -> Result<HyperVector> {
    if data.dim() != bounds.dim() {
        return Err(Error::Dimension {
            expected: bounds.dim(),
            got: data.dim(),
        });
    }
    if starts.is_empty() {
        return Err(Error::Input("at least one starting point is required".into()));
    }
    let lo = bounds.log_lower();
    let hi = bounds.log_upper();
    let free = bounds.free_indices();
    if free.is_empty() || data.is_empty() {
        return Ok(bounds.clamp(&starts[0]));
    }
    let lo_free: Vec<f64> = free.iter().map(|&i| lo[i]).collect();
    let hi_free: Vec<f64> = free.iter().map(|&i| hi[i]).collect();
    let step: Vec<f64> = lo_free.iter().zip(&hi_free).map(|(a, b)| (0.1 * (b - a)).clamp(1e-3, 1.0)).collect();

    let results: Vec<(Vec<f64>, f64)> = starts
        .par_iter()
        .map(|s| {
            let base = bounds.clamp(s).to_log();
            let embed = |z: &[f64]| {
                let mut u = base.clone();
                for (k, &i) in free.iter().enumerate() {
                    u[i] = z[k];
                }
                u
            };
            let z0: Vec<f64> = free.iter().map(|&i| base[i]).collect();
            let objective = |z: &[f64]| -lml_at_log(family, data, &embed(z));
            let m = nelder_mead(objective, &z0, &step, &lo_free, &hi_free, NelderMeadOptions::default());
            (embed(&m.x), -m.value)
        })
        .collect();
    let (best_u, best_val) = results
        .into_iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one start");
    debug!("LML optimum {best_val:.6} over {} starts", starts.len());
    Ok(bounds.clamp(&HyperVector::from_log(&best_u)))
}

/// Draw from the GP prior on the rows of `grid`.
pub fn sample_prior_function(spec: &KernelSpec, grid: &DMatrix<f64>, seed: u64) -> Result<DVector<f64>> {
    if grid.nrows() == 0 {
        return Err(Error::Input("grid must contain at least one point".into()));
    }
    let (chol, _) = jittered_cholesky(spec.gram(grid)?, spec.hyper.signal_variance)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DVector::from_iterator(grid.nrows(), (0..grid.nrows()).map(|_| StandardNormal.sample(&mut rng)));
    Ok(chol.l() * z)
}
