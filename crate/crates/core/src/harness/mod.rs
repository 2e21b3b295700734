//! Experiment runners: GP-sample study, violation-rate benchmark and the
//! manipulator control runs, plus the fully Bayesian comparator.

pub mod config;
pub mod output;

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{find_bounding_pair, BoundingPair, RobustBound};
use crate::control::{self, BacksteppingController, Predictor, Trajectory};
use crate::error::{Error, Result};
use crate::gp::{maximize_log_marginal_likelihood, sample_prior_function, Dataset, GPModel};
use crate::hyper::{sample_posterior, HyperPrior, PosteriorSampleSet};
use crate::kernels::{HyperBox, HyperVector, KernelFamily, KernelSpec};

pub use config::{ExperimentConfig, ExperimentKind, PriorBounds, PriorPreset, PriorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Vanilla,
    Robust,
    FullBayes,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Vanilla, Method::Robust, Method::FullBayes];

    pub fn name(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::Robust => "robust",
            Method::FullBayes => "full_bayes",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub train_size: usize,
    pub repetition: usize,
    pub seed: u64,
    pub violation_rate: f64,
    pub wall_time: f64,
}

/// Bounding pair found in one repetition, with the working point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub train_size: usize,
    pub repetition: usize,
    pub theta0: HyperVector,
    pub pair: BoundingPair,
    pub beta_bar: f64,
    /// Whether the hyperparameters that generated the data lie in the box
    /// (sample study only).
    pub contains_truth: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StudyOutcome {
    pub rows: Vec<ResultRow>,
    pub pairs: Vec<PairRecord>,
}

impl StudyOutcome {
    pub fn mean_rate(&self, method: Method) -> f64 {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.method == method).map(|r| r.violation_rate).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    /// Rate of `method` per (train size, repetition), in row order.
    pub fn rates(&self, method: Method) -> Vec<f64> {
        self.rows.iter().filter(|r| r.method == method).map(|r| r.violation_rate).collect()
    }
}

/// Fraction of test points with `|y − μ| > β^{1/2} σ`.
pub fn violation_rate(means: &[f64], sigmas: &[f64], beta_sqrt: f64, ytest: &[f64]) -> Result<f64> {
    if ytest.is_empty() {
        return Err(Error::Input("empty test set".into()));
    }
    if means.len() != ytest.len() || sigmas.len() != ytest.len() {
        return Err(Error::Dimension {
            expected: ytest.len(),
            got: means.len().min(sigmas.len()),
        });
    }
    let bad = means.iter().zip(sigmas).zip(ytest).filter(|((m, s), y)| (*y - *m).abs() - beta_sqrt * *s > 0.0).count();
    Ok(bad as f64 / ytest.len() as f64)
}

/// Equal-weight mixture of GP posteriors, one per hyperparameter sample.
#[derive(Debug, Clone)]
pub struct MixtureModel {
    pub components: Vec<GPModel>,
}

impl MixtureModel {
    /// Uses at most `max_components` evenly strided samples. Samples whose
    /// kernel matrix cannot be factorized are skipped.
    pub fn new(samples: &PosteriorSampleSet, data: &Dataset, family: KernelFamily, max_components: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Input("no posterior samples".into()));
        }
        let stride = samples.len().div_ceil(max_components.max(1));
        let picked = samples.strided(0, stride);
        let components: Vec<GPModel> = picked
            .samples
            .par_iter()
            .filter_map(|h| match GPModel::fit(KernelSpec::new(family, h.clone()), data.clone()) {
                Ok(m) => Some(m),
                Err(e) => {
                    warn!("skipping posterior sample {:?}: {e}", h.as_vec());
                    None
                }
            })
            .collect();
        if components.is_empty() {
            return Err(Error::Factorization { jitter: crate::gp::JITTER_MAX });
        }
        Ok(MixtureModel { components })
    }

    /// Mixture mean and variance by the law of total variance.
    pub fn predict(&self, xstar: &[f64]) -> Result<(f64, f64)> {
        let n = self.components.len() as f64;
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for c in &self.components {
            let (m, v) = c.predict(xstar)?;
            m1 += m;
            m2 += v + m * m;
        }
        let mean = m1 / n;
        Ok((mean, (m2 / n - mean * mean).max(0.0)))
    }
}

impl Predictor for MixtureModel {
    fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        MixtureModel::predict(self, x)
    }
}

/// Mixture moments over all samples at `xstar`.
pub fn fully_bayesian_predict(samples: &PosteriorSampleSet, data: &Dataset, family: KernelFamily, xstar: &[f64]) -> Result<(f64, f64)> {
    MixtureModel::new(samples, data, family, samples.len())?.predict(xstar)
}

/// Reads a header row followed by `x1..xd,y` records.
pub fn load_dataset_csv(path: &Path) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let width = rdr.headers()?.len();
    if width < 2 {
        return Err(Error::Config(format!("{}: need at least one input column and a target", path.display())));
    }
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(|s| s.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| Error::Config(format!("{} record {}: {e}", path.display(), line + 1)))?;
        if vals.len() != width {
            return Err(Error::Config(format!("{} record {}: expected {width} fields", path.display(), line + 1)));
        }
        y.push(vals[width - 1]);
        rows.push(vals[..width - 1].to_vec());
    }
    if rows.is_empty() {
        return Err(Error::Config(format!("{}: no records", path.display())));
    }
    Dataset::from_rows(&rows, &y)
}

pub fn write_dataset_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (1..=data.dim()).map(|i| format!("x{i}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut row: Vec<String> = data.row(i).iter().map(|v| v.to_string()).collect();
        row.push(data.y[i].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// GP draw at `points` uniformly random locations plus Gaussian noise.
pub fn synthetic_dataset(cfg: &config::SyntheticConfig, family: KernelFamily, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(cfg.points, cfg.dim, |_, _| rng.random_range(cfg.domain[0]..cfg.domain[1]));
    let spec = KernelSpec::new(family, HyperVector::isotropic(cfg.dim, cfg.lengthscale, cfg.signal_variance, cfg.noise_variance)?);
    let f = sample_prior_function(&spec, &x, rng.random())?;
    let noise = Normal::new(0.0, cfg.noise_variance.sqrt()).map_err(|e| Error::Input(e.to_string()))?;
    let y = DVector::from_iterator(cfg.points, f.iter().map(|v| v + noise.sample(&mut rng)));
    Dataset::new(x, y)
}

/// `(y − mean) / sd` with the training split's statistics.
struct Standardizer {
    mean: f64,
    sd: f64,
}

impl Standardizer {
    fn fit(y: &[f64], enabled: bool) -> Self {
        if !enabled || y.len() < 2 {
            return Standardizer { mean: 0.0, sd: 1.0 };
        }
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        Standardizer { mean, sd }
    }

    fn apply(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| (v - self.mean) / self.sd).collect()
    }
}

/// Fitted working point, posterior samples and robust bound for one
/// training set.
pub struct RobustFit {
    pub theta0: HyperVector,
    pub samples: PosteriorSampleSet,
    pub bound: RobustBound,
    pub ml_seconds: f64,
    pub sampling_seconds: f64,
}

pub fn fit_robust(train: &Dataset, cfg: &ExperimentConfig, prior_box: &HyperBox, seed: u64) -> Result<RobustFit> {
    let t = Instant::now();
    let theta0 = maximize_log_marginal_likelihood(train, cfg.kernel, prior_box, cfg.restarts, seed)?;
    let ml_seconds = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let sampler = crate::hyper::SamplerConfig { seed, ..cfg.sampler };
    let samples = sample_posterior(train, cfg.kernel, &HyperPrior::UniformBox(prior_box.clone()), &sampler)?;
    let pair = find_bounding_pair(&samples, &theta0, cfg.delta)?;
    let bound = RobustBound::new(train, cfg.kernel, &theta0, pair, cfg.beta_mode)?;
    Ok(RobustFit {
        theta0,
        samples,
        bound,
        ml_seconds,
        sampling_seconds: t.elapsed().as_secs_f64(),
    })
}

/// Violation rates of the three methods for one repetition.
fn evaluate_methods(train: &Dataset, xtest: &[Vec<f64>], ytest: &[f64], cfg: &ExperimentConfig, prior_box: &HyperBox, seed: u64) -> Result<(Vec<(Method, f64, f64)>, RobustFit)> {
    let fit = fit_robust(train, cfg, prior_box, seed)?;
    let beta_sqrt = cfg.beta.sqrt();
    let t = Instant::now();
    let mixture = MixtureModel::new(&fit.samples, train, cfg.kernel, cfg.fullbayes_max_samples)?;
    let mix_build = t.elapsed().as_secs_f64();

    let mut out = Vec::with_capacity(3);
    for method in Method::ALL {
        let t = Instant::now();
        let mut means = Vec::with_capacity(xtest.len());
        let mut sigmas = Vec::with_capacity(xtest.len());
        for x in xtest {
            let (m, s) = match method {
                Method::Vanilla => {
                    let (m, v) = fit.bound.working_model.predict(x)?;
                    (m, v.sqrt())
                }
                Method::Robust => (fit.bound.working_model.mean(x)?, fit.bound.envelope_model.std(x)?),
                Method::FullBayes => {
                    let (m, v) = mixture.predict(x)?;
                    (m, v.sqrt())
                }
            };
            means.push(m);
            sigmas.push(s);
        }
        let scale = if method == Method::Robust { fit.bound.beta_bar_sqrt() } else { beta_sqrt };
        let rate = violation_rate(&means, &sigmas, scale, ytest)?;
        let predict_time = t.elapsed().as_secs_f64();
        let wall = match method {
            Method::Vanilla => fit.ml_seconds + predict_time,
            Method::Robust => fit.ml_seconds + fit.sampling_seconds + predict_time,
            Method::FullBayes => fit.sampling_seconds + mix_build + predict_time,
        };
        out.push((method, rate, wall));
    }
    Ok((out, fit))
}

fn grid_points(dim: usize, size: usize, domain: [f64; 2]) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = (0..size).map(|i| domain[0] + (domain[1] - domain[0]) * i as f64 / (size - 1) as f64).collect();
    let total = size.pow(dim as u32);
    (0..total)
        .map(|mut k| {
            (0..dim)
                .map(|_| {
                    let v = axis[k % size];
                    k /= size;
                    v
                })
                .collect()
        })
        .collect()
}

fn collect_outcomes(results: Vec<Result<(Vec<ResultRow>, Vec<PairRecord>)>>) -> Result<StudyOutcome> {
    let mut out = StudyOutcome::default();
    for r in results {
        let (rows, pairs) = r?;
        out.rows.extend(rows);
        out.pairs.extend(pairs);
    }
    Ok(out)
}

/// Per repetition: draw hyperparameters uniformly from the prior box and a
/// function from the GP prior on a grid, observe `N` noisy grid values, and
/// score all three methods against the noise-free function on the grid.
pub fn run_sample_study(cfg: &ExperimentConfig) -> Result<StudyOutcome> {
    let s = &cfg.sample_study;
    let prior_box = cfg.prior.hyper_box(s.dim)?;
    let grid = grid_points(s.dim, s.grid_size, s.domain);
    if let Some(&n) = cfg.train_sizes.iter().find(|&&n| n > grid.len()) {
        return Err(Error::Config(format!("train size {n} exceeds the {} grid points", grid.len())));
    }
    let gx = DMatrix::from_fn(grid.len(), s.dim, |i, j| grid[i][j]);

    let results: Vec<_> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| -> Result<(Vec<ResultRow>, Vec<PairRecord>)> {
            let seed = cfg.seed + rep as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lo = prior_box.lower.as_vec();
            let hi = prior_box.upper.as_vec();
            let truth = HyperVector::from_slice(&lo.iter().zip(&hi).map(|(a, b)| if a == b { *a } else { rng.random_range(*a..*b) }).collect::<Vec<_>>());
            let f = sample_prior_function(&KernelSpec::new(cfg.kernel, truth.clone()), &gx, rng.random())?;
            let noise = Normal::new(0.0, truth.noise_variance.sqrt()).map_err(|e| Error::Input(e.to_string()))?;
            let mut order: Vec<usize> = (0..grid.len()).collect();
            order.shuffle(&mut rng);
            let eps: Vec<f64> = (0..grid.len()).map(|_| noise.sample(&mut rng)).collect();

            let mut rows = Vec::new();
            let mut pairs = Vec::new();
            for &n in &cfg.train_sizes {
                let idx = &order[..n];
                let y: Vec<f64> = idx.iter().map(|&i| f[i] + eps[i]).collect();
                let scaler = Standardizer::fit(&y, cfg.standardize);
                let train = Dataset::from_rows(&idx.iter().map(|&i| grid[i].clone()).collect::<Vec<_>>(), &scaler.apply(&y))?;
                let ytest = scaler.apply(f.as_slice());
                let (rates, fit) = evaluate_methods(&train, &grid, &ytest, cfg, &prior_box, seed)?;
                info!("sample study rep {rep} N={n}: {:?}", rates.iter().map(|r| r.1).collect::<Vec<_>>());
                for (method, rate, wall) in rates {
                    rows.push(ResultRow {
                        method,
                        train_size: n,
                        repetition: rep,
                        seed,
                        violation_rate: rate,
                        wall_time: wall,
                    });
                }
                pairs.push(PairRecord {
                    train_size: n,
                    repetition: rep,
                    contains_truth: Some(fit.bound.pair.contains(&truth)),
                    theta0: fit.theta0,
                    beta_bar: fit.bound.beta_bar,
                    pair: fit.bound.pair,
                });
            }
            Ok((rows, pairs))
        })
        .collect();
    collect_outcomes(results)
}

/// Loads `dataset_path`, or generates the synthetic GP dataset when none is
/// configured.
pub fn benchmark_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.dataset_path {
        Some(p) => load_dataset_csv(p),
        None => synthetic_dataset(&cfg.synthetic, cfg.kernel, cfg.seed),
    }
}

/// Per repetition: random train/test split, then violation rates of the
/// three methods on the test targets.
pub fn run_violation_benchmark(cfg: &ExperimentConfig, data: &Dataset) -> Result<StudyOutcome> {
    let prior_box = cfg.prior.hyper_box(data.dim())?;
    if let Some(&n) = cfg.train_sizes.iter().find(|&&n| n >= data.len()) {
        return Err(Error::Config(format!("train size {n} leaves no test points in a dataset of {}", data.len())));
    }
    let results: Vec<_> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| -> Result<(Vec<ResultRow>, Vec<PairRecord>)> {
            let seed = cfg.seed + rep as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rows = Vec::new();
            let mut pairs = Vec::new();
            for &n in &cfg.train_sizes {
                let mut order: Vec<usize> = (0..data.len()).collect();
                order.shuffle(&mut rng);
                let n_test = cfg.n_test.min(data.len() - n);
                let tr = data.subset(&order[..n]);
                let te = data.subset(&order[n..n + n_test]);
                let scaler = Standardizer::fit(tr.y.as_slice(), cfg.standardize);
                let train = Dataset::new(tr.x.clone(), DVector::from_vec(scaler.apply(tr.y.as_slice())))?;
                let xtest: Vec<Vec<f64>> = (0..te.len()).map(|i| te.row(i)).collect();
                let ytest = scaler.apply(te.y.as_slice());
                let (rates, fit) = evaluate_methods(&train, &xtest, &ytest, cfg, &prior_box, seed)?;
                info!("benchmark rep {rep} N={n}: {:?}", rates.iter().map(|r| r.1).collect::<Vec<_>>());
                for (method, rate, wall) in rates {
                    rows.push(ResultRow {
                        method,
                        train_size: n,
                        repetition: rep,
                        seed,
                        violation_rate: rate,
                        wall_time: wall,
                    });
                }
                pairs.push(PairRecord {
                    train_size: n,
                    repetition: rep,
                    contains_truth: None,
                    theta0: fit.theta0,
                    beta_bar: fit.bound.beta_bar,
                    pair: fit.bound.pair,
                });
            }
            Ok((rows, pairs))
        })
        .collect();
    collect_outcomes(results)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GainPolicy {
    Robust,
    Vanilla,
    FullBayes,
}

impl GainPolicy {
    pub const ALL: [GainPolicy; 3] = [GainPolicy::Robust, GainPolicy::Vanilla, GainPolicy::FullBayes];

    pub fn name(self) -> &'static str {
        match self {
            GainPolicy::Robust => "robust",
            GainPolicy::Vanilla => "vanilla",
            GainPolicy::FullBayes => "full_bayes",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ControlRunRecord {
    pub policy: GainPolicy,
    pub index: usize,
    pub initial_state: Vec<f64>,
    /// Largest error norm for `t > duration / 2`; infinite after divergence.
    pub max_error_post_transient: f64,
    pub diverged: bool,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecileRow {
    pub policy: GainPolicy,
    pub time: f64,
    pub p10: f64,
    pub median: f64,
    pub p90: f64,
}

#[derive(Debug, Clone)]
pub struct ControlOutcome {
    pub runs: Vec<ControlRunRecord>,
    pub summary: Vec<DecileRow>,
    pub pairs: Vec<PairRecord>,
}

impl ControlOutcome {
    pub fn median_post_transient(&self, policy: GainPolicy) -> f64 {
        let mut v: Vec<f64> = self.runs.iter().filter(|r| r.policy == policy).map(|r| r.max_error_post_transient).collect();
        median(&mut v)
    }
}

fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if v[hi].is_infinite() || v[lo].is_infinite() {
        return if pos - lo as f64 > 0.5 { v[hi] } else { v[lo] };
    }
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    quantile_sorted(v, 0.5)
}

/// The three controllers built from the per-subsystem fits.
pub fn build_controllers(fits: &[RobustFit], data: &[Dataset], cfg: &ExperimentConfig) -> Result<Vec<(GainPolicy, BacksteppingController)>> {
    let c = &cfg.control;
    let working: Vec<Arc<dyn Predictor>> = fits.iter().map(|f| Arc::new(f.bound.working_model.clone()) as Arc<dyn Predictor>).collect();
    let envelopes: Vec<Arc<dyn Predictor>> = fits.iter().map(|f| Arc::new(f.bound.envelope_model.clone()) as Arc<dyn Predictor>).collect();
    let mixtures: Vec<Arc<dyn Predictor>> = fits
        .iter()
        .zip(data)
        .map(|(f, d)| MixtureModel::new(&f.samples, d, cfg.kernel, cfg.fullbayes_max_samples).map(|m| Arc::new(m) as Arc<dyn Predictor>))
        .collect::<Result<_>>()?;
    let m = fits.len();
    let robust_betas: Vec<f64> = fits.iter().map(|f| f.bound.beta_bar).collect();
    let mk = |models: Vec<Arc<dyn Predictor>>, env: Vec<Arc<dyn Predictor>>, betas: Vec<f64>| -> Result<BacksteppingController> {
        let mut ctrl = BacksteppingController::new(models, env, betas, c.xi_des, c.filter_bandwidth)?;
        ctrl.gain_floor = c.gain_floor;
        Ok(ctrl)
    };
    Ok(vec![
        (GainPolicy::Robust, mk(working.clone(), envelopes, robust_betas)?),
        (GainPolicy::Vanilla, mk(working.clone(), working, vec![cfg.beta; m])?),
        (GainPolicy::FullBayes, mk(mixtures.clone(), mixtures, vec![cfg.beta; m])?),
    ])
}

/// Learns the manipulator's unknown dynamics from `N` noisy samples and
/// simulates every initial condition under the robust, vanilla and fully
/// Bayesian gain policies.
pub fn run_control_experiment(cfg: &ExperimentConfig) -> Result<ControlOutcome> {
    let c = &cfg.control;
    let system = control::manipulator_system();
    let m = system.m();
    let data = control::collect_training_data(&system, &c.excitation, c.train_size, c.noise_std, cfg.seed, c.dt)?;
    let fits: Vec<RobustFit> = data
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let prior_box = cfg.prior.hyper_box(d.dim())?;
            fit_robust(d, cfg, &prior_box, cfg.seed.wrapping_add(1000 * (i as u64 + 1)))
        })
        .collect::<Result<_>>()?;
    let pairs: Vec<PairRecord> = fits
        .iter()
        .enumerate()
        .map(|(i, f)| PairRecord {
            train_size: c.train_size,
            repetition: i,
            theta0: f.theta0.clone(),
            pair: f.bound.pair.clone(),
            beta_bar: f.bound.beta_bar,
            contains_truth: None,
        })
        .collect();
    for (i, f) in fits.iter().enumerate() {
        info!("subsystem {}: theta0 {:?}, envelope {:?}", i + 1, f.theta0.as_vec(), f.bound.pair.envelope_hyper().as_vec());
    }
    let controllers = build_controllers(&fits, &data, cfg)?;
    let x0s = control::random_initial_states(m, c.initial_states, c.initial_std, cfg.seed.wrapping_add(1));

    let jobs: Vec<(GainPolicy, usize)> = GainPolicy::ALL.iter().flat_map(|&p| (0..x0s.len()).map(move |i| (p, i))).collect();
    let runs: Vec<ControlRunRecord> = jobs
        .par_iter()
        .map(|&(policy, i)| -> Result<ControlRunRecord> {
            let ctrl = &controllers.iter().find(|(p, _)| *p == policy).expect("all policies built").1;
            let (trajectory, diverged) = match control::simulate(&system, ctrl, c.reference, &x0s[i], c.duration, c.dt) {
                Ok(t) => (t, false),
                Err(f) if matches!(f.error, Error::Diverged { .. }) => (f.partial, true),
                Err(f) => return Err(f.error),
            };
            let max_error_post_transient = if diverged { f64::INFINITY } else { trajectory.max_error_after(c.duration / 2.0) };
            Ok(ControlRunRecord {
                policy,
                index: i,
                initial_state: x0s[i].clone(),
                max_error_post_transient,
                diverged,
                trajectory,
            })
        })
        .collect::<Result<_>>()?;

    let steps = (c.duration / c.dt).round() as usize + 1;
    let mut summary = Vec::new();
    for policy in GainPolicy::ALL {
        let mine: Vec<&ControlRunRecord> = runs.iter().filter(|r| r.policy == policy).collect();
        for k in (0..steps).step_by(c.trajectory_stride) {
            let mut v: Vec<f64> = mine.iter().map(|r| r.trajectory.error_norms.get(k).copied().unwrap_or(f64::INFINITY)).collect();
            v.sort_by(f64::total_cmp);
            summary.push(DecileRow {
                policy,
                time: k as f64 * c.dt,
                p10: quantile_sorted(&v, 0.1),
                median: quantile_sorted(&v, 0.5),
                p90: quantile_sorted(&v, 0.9),
            });
        }
    }
    Ok(ControlOutcome { runs, summary, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn violation_rate_cases() {
        assert_eq!(violation_rate(&[1.0, 2.0], &[0.1, 0.1], 2.0, &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(violation_rate(&[0.0, 0.0], &[0.0, 0.0], 2.0, &[0.1, -0.1]).unwrap(), 1.0);
        assert_eq!(violation_rate(&[0.0, 0.0], &[1.0, 1.0], 2.0, &[0.5, 3.0]).unwrap(), 0.5);
        assert!(violation_rate(&[], &[], 2.0, &[]).is_err());
        assert!(violation_rate(&[0.0], &[1.0, 1.0], 2.0, &[0.0]).is_err());
    }

    fn toy() -> Dataset {
        Dataset::from_rows(&[vec![0.0], vec![1.0], vec![2.5]], &[0.3, -0.4, 1.0]).unwrap()
    }

    #[test]
    fn single_sample_mixture_is_that_model() {
        let h = HyperVector::new(vec![0.8], 1.5, 0.05).unwrap();
        let set = PosteriorSampleSet::from_samples(vec![h.clone()]);
        let (m, v) = fully_bayesian_predict(&set, &toy(), KernelFamily::SquaredExponential, &[0.7]).unwrap();
        let gp = GPModel::fit(KernelSpec::new(KernelFamily::SquaredExponential, h), toy()).unwrap();
        let (m0, v0) = gp.predict(&[0.7]).unwrap();
        assert_relative_eq!(m, m0, max_relative = 1e-14);
        assert_relative_eq!(v, v0, max_relative = 1e-12);
    }

    #[test]
    fn two_component_mixture() {
        let a = HyperVector::new(vec![0.8], 1.5, 0.05).unwrap();
        let b = HyperVector::new(vec![2.0], 0.5, 0.2).unwrap();
        let set = PosteriorSampleSet::from_samples(vec![a.clone(), b.clone()]);
        let x = [1.7];
        let (m, v) = fully_bayesian_predict(&set, &toy(), KernelFamily::SquaredExponential, &x).unwrap();
        let p = |h: HyperVector| GPModel::fit(KernelSpec::new(KernelFamily::SquaredExponential, h), toy()).unwrap().predict(&x).unwrap();
        let (ma, va) = p(a);
        let (mb, vb) = p(b);
        let mean = 0.5 * (ma + mb);
        assert!((m - mean).abs() < 1e-12);
        assert!((v - (0.5 * (va + vb) + 0.25 * (ma - mb).powi(2))).abs() < 1e-12);
        assert!(v >= 0.5 * (va + vb));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let d = Dataset::from_rows(&[vec![0.5, 1.0], vec![-2.0, 3.25]], &[1.5, -0.125]).unwrap();
        write_dataset_csv(&d, &p).unwrap();
        assert_eq!(load_dataset_csv(&p).unwrap(), d);
        std::fs::write(&p, "x1,y\n1.0,abc\n").unwrap();
        assert!(matches!(load_dataset_csv(&p), Err(Error::Config(_))));
        assert!(matches!(load_dataset_csv(&dir.path().join("missing.csv")), Err(Error::Config(_))));
    }

    #[test]
    fn grid_enumeration() {
        let g = grid_points(2, 3, [0.0, 1.0]);
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], vec![0.0, 0.0]);
        assert_eq!(g[8], vec![1.0, 1.0]);
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_relative_eq!(quantile_sorted(&v, 0.1), 1.4);
        assert_eq!(median(&mut [3.0, f64::INFINITY, 1.0]), 3.0);
    }
}
