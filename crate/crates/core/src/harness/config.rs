//! Experiment configuration. A TOML file is deep-merged over the defaults
//! of the chosen experiment, so any subset of keys may be given.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bounds::BetaMode;
use crate::control::{Excitation, Reference, DEFAULT_DT, DEFAULT_DURATION, DEFAULT_FILTER_BANDWIDTH, DEFAULT_GAIN_FLOOR};
use crate::error::{Error, Result};
use crate::hyper::{HyperPrior, SamplerConfig};
use crate::kernels::{HyperBox, KernelFamily};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SampleStudy,
    ViolationBenchmark,
    ControlRun,
}

/// Named hyperprior boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorPreset {
    Boston,
    Wine,
    Sarcos,
    Control,
}

/// Uniform box, isotropic bounds for the lengthscales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorBounds {
    pub lengthscale: [f64; 2],
    pub signal_variance: [f64; 2],
    pub noise_variance: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorSpec {
    Preset(PriorPreset),
    Bounds(PriorBounds),
}

impl PriorPreset {
    pub fn bounds(self) -> PriorBounds {
        let (lengthscale, signal_variance, noise_variance) = match self {
            PriorPreset::Boston => ([0.1, 100.0], [1.0, 50.0], [0.1, 100.0]),
            PriorPreset::Wine => ([1e-2, 10.0], [1e-2, 1e2], [1e-2, 1.0]),
            PriorPreset::Sarcos => ([0.1, 50.0], [0.1, 1e3], [1e-2, 80.0]),
            PriorPreset::Control => ([1e-15, 1e-2], [1e-6, 10.0], [1e-5, 1e-1]),
        };
        PriorBounds {
            lengthscale,
            signal_variance,
            noise_variance,
        }
    }
}

impl PriorSpec {
    pub fn bounds(&self) -> PriorBounds {
        match *self {
            PriorSpec::Preset(p) => p.bounds(),
            PriorSpec::Bounds(b) => b,
        }
    }

    pub fn hyper_box(&self, dim: usize) -> Result<HyperBox> {
        let b = self.bounds();
        HyperBox::uniform(
            dim,
            (b.lengthscale[0], b.lengthscale[1]),
            (b.signal_variance[0], b.signal_variance[1]),
            (b.noise_variance[0], b.noise_variance[1]),
        )
        .map_err(|e| Error::Config(format!("prior: {e}")))
    }

    pub fn prior(&self, dim: usize) -> Result<HyperPrior> {
        Ok(HyperPrior::UniformBox(self.hyper_box(dim)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleStudyConfig {
    pub dim: usize,
    /// Points per axis of the evaluation grid.
    pub grid_size: usize,
    pub domain: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub points: usize,
    pub domain: [f64; 2],
    pub lengthscale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub train_size: usize,
    pub noise_std: f64,
    pub excitation: Excitation,
    pub xi_des: f64,
    pub filter_bandwidth: f64,
    pub gain_floor: f64,
    pub initial_states: usize,
    pub initial_std: f64,
    pub duration: f64,
    pub dt: f64,
    pub reference: Reference,
    /// Write every k-th step of each trajectory.
    pub trajectory_stride: usize,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            train_size: 10,
            noise_std: 0.01,
            excitation: Excitation::default(),
            xi_des: 1.0,
            filter_bandwidth: DEFAULT_FILTER_BANDWIDTH,
            gain_floor: DEFAULT_GAIN_FLOOR,
            initial_states: 20,
            initial_std: 1.0,
            duration: DEFAULT_DURATION,
            dt: DEFAULT_DT,
            reference: Reference::Origin,
            trajectory_stride: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_path: Option<PathBuf>,
    pub seed: u64,
    pub repetitions: usize,
    pub train_sizes: Vec<usize>,
    pub n_test: usize,
    pub delta: f64,
    pub kernel: KernelFamily,
    pub beta_mode: BetaMode,
    /// `β` for the vanilla and fully Bayesian intervals.
    pub beta: f64,
    pub standardize: bool,
    pub restarts: usize,
    pub fullbayes_max_samples: usize,
    pub prior: PriorSpec,
    pub sampler: SamplerConfig,
    pub sample_study: SampleStudyConfig,
    pub synthetic: SyntheticConfig,
    pub control: ControlConfig,
}

impl ExperimentConfig {
    pub fn defaults_for(kind: ExperimentKind) -> Self {
        let mut cfg = ExperimentConfig {
            experiment: Some(kind),
            dataset_path: None,
            seed: 0,
            repetitions: 50,
            train_sizes: vec![50],
            n_test: 500,
            delta: 0.05,
            kernel: KernelFamily::SquaredExponential,
            beta_mode: BetaMode::default(),
            beta: 4.0,
            standardize: true,
            restarts: 10,
            fullbayes_max_samples: 200,
            prior: PriorSpec::Bounds(PriorBounds {
                lengthscale: [0.1, 50.0],
                signal_variance: [0.05, 20.0],
                noise_variance: [1e-3, 10.0],
            }),
            sampler: SamplerConfig::default(),
            sample_study: SampleStudyConfig {
                dim: 1,
                grid_size: 100,
                domain: [0.0, 5.0],
            },
            synthetic: SyntheticConfig {
                dim: 2,
                points: 800,
                domain: [0.0, 10.0],
                lengthscale: 2.0,
                signal_variance: 1.0,
                noise_variance: 0.1,
            },
            control: ControlConfig::default(),
        };
        match kind {
            ExperimentKind::SampleStudy => {
                cfg.repetitions = 100;
                cfg.train_sizes = vec![2, 4, 6];
                cfg.standardize = false;
                cfg.prior = PriorSpec::Bounds(PriorBounds {
                    lengthscale: [0.5, 2.0],
                    signal_variance: [0.25, 4.0],
                    noise_variance: [1e-3, 1e-2],
                });
            }
            ExperimentKind::ViolationBenchmark => {}
            ExperimentKind::ControlRun => {
                cfg.repetitions = 1;
                cfg.train_sizes = vec![10];
                cfg.standardize = false;
                cfg.fullbayes_max_samples = 50;
                cfg.prior = PriorSpec::Preset(PriorPreset::Control);
            }
        }
        cfg
    }

    /// Defaults for `kind` overridden by the TOML text `src`.
    pub fn from_toml_str(kind: ExperimentKind, src: &str) -> Result<Self> {
        let over: toml::Table = toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
        let base = toml::Table::try_from(Self::defaults_for(kind)).map_err(|e| Error::Config(e.to_string()))?;
        let mut merged = toml::Value::Table(base);
        merge(&mut merged, toml::Value::Table(over));
        let cfg: ExperimentConfig = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(k) = cfg.experiment {
            if k != kind {
                return Err(Error::Config(format!("config is for {k:?} but {kind:?} was requested")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(kind: ExperimentKind, path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(kind, &src)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.train_sizes.is_empty() || self.train_sizes.contains(&0) {
            return bad("train_sizes must be a nonempty list of positive sizes".into());
        }
        if !(self.beta > 0.0) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        match self.beta_mode {
            BetaMode::Practical { beta } if !(beta > 0.0) => return bad("practical beta must be positive".into()),
            BetaMode::Theoretical { beta_max_sqrt } if !(beta_max_sqrt > 0.0) => return bad("beta_max_sqrt must be positive".into()),
            _ => {}
        }
        if self.fullbayes_max_samples == 0 || self.n_test == 0 {
            return bad("fullbayes_max_samples and n_test must be positive".into());
        }
        self.sampler.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.prior.hyper_box(1)?;
        let s = &self.sample_study;
        if s.dim == 0 || s.grid_size < 2 || !(s.domain[1] > s.domain[0]) {
            return bad("sample_study needs dim >= 1, grid_size >= 2 and an increasing domain".into());
        }
        let y = &self.synthetic;
        if y.dim == 0 || y.points < 2 || !(y.domain[1] > y.domain[0]) || !(y.lengthscale > 0.0 && y.signal_variance > 0.0 && y.noise_variance >= 0.0) {
            return bad("synthetic dataset parameters are invalid".into());
        }
        let c = &self.control;
        if c.train_size == 0 || c.initial_states == 0 || c.trajectory_stride == 0 {
            return bad("control train_size, initial_states and trajectory_stride must be positive".into());
        }
        if !(c.xi_des > 0.0 && c.filter_bandwidth > 0.0 && c.dt > 0.0 && c.duration > 0.0 && c.noise_std >= 0.0 && c.gain_floor >= 0.0) {
            return bad("control parameters must be positive".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_default()
    }
}

/// Enum-valued keys: an override replaces the default instead of merging.
const REPLACED_KEYS: [&str; 3] = ["beta_mode", "prior", "reference"];

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if !REPLACED_KEYS.contains(&k.as_str()) => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_override_keeps_defaults() {
        let cfg = ExperimentConfig::from_toml_str(ExperimentKind::SampleStudy, "repetitions = 7\n[sampler]\nsteps = 3000\n").unwrap();
        assert_eq!(cfg.repetitions, 7);
        assert_eq!(cfg.sampler.steps, 3000);
        assert_eq!(cfg.sampler.chains, 4);
        assert_eq!(cfg.train_sizes, vec![2, 4, 6]);
    }

    #[test]
    fn preset_and_beta_mode_parse() {
        let src = "prior = \"wine\"\nbeta_mode = { theoretical = { beta_max_sqrt = 2.0 } }\nkernel = \"matern52\"\n";
        let cfg = ExperimentConfig::from_toml_str(ExperimentKind::ViolationBenchmark, src).unwrap();
        assert_eq!(cfg.prior.bounds().noise_variance, [1e-2, 1.0]);
        assert_eq!(cfg.beta_mode, BetaMode::Theoretical { beta_max_sqrt: 2.0 });
        assert_eq!(cfg.kernel, KernelFamily::Matern52);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for src in ["delta = 1.5", "repetitions = 0", "bogus = 1", "experiment = \"control_run\"", "train_sizes = []"] {
            let e = ExperimentConfig::from_toml_str(ExperimentKind::SampleStudy, src).unwrap_err();
            assert!(matches!(e, Error::Config(_)), "{src}: {e}");
        }
    }

    #[test]
    fn resolved_config_round_trips() {
        for kind in [ExperimentKind::SampleStudy, ExperimentKind::ViolationBenchmark, ExperimentKind::ControlRun] {
            let cfg = ExperimentConfig::defaults_for(kind);
            assert_eq!(ExperimentConfig::from_toml_str(kind, &cfg.to_toml()).unwrap(), cfg);
        }
    }
}
