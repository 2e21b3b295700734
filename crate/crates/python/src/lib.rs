use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use robust_gp::bounds::{find_bounding_pair, BetaMode, RobustBound};
use robust_gp::error::Error;
use robust_gp::gp::{maximize_log_marginal_likelihood, Dataset, GPModel};
use robust_gp::harness::{self, ExperimentConfig, ExperimentKind, Method};
use robust_gp::hyper::{sample_posterior, HyperPrior, SamplerConfig};
use robust_gp::kernels::{HyperBox, HyperVector, KernelFamily, KernelSpec};
use robust_gp::oracles;

fn py_err(e: Error) -> PyErr {
    if e.is_numerical() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn family(name: &str) -> PyResult<KernelFamily> {
    match name {
        "se" | "squared_exponential" => Ok(KernelFamily::SquaredExponential),
        "matern52" => Ok(KernelFamily::Matern52),
        other => Err(PyValueError::new_err(format!("unknown kernel {other:?}"))),
    }
}

fn dataset(x: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<Dataset> {
    Dataset::from_rows(&x, &y).map_err(py_err)
}

/// Kernel hyperparameters `[ℓ_1..ℓ_d, σ_f², σ_n²]`.
#[pyclass(name = "Hyper", skip_from_py_object)]
#[derive(Clone)]
struct PyHyper {
    inner: HyperVector,
}

#[pymethods]
impl PyHyper {
    #[new]
    fn new(lengthscales: Vec<f64>, signal_variance: f64, noise_variance: f64) -> PyResult<Self> {
        let inner = HyperVector::new(lengthscales, signal_variance, noise_variance).map_err(py_err)?;
        Ok(PyHyper { inner })
    }

    #[getter]
    fn lengthscales(&self) -> Vec<f64> {
        self.inner.lengthscales.clone()
    }

    #[getter]
    fn signal_variance(&self) -> f64 {
        self.inner.signal_variance
    }

    #[getter]
    fn noise_variance(&self) -> f64 {
        self.inner.noise_variance
    }

    fn __repr__(&self) -> String {
        format!("Hyper(lengthscales={:?}, signal_variance={}, noise_variance={})", self.inner.lengthscales, self.inner.signal_variance, self.inner.noise_variance)
    }
}

#[pyclass(name = "GaussianProcess")]
struct PyGaussianProcess {
    model: GPModel,
}

#[pymethods]
impl PyGaussianProcess {
    #[new]
    #[pyo3(signature = (x, y, hyper, kernel = "se"))]
    fn new(x: Vec<Vec<f64>>, y: Vec<f64>, hyper: PyRef<'_, PyHyper>, kernel: &str) -> PyResult<Self> {
        let spec = KernelSpec::new(family(kernel)?, hyper.inner.clone());
        let model = GPModel::fit(spec, dataset(x, y)?).map_err(py_err)?;
        Ok(PyGaussianProcess { model })
    }

    /// Posterior mean and variance at one point.
    fn predict(&self, x: Vec<f64>) -> PyResult<(f64, f64)> {
        self.model.predict(&x).map_err(py_err)
    }

    fn log_marginal_likelihood(&self) -> f64 {
        self.model.log_marginal_likelihood()
    }
}

/// Maximum-likelihood hyperparameters inside a log-uniform box.
#[pyfunction]
#[pyo3(signature = (x, y, lengthscale, signal_variance, noise_variance, kernel = "se", restarts = 10, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn fit_hyper(
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    lengthscale: (f64, f64),
    signal_variance: (f64, f64),
    noise_variance: (f64, f64),
    kernel: &str,
    restarts: usize,
    seed: u64,
) -> PyResult<PyHyper> {
    let data = dataset(x, y)?;
    let bx = HyperBox::uniform(data.dim(), lengthscale, signal_variance, noise_variance).map_err(py_err)?;
    let inner = maximize_log_marginal_likelihood(&data, family(kernel)?, &bx, restarts, seed).map_err(py_err)?;
    Ok(PyHyper { inner })
}

/// Working GP at the ML estimate with an interval that holds over a
/// posterior-credible box of hyperparameters.
#[pyclass(name = "RobustBound")]
struct PyRobustBound {
    inner: RobustBound,
}

#[pymethods]
impl PyRobustBound {
    #[new]
    #[pyo3(signature = (x, y, lengthscale, signal_variance, noise_variance, delta = 0.05, beta = 4.0, kernel = "se", restarts = 10, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        lengthscale: (f64, f64),
        signal_variance: (f64, f64),
        noise_variance: (f64, f64),
        delta: f64,
        beta: f64,
        kernel: &str,
        restarts: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let fam = family(kernel)?;
        let data = dataset(x, y)?;
        let bx = HyperBox::uniform(data.dim(), lengthscale, signal_variance, noise_variance).map_err(py_err)?;
        let theta0 = maximize_log_marginal_likelihood(&data, fam, &bx, restarts, seed).map_err(py_err)?;
        let sampler = SamplerConfig { seed, ..Default::default() };
        let samples = sample_posterior(&data, fam, &HyperPrior::UniformBox(bx), &sampler).map_err(py_err)?;
        let pair = find_bounding_pair(&samples, &theta0, delta).map_err(py_err)?;
        let inner = RobustBound::new(&data, fam, &theta0, pair, BetaMode::Practical { beta }).map_err(py_err)?;
        Ok(PyRobustBound { inner })
    }

    fn interval(&self, x: Vec<f64>) -> PyResult<(f64, f64)> {
        self.inner.interval(&x).map_err(py_err)
    }

    fn vanilla_interval(&self, x: Vec<f64>) -> PyResult<(f64, f64)> {
        robust_gp::bounds::vanilla_interval(&self.inner.working_model, self.inner.beta_bar_sqrt(), &x).map_err(py_err)
    }

    #[getter]
    fn theta0(&self) -> PyHyper {
        PyHyper {
            inner: self.inner.working_model.hyper().clone(),
        }
    }

    #[getter]
    fn lower(&self) -> PyHyper {
        PyHyper { inner: self.inner.pair.lower.clone() }
    }

    #[getter]
    fn upper(&self) -> PyHyper {
        PyHyper { inner: self.inner.pair.upper.clone() }
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.pair.gamma
    }

    #[getter]
    fn beta_bar(&self) -> f64 {
        self.inner.beta_bar
    }
}

/// Runs the randomized check suite; one dict per check.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn run_oracles<'py>(py: Python<'py>, seed: u64) -> PyResult<Vec<Bound<'py, PyDict>>> {
    oracles::run_all(seed)
        .into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("name", r.name)?;
            d.set_item("trials", r.trials)?;
            d.set_item("worst_violation", r.worst_violation)?;
            d.set_item("tolerance", r.tolerance)?;
            d.set_item("passed", r.passed)?;
            Ok(d)
        })
        .collect()
}

/// Sample study from a TOML override string; returns mean violation rate per method.
#[pyfunction]
#[pyo3(signature = (config = ""))]
fn sample_study<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = ExperimentConfig::from_toml_str(ExperimentKind::SampleStudy, config).map_err(py_err)?;
    cfg.validate().map_err(py_err)?;
    let out = py.detach(|| harness::run_sample_study(&cfg)).map_err(py_err)?;
    let d = PyDict::new(py);
    for m in Method::ALL {
        d.set_item(m.name(), out.mean_rate(m))?;
    }
    Ok(d)
}

#[pymodule]
fn robust_gp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHyper>()?;
    m.add_class::<PyGaussianProcess>()?;
    m.add_class::<PyRobustBound>()?;
    m.add_function(wrap_pyfunction!(fit_hyper, m)?)?;
    m.add_function(wrap_pyfunction!(run_oracles, m)?)?;
    m.add_function(wrap_pyfunction!(sample_study, m)?)?;
    Ok(())
}
