//! Python module `_humankernel`.

use nalgebra::DMatrix;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use humankernel::experiments::{emit_report, ExperimentConfig};
use humankernel::learn::fit_data_kernel;
use humankernel::{DrawSet, Error, FitObjective, FitOptions, FitReport, KernelSpec, SmComponent};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::InvalidKernel(_)
        | Error::ParamLength { .. }
        | Error::InvalidArgument(_)
        | Error::Validation { .. }
        | Error::Parse { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

/// Draw list (one list per draw) to an `n × draws` matrix.
fn draw_matrix(n: usize, draws: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    if let Some(bad) = draws.iter().position(|d| d.len() != n) {
        return Err(PyValueError::new_err(format!("draw {bad} has length {}, expected {n}", draws[bad].len())));
    }
    Ok(DMatrix::from_fn(n, draws.len(), |i, j| draws[j][i]))
}

#[pyclass(name = "Kernel", module = "_humankernel")]
#[derive(Clone)]
struct PyKernel {
    spec: KernelSpec,
}

fn checked(spec: KernelSpec) -> PyResult<PyKernel> {
    spec.validate().map_err(to_py)?;
    Ok(PyKernel { spec })
}

#[pymethods]
impl PyKernel {
    #[staticmethod]
    fn rbf(lengthscale: f64, signal_var: f64) -> PyResult<Self> {
        checked(KernelSpec::rbf(lengthscale, signal_var))
    }

    #[staticmethod]
    fn rq(lengthscale: f64, signal_var: f64, alpha: f64) -> PyResult<Self> {
        checked(KernelSpec::rq(lengthscale, signal_var, alpha))
    }

    #[staticmethod]
    fn linear(slope_var: f64, offset_c: f64) -> PyResult<Self> {
        checked(KernelSpec::linear(slope_var, offset_c))
    }

    /// Components as `(weight, frequency, frequency_variance)` triples.
    #[staticmethod]
    fn spectral_mixture(components: Vec<(f64, f64, f64)>) -> PyResult<Self> {
        checked(KernelSpec::spectral_mixture(
            components.into_iter().map(|(w, m, v)| SmComponent::new(w, m, v)).collect(),
        ))
    }

    #[staticmethod]
    fn product(left: &PyKernel, right: &PyKernel) -> PyResult<Self> {
        checked(KernelSpec::product(left.spec.clone(), right.spec.clone()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let spec: KernelSpec = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        checked(spec)
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.spec).expect("kernel serializes")
    }

    fn eval(&self, x: f64, x2: f64) -> f64 {
        self.spec.eval(x, x2)
    }

    #[pyo3(signature = (xs, xs2=None))]
    fn matrix(&self, xs: Vec<f64>, xs2: Option<Vec<f64>>) -> Vec<Vec<f64>> {
        let other = xs2.unwrap_or_else(|| xs.clone());
        rows(&humankernel::kernel_matrix(&self.spec, &xs, &other))
    }

    /// Flattened hyperparameters, log-transformed where applicable.
    fn params(&self) -> Vec<f64> {
        self.spec.params()
    }

    fn with_params(&self, params: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            spec: self.spec.with_params(&params).map_err(to_py)?,
        })
    }

    fn n_params(&self) -> usize {
        self.spec.n_params()
    }

    fn __repr__(&self) -> String {
        format!("Kernel({})", self.to_json())
    }
}

#[pyclass(name = "GpModel", module = "_humankernel")]
#[derive(Clone)]
struct PyGpModel {
    model: humankernel::GpModel,
}

#[pymethods]
impl PyGpModel {
    #[new]
    #[pyo3(signature = (kernel, noise_var, frozen_noise=false))]
    fn new(kernel: &PyKernel, noise_var: f64, frozen_noise: bool) -> PyResult<Self> {
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(PyValueError::new_err("noise_var must be > 0"));
        }
        let model = humankernel::GpModel::new(kernel.spec.clone(), noise_var);
        Ok(Self {
            model: if frozen_noise { model.frozen() } else { model },
        })
    }

    #[getter]
    fn kernel(&self) -> PyKernel {
        PyKernel {
            spec: self.model.kernel.clone(),
        }
    }

    #[getter]
    fn noise_var(&self) -> f64 {
        self.model.noise_var()
    }

    fn log_marginal_likelihood(&self, xs: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
        humankernel::log_marginal_likelihood(&self.model, &xs, &y).map_err(to_py)
    }

    /// Gradient over the free parameters: kernel hyperparameters, then log
    /// noise variance unless frozen.
    fn lml_grad(&self, xs: Vec<f64>, y: Vec<f64>) -> PyResult<Vec<f64>> {
        humankernel::lml_grad(&self.model, &xs, &y).map_err(to_py)
    }

    /// Predictive mean and covariance at `x_test`.
    #[pyo3(signature = (xs, y, x_test, noisy=false))]
    fn posterior(&self, xs: Vec<f64>, y: Vec<f64>, x_test: Vec<f64>, noisy: bool) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let (m, c) = humankernel::posterior_predictive(&self.model, &xs, &y, &x_test, noisy).map_err(to_py)?;
        Ok((m.iter().copied().collect(), rows(&c)))
    }

    fn sample_prior(&self, xs: Vec<f64>, n_draws: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        Ok(columns(&humankernel::sample_prior(&self.model, &xs, n_draws, seed).map_err(to_py)?))
    }

    /// Noise-free posterior draws, one list per draw.
    fn sample_posterior(&self, xs: Vec<f64>, y: Vec<f64>, x_test: Vec<f64>, n_draws: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let d = humankernel::sample_posterior(&self.model, &xs, &y, &x_test, n_draws, seed).map_err(to_py)?;
        Ok(columns(&d.y_test))
    }

    fn predictive_conditional_lml(&self, x_train: Vec<f64>, y_train: Vec<f64>, x_test: Vec<f64>, draws: Vec<Vec<f64>>) -> PyResult<f64> {
        let y = draw_matrix(x_test.len(), &draws)?;
        let ds = DrawSet::new(x_train, y_train, x_test, y).map_err(to_py)?;
        humankernel::predictive_conditional_lml(&self.model, &ds).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("GpModel(kernel={}, noise_var={})", serde_json::to_string(&self.model.kernel).unwrap_or_default(), self.model.noise_var())
    }
}

#[pyclass(name = "FitReport", module = "_humankernel")]
struct PyFitReport {
    report: FitReport,
    template: humankernel::GpModel,
}

#[pymethods]
impl PyFitReport {
    #[getter]
    fn best_model(&self) -> PyGpModel {
        PyGpModel {
            model: self.report.best_model(&self.template),
        }
    }

    #[getter]
    fn best_objective(&self) -> f64 {
        self.report.best_objective
    }

    #[getter]
    fn best_restart(&self) -> usize {
        self.report.best_restart
    }

    fn table(&self) -> String {
        self.report.table()
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.report).expect("report serializes")
    }
}

fn options(objective: FitObjective, restarts: usize, max_iters: usize, seed: u64) -> FitOptions {
    FitOptions {
        restarts,
        max_iters,
        seed,
        objective,
        ..Default::default()
    }
}

/// Fits the template to training data by marginal likelihood.
#[pyfunction]
#[pyo3(signature = (template, xs, y, restarts=10, max_iters=500, seed=0))]
fn fit_data(py: Python<'_>, template: &PyGpModel, xs: Vec<f64>, y: Vec<f64>, restarts: usize, max_iters: usize, seed: u64) -> PyResult<PyFitReport> {
    let t = template.model.clone();
    let opts = options(FitObjective::DataMl, restarts, max_iters, seed);
    let report = py.allow_threads(|| fit_data_kernel(&t, &xs, &y, &opts)).map_err(to_py)?;
    Ok(PyFitReport { report, template: t })
}

/// Fits the template to posterior draws by the predictive conditional
/// marginal likelihood.
#[pyfunction]
#[pyo3(signature = (template, x_train, y_train, x_test, draws, restarts=10, max_iters=500, seed=0))]
#[allow(clippy::too_many_arguments)]
fn fit_prediction(
    py: Python<'_>,
    template: &PyGpModel,
    x_train: Vec<f64>,
    y_train: Vec<f64>,
    x_test: Vec<f64>,
    draws: Vec<Vec<f64>>,
    restarts: usize,
    max_iters: usize,
    seed: u64,
) -> PyResult<PyFitReport> {
    let y = draw_matrix(x_test.len(), &draws)?;
    let ds = DrawSet::new(x_train, y_train, x_test, y).map_err(to_py)?;
    let t = template.model.clone();
    let opts = options(FitObjective::PredictionMl, restarts, max_iters, seed);
    let report = py
        .allow_threads(|| humankernel::fit_prediction_kernel(&t, &ds, &opts))
        .map_err(to_py)?;
    Ok(PyFitReport { report, template: t })
}

/// Mean and covariance (divisor M) of draws, optionally projected to the
/// nearest positive semidefinite matrix.
#[pyfunction]
#[pyo3(signature = (draws, project=true))]
fn empirical_gaussian(draws: Vec<Vec<f64>>, project: bool) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = draws.first().map_or(0, Vec::len);
    let g = humankernel::empirical_moments(&draw_matrix(n, &draws)?);
    let g = if project {
        humankernel::psd_project(&g, humankernel::empirical::DEFAULT_FLOOR_RATIO).map_err(to_py)?
    } else {
        g
    };
    Ok((g.mean.iter().copied().collect(), rows(&g.cov)))
}

/// Runs an experiment from a JSON config and returns its summary as JSON.
/// Report files are written to the config's `output_dir` when `emit` is set.
#[pyfunction]
#[pyo3(signature = (config_json, emit=false))]
fn run_experiment(py: Python<'_>, config_json: &str, emit: bool) -> PyResult<String> {
    let cfg: ExperimentConfig = serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let report = py.allow_threads(|| cfg.run()).map_err(to_py)?;
    if emit {
        emit_report(&report, &cfg.output_dir).map_err(to_py)?;
    }
    Ok(serde_json::to_string(&report.summary).expect("summary serializes"))
}

#[pymodule]
fn _humankernel(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKernel>()?;
    m.add_class::<PyGpModel>()?;
    m.add_class::<PyFitReport>()?;
    m.add_function(wrap_pyfunction!(fit_data, m)?)?;
    m.add_function(wrap_pyfunction!(fit_prediction, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
