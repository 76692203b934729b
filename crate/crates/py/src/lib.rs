//! Python bindings for homolab.
//!
//! Structured results cross the boundary as JSON and come back as plain
//! dicts, so the Python side never depends on Rust layouts.

use std::path::PathBuf;

use homolab::corrector::{localization_gap, CorrectorProblem, CorrectorSet, SolverOptions};
use homolab::grid::PeriodicGrid;
use homolab::harness::{self, ExperimentConfig, RunOptions};
use homolab::homog;
use homolab::material::{self, OperatorFamily};
use homolab::randomfield::{ClampSpec, FieldSpec, KernelShape, ParameterField};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn err(e: homolab::Error) -> PyErr {
    match e {
        homolab::Error::InvalidArgument(_)
        | homolab::Error::InvalidGrid(_)
        | homolab::Error::ShapeMismatch { .. }
        | homolab::Error::Config { .. }
        | homolab::Error::UnderResolved { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (s,))?.unbind())
}

fn kernel_of(name: &str) -> PyResult<KernelShape> {
    serde_json::from_value(serde_json::Value::String(name.into()))
        .map_err(|_| PyValueError::new_err(format!("unknown kernel `{name}`")))
}

/// Periodic lattice `(h Z / L Z)^d` with `n` points per side.
#[pyclass(name = "Grid", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGrid(PeriodicGrid);

#[pymethods]
impl PyGrid {
    #[new]
    fn new(d: usize, n: usize, length: f64) -> PyResult<Self> {
        PeriodicGrid::new(d, n, length).map(Self).map_err(err)
    }
    #[getter]
    fn d(&self) -> usize {
        self.0.dim()
    }
    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }
    #[getter]
    fn length(&self) -> f64 {
        self.0.length()
    }
    #[getter]
    fn spacing(&self) -> f64 {
        self.0.spacing()
    }
    fn num_sites(&self) -> usize {
        self.0.num_sites()
    }
    fn __repr__(&self) -> String {
        format!("Grid(d={}, n={}, length={})", self.0.dim(), self.0.n(), self.0.length())
    }
}

/// Sampled parameter field with values in the unit ball.
#[pyclass(name = "Field", frozen)]
struct PyField(ParameterField);

#[pymethods]
impl PyField {
    /// Gaussian convolution of white noise followed by the radial tanh clamp.
    #[staticmethod]
    #[pyo3(signature = (grid, epsilon, seed, kernel = "gaussian-bump", channels = 1))]
    fn sample(grid: &PyGrid, epsilon: f64, seed: u64, kernel: &str, channels: usize) -> PyResult<Self> {
        let mut spec = FieldSpec::new(epsilon, kernel_of(kernel)?, ClampSpec::default());
        spec.k = channels;
        spec.sample(&grid.0, seed).map(Self).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (grid, values, epsilon, channels = 1))]
    fn from_values(grid: &PyGrid, values: Vec<f64>, epsilon: f64, channels: usize) -> PyResult<Self> {
        ParameterField::from_values(grid.0, channels, values, epsilon).map(Self).map_err(err)
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid(*self.0.grid())
    }
    #[getter]
    fn epsilon(&self) -> f64 {
        self.0.epsilon()
    }
    #[getter]
    fn seed(&self) -> Option<u64> {
        self.0.seed()
    }
    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }
    fn translate(&self, offset: Vec<isize>) -> Self {
        Self(self.0.translate(&offset))
    }
}

/// Monotone operator family `A(omega, xi)`.
#[pyclass(name = "Family", frozen)]
struct PyFamily(OperatorFamily);

#[pymethods]
impl PyFamily {
    /// `spec` is one of `rational_uhlenbeck`, `linear:midpoint`, `lin<c>` or
    /// `convex_mixture:<a>,<b>`.
    #[new]
    #[pyo3(signature = (spec, d, m = 1))]
    fn new(spec: &str, d: usize, m: usize) -> PyResult<Self> {
        OperatorFamily::from_spec(spec, m, d).map(Self).map_err(err)
    }
    #[getter]
    fn name(&self) -> String {
        self.0.name()
    }
    #[getter]
    fn constants(&self) -> (f64, f64) {
        self.0.constants()
    }
    fn apply(&self, omega: Vec<f64>, xi: Vec<f64>) -> PyResult<Vec<f64>> {
        if omega.len() != self.0.k() || xi.len() != self.0.md() {
            return Err(PyValueError::new_err(format!(
                "expected {} channels and {} slope entries",
                self.0.k(),
                self.0.md()
            )));
        }
        Ok(self.0.apply(&omega, &xi))
    }
    /// Sampled audit of monotonicity and Lipschitz bounds.
    #[pyo3(signature = (n_probe = 10_000, seed = 0))]
    fn validate(&self, py: Python<'_>, n_probe: usize, seed: u64) -> PyResult<Py<PyAny>> {
        let r = material::validate_assumptions(&self.0, n_probe, seed).map_err(err)?;
        to_py(py, &r)
    }
}

/// Solved corrector with its flux.
#[pyclass(name = "Corrector", frozen)]
struct PyCorrector(CorrectorSet);

#[pymethods]
impl PyCorrector {
    #[getter]
    fn xi(&self) -> Vec<f64> {
        self.0.xi.clone()
    }
    #[getter]
    fn t(&self) -> Option<f64> {
        self.0.t
    }
    #[getter]
    fn residual(&self) -> f64 {
        self.0.residual_norm
    }
    fn phi(&self) -> Vec<f64> {
        self.0.phi.values().to_vec()
    }
    fn flux_average(&self) -> Vec<f64> {
        self.0.flux_average()
    }
    fn energy(&self) -> f64 {
        self.0.energy()
    }
    /// Relative defect of the divergence identity for `sigma`.
    fn flux_corrector_defect(&self) -> PyResult<f64> {
        let s = self.0.with_flux_corrector().map_err(err)?;
        Ok(s.sigma_check.map_or(f64::NAN, |c| c.relative))
    }
}

#[pyfunction]
#[pyo3(signature = (field, family, xi, t = None, tol = 1e-9))]
fn solve_corrector(field: &PyField, family: &PyFamily, xi: Vec<f64>, t: Option<f64>, tol: f64) -> PyResult<PyCorrector> {
    let mut p = CorrectorProblem::new(&field.0, &family.0, &xi);
    if let Some(t) = t {
        p = p.localized(t);
    }
    p.solve(&SolverOptions::with_tol(tol)).map(PyCorrector).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (field, family, xi, tol = 1e-9))]
fn rve_periodic(py: Python<'_>, field: &PyField, family: &PyFamily, xi: Vec<f64>, tol: f64) -> PyResult<Py<PyAny>> {
    let est = homog::rve_periodic(&field.0, &family.0, &xi, tol).map_err(err)?;
    to_py(py, &est)
}

#[pyfunction]
#[pyo3(signature = (field, family, xi, t, radius_fraction = 0.125, tol = 1e-9))]
fn rve_localized(
    py: Python<'_>,
    field: &PyField,
    family: &PyFamily,
    xi: Vec<f64>,
    t: f64,
    radius_fraction: f64,
    tol: f64,
) -> PyResult<Py<PyAny>> {
    let w = homog::WeightSpec::new(homog::WeightShape::Bump, radius_fraction);
    let est = homog::rve_localized(&field.0, &family.0, &xi, t, &w, tol).map_err(err)?;
    to_py(py, &est)
}

/// Exact flux of the one-dimensional cell problem.
#[pyfunction]
fn oracle_1d(field: &PyField, family: &PyFamily, xi: f64) -> PyResult<f64> {
    homog::oracle_1d(&field.0, &family.0, xi, 1e-13).map_err(err)
}

/// Effective flux for i.i.d. sites with the clamped Gaussian one-point law.
#[pyfunction]
fn site_law_flux(family: &PyFamily, xi: f64) -> PyResult<f64> {
    homog::quadrature_reference(&family.0, &ClampSpec::default(), xi, 1e-13)
        .map(|r| r.q)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (field, family, xi, t, tol = 1e-9))]
fn localization_gap_of(py: Python<'_>, field: &PyField, family: &PyFamily, xi: Vec<f64>, t: f64, tol: f64) -> PyResult<Py<PyAny>> {
    let g = localization_gap(&field.0, &family.0, &xi, t, tol).map_err(err)?;
    to_py(py, &g)
}

/// Least-squares fit of `log y` against `log x`.
#[pyfunction]
fn fit_rate(py: Python<'_>, pairs: Vec<(f64, f64)>) -> PyResult<Py<PyAny>> {
    let f = harness::fit_rate(&pairs).map_err(err)?;
    to_py(py, &f)
}

/// Runs a config given as TOML (or JSON when `json=True`) text and returns
/// the summary and checks; the table itself is only written by
/// `run_experiment`.
#[pyfunction]
#[pyo3(signature = (text, json = false, workers = None))]
fn execute(py: Python<'_>, text: &str, json: bool, workers: Option<usize>) -> PyResult<Py<PyAny>> {
    let cfg = if json {
        ExperimentConfig::from_json_str(text)
    } else {
        ExperimentConfig::from_toml_str(text)
    }
    .map_err(err)?;
    let out = py.detach(|| harness::execute(&cfg, workers)).map_err(err)?;
    let checks: Vec<serde_json::Value> = out
        .checks
        .iter()
        .map(|c| serde_json::json!({"name": c.name, "value": c.value, "threshold": c.threshold, "pass": c.pass}))
        .collect();
    to_py(py, &serde_json::json!({"result": out.summary, "checks": checks, "rows": out.table.rows.len()}))
}

/// Runs a config file and writes the CSV and JSON summary; returns their paths
/// and whether every check passed.
#[pyfunction]
#[pyo3(signature = (config, out_dir = None, workers = None))]
fn run_experiment(py: Python<'_>, config: PathBuf, out_dir: Option<PathBuf>, workers: Option<usize>) -> PyResult<(PathBuf, PathBuf, bool)> {
    let cfg = ExperimentConfig::load(&config).map_err(err)?;
    let opts = RunOptions {
        workers,
        out_dir,
        check: false,
    };
    let r = py.detach(|| harness::run_experiment(&cfg, &opts)).map_err(err)?;
    let passed = r.passed();
    Ok((r.csv, r.summary, passed))
}

#[pymodule]
fn homolab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", harness::runner::VERSION)?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyField>()?;
    m.add_class::<PyFamily>()?;
    m.add_class::<PyCorrector>()?;
    m.add_function(wrap_pyfunction!(solve_corrector, m)?)?;
    m.add_function(wrap_pyfunction!(rve_periodic, m)?)?;
    m.add_function(wrap_pyfunction!(rve_localized, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_1d, m)?)?;
    m.add_function(wrap_pyfunction!(site_law_flux, m)?)?;
    m.add_function(wrap_pyfunction!(localization_gap_of, m)?)?;
    m.add_function(wrap_pyfunction!(fit_rate, m)?)?;
    m.add_function(wrap_pyfunction!(execute, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
