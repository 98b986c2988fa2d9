//! Python bindings for the `softdd` library.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use softdd_core::optimize::{solve_odd as core_solve_odd, verify_cpmg_stationarity as core_cpmg, OddProblem};
use softdd_core::verify::{run_mc as core_run_mc, McConfig};
use softdd_core::{ChiMethod, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidSequence { .. } | Error::InvalidParameter(_) | Error::InvalidProgram(_) | Error::Json(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    Ok(match value {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, v) in map {
                dict.set_item(k, to_py(py, v)?)?;
            }
            dict.into_any()
        }
    })
}

fn serialize<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &v)
}

/// Ideal π-pulse sequence with relative times in (0, 1).
#[pyclass(name = "PulseSequence", frozen, module = "softdd")]
struct PySequence(softdd_core::PulseSequence);

#[pymethods]
impl PySequence {
    #[new]
    fn new(times: Vec<f64>) -> PyResult<Self> {
        softdd_core::PulseSequence::new(times).map(PySequence).map_err(py_err)
    }

    #[staticmethod]
    fn free_evolution() -> Self {
        PySequence(softdd_core::PulseSequence::free_evolution())
    }

    #[staticmethod]
    fn udd(n: usize) -> PyResult<Self> {
        softdd_core::PulseSequence::udd(n).map(PySequence).map_err(py_err)
    }

    #[staticmethod]
    fn cpmg(n: usize) -> PyResult<Self> {
        softdd_core::PulseSequence::cpmg(n).map(PySequence).map_err(py_err)
    }

    #[staticmethod]
    fn pdd(n: usize) -> PyResult<Self> {
        softdd_core::PulseSequence::pdd(n).map(PySequence).map_err(py_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        softdd_core::PulseSequence::from_json(text).map(PySequence).map_err(py_err)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.0.times().to_vec()
    }

    fn min_gap(&self) -> f64 {
        self.0.min_gap()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("PulseSequence({:?})", self.0.times())
    }
}

/// Stationary Gaussian dephasing noise given by its spectrum.
#[pyclass(name = "NoiseModel", frozen, module = "softdd")]
struct PyNoise(softdd_core::NoiseModel);

#[pymethods]
impl PyNoise {
    #[staticmethod]
    #[pyo3(signature = (alpha, k, omega_c_soft))]
    fn soft_power_law(alpha: f64, k: u32, omega_c_soft: f64) -> PyResult<Self> {
        softdd_core::NoiseModel::make_soft_power_law(alpha, k, omega_c_soft).map(PyNoise).map_err(py_err)
    }

    #[staticmethod]
    fn exponential(tc: f64) -> PyResult<Self> {
        softdd_core::NoiseModel::make_exponential_correlation(tc).map(PyNoise).map_err(py_err)
    }

    #[staticmethod]
    fn gaussian(sigma_t: f64) -> PyResult<Self> {
        softdd_core::NoiseModel::make_gaussian_correlation(sigma_t).map(PyNoise).map_err(py_err)
    }

    #[staticmethod]
    fn flat(s0: f64, omega_c: f64) -> PyResult<Self> {
        softdd_core::NoiseModel::make_flat(s0, omega_c).map(PyNoise).map_err(py_err)
    }

    #[staticmethod]
    fn zero() -> Self {
        PyNoise(softdd_core::NoiseModel::zero())
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        softdd_core::NoiseModel::from_json(text).map(PyNoise).map_err(py_err)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    fn with_hard_cutoff(&self, omega_c: f64) -> PyResult<Self> {
        self.0.with_hard_cutoff(omega_c).map(PyNoise).map_err(py_err)
    }

    fn spectrum(&self, omega: f64) -> f64 {
        self.0.spectrum(omega)
    }

    fn correlation(&self, t: f64) -> f64 {
        self.0.correlation(t)
    }

    /// Coefficients `C_0 … C_{k_max}` of the short-time expansion.
    fn correlation_expansion(&self, k_max: usize) -> PyResult<Vec<f64>> {
        self.0.correlation_expansion(k_max).map(|e| e.coefficients).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("NoiseModel({})", self.0.to_json())
    }
}

fn parse_method(method: &str) -> PyResult<ChiMethod> {
    method.parse().map_err(py_err)
}

#[pyfunction]
fn lambda_m(seq: &PySequence, m: usize) -> f64 {
    softdd_core::lambda_pi(&seq.0, m)
}

/// Filter function `f̃(u)` at `u = ωT`.
#[pyfunction]
fn filter(seq: &PySequence, u: f64) -> (f64, f64) {
    let v = softdd_core::filter(&softdd_core::modulation_of(&seq.0), u).value;
    (v.re, v.im)
}

#[pyfunction]
fn phi_k(seq: &PySequence, k: usize) -> f64 {
    softdd_core::phi_k_closed(&seq.0, k)
}

#[pyfunction]
#[pyo3(signature = (seq, k, panels = 8))]
fn phi_k_bruteforce(seq: &PySequence, k: usize, panels: usize) -> PyResult<f64> {
    softdd_core::phi_k_bruteforce(&softdd_core::modulation_of(&seq.0), k, panels).map_err(py_err)
}

/// `χ(T)` as `(value, error)`.
#[pyfunction]
#[pyo3(signature = (seq, noise, t, method = "spectral", k_max = 8))]
fn chi(py: Python<'_>, seq: &PySequence, noise: &PyNoise, t: f64, method: &str, k_max: usize) -> PyResult<(f64, f64)> {
    let method = parse_method(method)?;
    let est = py
        .detach(|| match method {
            ChiMethod::Spectral => softdd_core::chi_spectral(&softdd_core::modulation_of(&seq.0), &noise.0, t),
            ChiMethod::Series => noise
                .0
                .correlation_expansion(k_max)
                .and_then(|e| softdd_core::chi_series(&seq.0, &e, t, k_max)),
        })
        .map_err(py_err)?;
    Ok((est.value, est.error))
}

#[pyfunction]
#[pyo3(signature = (seq, noise, t, k_max = 8, method = "spectral"))]
fn decoherence_report<'py>(
    py: Python<'py>,
    seq: &PySequence,
    noise: &PyNoise,
    t: f64,
    k_max: usize,
    method: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let method = parse_method(method)?;
    let report = py.detach(|| softdd_core::decoherence_report(&seq.0, &noise.0, t, k_max, method)).map_err(py_err)?;
    serialize(py, &report)
}

/// Locally optimal `N`-pulse sequence with `M` vanishing moments.
#[pyfunction]
#[pyo3(signature = (n, m, multistarts = 4, seed = 0, eps_c = 1e-10, eps_g = 1e-8))]
fn solve_odd<'py>(
    py: Python<'py>,
    n: usize,
    m: usize,
    multistarts: usize,
    seed: u64,
    eps_c: f64,
    eps_g: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let prob = OddProblem { multistarts, seed, eps_c, eps_g, ..OddProblem::new(n, m) };
    let result = py.detach(|| core_solve_odd(&prob)).map_err(py_err)?;
    serialize(py, &result)
}

#[pyfunction]
#[pyo3(signature = (n, tol = 1e-12))]
fn verify_cpmg_stationarity(n: usize, tol: f64) -> PyResult<(bool, f64)> {
    core_cpmg(n, tol).map_err(py_err)
}

/// Monte Carlo estimate of `W(T)` compared with `e^{-χ(T)}`.
#[pyfunction]
#[pyo3(signature = (seq, noise, t, realizations = 10_000, seed = 0))]
fn run_mc<'py>(
    py: Python<'py>,
    seq: &PySequence,
    noise: &PyNoise,
    t: f64,
    realizations: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = McConfig::for_problem(&noise.0, &seq.0, t, realizations, seed);
    let report = py.detach(|| core_run_mc(&noise.0, &seq.0, t, &cfg)).map_err(py_err)?;
    serialize(py, &report)
}

#[pymodule]
fn softdd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySequence>()?;
    m.add_class::<PyNoise>()?;
    m.add_function(wrap_pyfunction!(lambda_m, m)?)?;
    m.add_function(wrap_pyfunction!(filter, m)?)?;
    m.add_function(wrap_pyfunction!(phi_k, m)?)?;
    m.add_function(wrap_pyfunction!(phi_k_bruteforce, m)?)?;
    m.add_function(wrap_pyfunction!(chi, m)?)?;
    m.add_function(wrap_pyfunction!(decoherence_report, m)?)?;
    m.add_function(wrap_pyfunction!(solve_odd, m)?)?;
    m.add_function(wrap_pyfunction!(verify_cpmg_stationarity, m)?)?;
    m.add_function(wrap_pyfunction!(run_mc, m)?)?;
    Ok(())
}
