//! Python bindings. Requests and responses cross the boundary as JSON text,
//! exactly as the command line and HTTP service exchange them.

use std::collections::BTreeMap;

use biasloom_core::interface::{self, Operation};
use biasloom_core::kb::BiasKB;
use biasloom_core::model::{self, ModelError};
use biasloom_core::Probability;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

create_exception!(biasloom, EngineError, PyException, "A structured engine failure.");

fn engine_err(py: Python<'_>, e: interface::EngineError) -> PyErr {
    let err = EngineError::new_err(e.message.clone());
    let value = err.value(py);
    // Attribute assignment on a fresh exception instance cannot fail.
    let _ = value.setattr("code", e.code.as_str());
    let _ = value.setattr("field_path", e.field_path.clone());
    let _ = value.setattr("exit_code", e.code.exit_code());
    let _ = value.setattr("document", e.to_document());
    err
}

fn model_err(e: ModelError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn prob(name: &str, x: f64) -> PyResult<Probability> {
    Probability::new(x).map_err(|_| PyValueError::new_err(format!("{name} must lie in [0, 1] (got {x})")))
}

/// Stateless engine over a knowledge base (the shipped one by default).
#[pyclass(module = "biasloom", frozen)]
struct Engine {
    inner: interface::Engine,
}

#[pymethods]
impl Engine {
    #[new]
    #[pyo3(signature = (kb_json=None))]
    fn new(py: Python<'_>, kb_json: Option<&str>) -> PyResult<Self> {
        let inner = match kb_json {
            None => interface::Engine::default(),
            Some(text) => {
                let kb = BiasKB::from_json(text).map_err(|e| engine_err(py, e.into()))?;
                interface::Engine::new(kb)
            }
        };
        Ok(Self { inner })
    }

    /// Runs `operation` (validate, prune, analyze, meta, flip, sweep) on a
    /// JSON request and returns the canonical JSON response.
    fn run(&self, py: Python<'_>, operation: &str, request: &str) -> PyResult<String> {
        let op: Operation = operation.parse().map_err(PyValueError::new_err)?;
        let request = request.to_owned();
        py.detach(|| self.inner.run(op, &request)).map_err(|e| engine_err(py, e))
    }

    fn validate(&self, py: Python<'_>, study: &str) -> PyResult<String> {
        self.run(py, "validate", study)
    }

    fn prune(&self, py: Python<'_>, study: &str) -> PyResult<String> {
        self.run(py, "prune", study)
    }

    fn analyze(&self, py: Python<'_>, request: &str) -> PyResult<String> {
        self.run(py, "analyze", request)
    }

    fn meta(&self, py: Python<'_>, request: &str) -> PyResult<String> {
        self.run(py, "meta", request)
    }

    fn flip(&self, py: Python<'_>, request: &str) -> PyResult<String> {
        self.run(py, "flip", request)
    }

    fn sweep(&self, py: Python<'_>, request: &str) -> PyResult<String> {
        self.run(py, "sweep", request)
    }

    /// The knowledge base as a canonical JSON document.
    fn kb(&self) -> String {
        self.inner.kb_document()
    }
}

#[pyclass(module = "biasloom", name = "BetaShape", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyBetaShape {
    inner: model::BetaShape,
}

#[pymethods]
impl PyBetaShape {
    #[new]
    fn new(alpha: f64, beta: f64) -> PyResult<Self> {
        Ok(Self {
            inner: model::BetaShape::new(alpha, beta).map_err(model_err)?,
        })
    }

    #[staticmethod]
    fn from_mean_ess(mean: f64, ess: f64) -> PyResult<Self> {
        Ok(Self {
            inner: model::BetaShape::from_mean_ess(mean, ess).map_err(model_err)?,
        })
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta()
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn variance(&self) -> f64 {
        self.inner.variance()
    }

    fn ess(&self) -> f64 {
        self.inner.ess()
    }

    fn cdf(&self, x: f64) -> f64 {
        self.inner.cdf(x)
    }

    fn __repr__(&self) -> String {
        format!("BetaShape({}, {})", self.inner.alpha(), self.inner.beta())
    }
}

#[pyfunction]
fn apply_withdrawal_mix(theta_t: f64, theta_b: f64, phi: f64) -> PyResult<f64> {
    Ok(model::apply_withdrawal_mix(prob("theta_t", theta_t)?, prob("theta_b", theta_b)?, prob("phi", phi)?).value())
}

#[pyfunction]
fn apply_swap_mix(theta_1: f64, theta_2: f64, phi_1: f64, phi_2: f64) -> PyResult<f64> {
    model::apply_swap_mix(prob("theta_1", theta_1)?, prob("theta_2", theta_2)?, prob("phi_1", phi_1)?, prob("phi_2", phi_2)?)
        .map(Probability::value)
        .map_err(model_err)
}

/// The swap-mixture rate without the coherence check.
#[pyfunction]
fn swap_mix_rate(theta_1: f64, theta_2: f64, phi_1: f64, phi_2: f64) -> f64 {
    model::swap_mix_rate(theta_1, theta_2, phi_1, phi_2)
}

#[pyfunction]
fn apply_logodds_shift(theta: f64, delta: f64) -> PyResult<f64> {
    model::apply_logodds_shift(prob("theta", theta)?, delta)
        .map(Probability::value)
        .map_err(model_err)
}

#[pyfunction]
fn apply_misclassification(theta: f64, sens: f64, spec: f64) -> PyResult<f64> {
    Ok(model::apply_misclassification(prob("theta", theta)?, prob("sens", sens)?, prob("spec", spec)?).value())
}

/// The bundled example files as a `{name: contents}` dict.
#[pyfunction]
fn bundled_examples() -> BTreeMap<&'static str, &'static str> {
    interface::bundled_examples().into_iter().map(|f| (f.name, f.contents)).collect()
}

#[pymodule]
fn biasloom(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("EngineError", m.py().get_type::<EngineError>())?;
    m.add_class::<Engine>()?;
    m.add_class::<PyBetaShape>()?;
    m.add_function(wrap_pyfunction!(apply_withdrawal_mix, m)?)?;
    m.add_function(wrap_pyfunction!(apply_swap_mix, m)?)?;
    m.add_function(wrap_pyfunction!(swap_mix_rate, m)?)?;
    m.add_function(wrap_pyfunction!(apply_logodds_shift, m)?)?;
    m.add_function(wrap_pyfunction!(apply_misclassification, m)?)?;
    m.add_function(wrap_pyfunction!(bundled_examples, m)?)?;
    Ok(())
}
