//! Python bindings: catalog runs, verification reports and the L-shape constant estimate.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use dfrdd::problems::CASE_NAMES;
use dfrdd::vericonst;
use dfrdd::DfrError;
use dfrdd_cli::{exit_code, Overrides, RunConfig, VerifyKind};

fn to_py(e: DfrError) -> PyErr {
    match exit_code(&e) {
        2 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json_to_py(py: Python<'_>, v: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (s,))?.unbind())
}

/// Names accepted by `run`.
#[pyfunction]
fn cases() -> Vec<String> {
    CASE_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Trains a catalog case, writes the run files into `out` and returns the final summary.
#[pyfunction]
#[pyo3(signature = (case, out, seed=1, iterations=None, lr=None, modes=None, quad_points=None,
                    level_iterations=None, tau=None, max_ref=None, ridge=None, val_every=None, err_every=None))]
#[allow(clippy::too_many_arguments)]
fn run(
    py: Python<'_>,
    case: String,
    out: PathBuf,
    seed: u64,
    iterations: Option<usize>,
    lr: Option<f64>,
    modes: Option<Vec<usize>>,
    quad_points: Option<Vec<usize>>,
    level_iterations: Option<usize>,
    tau: Option<f64>,
    max_ref: Option<usize>,
    ridge: Option<f64>,
    val_every: Option<usize>,
    err_every: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let o = Overrides {
        case: Some(case),
        seed: Some(seed),
        lr,
        iterations,
        level_iterations,
        tau,
        max_ref,
        modes,
        quad_points,
        ridge,
        val_every,
        err_every,
        out: Some(out),
    };
    let cfg = RunConfig::resolve(None, o).map_err(to_py)?;
    let summary = py.detach(|| dfrdd_cli::run(&cfg)).map_err(to_py)?;
    json_to_py(py, &summary)
}

/// Runs `"lshape-xi"`, `"partition"` or `"gradcheck"` and returns the report.
#[pyfunction]
#[pyo3(signature = (kind, out, case=None, seed=1))]
fn verify(py: Python<'_>, kind: &str, out: PathBuf, case: Option<String>, seed: u64) -> PyResult<Py<PyAny>> {
    let kind = match kind {
        "lshape-xi" => VerifyKind::LshapeXi,
        "partition" => VerifyKind::Partition,
        "gradcheck" => VerifyKind::Gradcheck,
        other => return Err(PyValueError::new_err(format!("unknown verification '{other}'"))),
    };
    let report = py.detach(|| dfrdd_cli::verify(kind, case.as_deref(), seed, &out)).map_err(to_py)?;
    json_to_py(py, &report)
}

/// `xi^2` estimate for the two-box L-shape cover on an `n` grid with `data` random traces.
#[pyfunction]
#[pyo3(signature = (n=128, data=200, seed=1))]
fn xi_estimate(py: Python<'_>, n: usize, data: usize, seed: u64) -> PyResult<f64> {
    py.detach(|| vericonst::xi_estimate(n, &vericonst::random_data(data, 8, seed)))
        .map(|r| r.xi_sq_estimate)
        .map_err(to_py)
}

#[pymodule]
fn dfrdd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(cases, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(xi_estimate, m)?)?;
    Ok(())
}
