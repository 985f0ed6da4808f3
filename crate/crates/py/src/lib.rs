use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use relsens::config::Method;
use relsens::pipeline::{self, CurveMode, RunOptions};
use relsens::table::{Cell, Table};
use relsens::Error;

create_exception!(relsens_py, ConfigError, PyValueError, "Invalid configuration or input.");
create_exception!(relsens_py, NumericError, PyArithmeticError, "A numeric stage failed.");

fn to_py(e: Error) -> PyErr {
    match e.exit_code() {
        2 => ConfigError::new_err(e.to_string()),
        _ => NumericError::new_err(e.to_string()),
    }
}

fn json<'py>(py: Python<'py>, v: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| to_py(e.into()))?;
    py.import("json")?.call_method1("loads", (s,))
}

fn options(seed: Option<u64>, method: Option<&str>, out: Option<PathBuf>, threads: Option<usize>) -> PyResult<RunOptions> {
    Ok(RunOptions {
        seed,
        method: method.map(str::parse::<Method>).transpose().map_err(to_py)?,
        out,
        threads,
    })
}

fn columns<'py>(py: Python<'py>, t: &Table) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (j, name) in t.header.iter().enumerate() {
        let col = PyList::empty(py);
        for row in &t.rows {
            match &row[j] {
                Cell::Num(x) => col.append(*x)?,
                Cell::Text(s) => col.append(s)?,
                Cell::Empty => col.append(py.None())?,
            }
        }
        d.set_item(name, col)?;
    }
    Ok(d)
}

/// Check a configuration file; returns a summary dict.
#[pyfunction]
fn validate<'py>(py: Python<'py>, config: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let s = py.detach(|| pipeline::cmd_validate(&config)).map_err(to_py)?;
    json(py, &s)
}

/// Run a configuration and write its outputs; returns the report dict.
#[pyfunction]
#[pyo3(signature = (config, out=None, seed=None, method=None, threads=None))]
fn run<'py>(
    py: Python<'py>,
    config: PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
    method: Option<&str>,
    threads: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let opts = options(seed, method, out, threads)?;
    let r = py.detach(|| pipeline::cmd_run(&config, &opts)).map_err(to_py)?;
    let report = json(py, &r.report)?;
    report.set_item("out_dir", r.out_dir)?;
    Ok(report)
}

/// EVPPI against the cost ratio; returns the path of sweep.csv.
#[pyfunction]
#[pyo3(signature = (config, ratios="logspace:1e-5:0.3:40", out=None, seed=None, method=None, threads=None))]
fn sweep(
    py: Python<'_>,
    config: PathBuf,
    ratios: &str,
    out: Option<PathBuf>,
    seed: Option<u64>,
    method: Option<&str>,
    threads: Option<usize>,
) -> PyResult<PathBuf> {
    let opts = options(seed, method, out, threads)?;
    let ratios = ratios.to_string();
    py.detach(|| pipeline::cmd_sweep(&config, &ratios, &opts)).map_err(to_py)
}

/// FORM EVPPI against |α| for each β, as a dict of columns.
#[pyfunction]
#[pyo3(signature = (betas, ratio=1e-3, mode="safety"))]
fn form_curves<'py>(py: Python<'py>, betas: Vec<f64>, ratio: f64, mode: &str) -> PyResult<Bound<'py, PyDict>> {
    let mode: CurveMode = mode.parse().map_err(to_py)?;
    let t = pipeline::form_curves_table(&betas, ratio, mode).map_err(to_py)?;
    columns(py, &t)
}

/// Reliability index of a failure probability.
#[pyfunction]
fn beta_of_pf(pf: f64) -> PyResult<f64> {
    pipeline::beta_of_pf(pf).map_err(to_py)
}

/// Check output files against the manifest in report.json; returns the count.
#[pyfunction]
fn verify_manifest(py: Python<'_>, dir: PathBuf) -> PyResult<usize> {
    py.detach(|| pipeline::verify_manifest(&dir)).map_err(to_py)
}

#[pymodule]
fn relsens_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add("NumericError", m.py().get_type::<NumericError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(form_curves, m)?)?;
    m.add_function(wrap_pyfunction!(beta_of_pf, m)?)?;
    m.add_function(wrap_pyfunction!(verify_manifest, m)?)?;
    Ok(())
}
