use std::path::PathBuf;

use cbs_core::metrics::{complexity_counts, ComplexityInputs};
use cbs_core::scenario::{self, RunOptions, ScenarioConfig};
use cbs_core::spatial_filter::{build_operator, design_window_bandpass, FilterMethod, FirFilter};
use cbs_core::{Complex64, Error};
use nalgebra::DVector;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    if scenario::exit_code(&e) == scenario::EXIT_SOLVER {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

/// Window-method bandpass taps.
#[pyfunction]
fn window_bandpass(length: usize, omega_c1: f64, omega_c2: f64) -> PyResult<Vec<Complex64>> {
    let f = design_window_bandpass(length, omega_c1, omega_c2).map_err(to_py)?;
    Ok(f.taps().to_vec())
}

/// `H_c y` for the given taps.
#[pyfunction]
fn apply_cbs(taps: Vec<Complex64>, y: Vec<Complex64>) -> PyResult<Vec<Complex64>> {
    let filter = FirFilter::new(taps, 0.0, 0.0, FilterMethod::Window).map_err(to_py)?;
    let op = build_operator(&filter, y.len()).map_err(to_py)?;
    let out = op.apply(&DVector::from_vec(y)).map_err(to_py)?;
    Ok(out.as_slice().to_vec())
}

/// Analytic multiply counts per receiver family.
#[pyfunction]
#[pyo3(signature = (n, k, l, m = 1, nd = 1))]
fn complexity<'py>(py: Python<'py>, n: u64, k: u64, l: u64, m: u64, nd: u64) -> PyResult<Bound<'py, PyDict>> {
    let t = complexity_counts(&ComplexityInputs::uniform(n, k, l, m, nd)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("mrc", t.mrc)?;
    d.set_item("zf", t.zf)?;
    d.set_item("mmse", t.mmse)?;
    d.set_item("cbs_mrc", t.cbs_mrc)?;
    d.set_item("cbs_mmse", t.cbs_mmse)?;
    d.set_item("cbs_mmse_decimated", t.cbs_mmse_decimated)?;
    d.set_item("whitening_overhead", t.whitening_overhead)?;
    Ok(d)
}

/// Runs a scenario config and returns the report as JSON. With `out_dir`
/// the CSV and JSON files are written as well.
#[pyfunction]
#[pyo3(signature = (path, seed = None, out_dir = None))]
fn run_config(py: Python<'_>, path: PathBuf, seed: Option<u64>, out_dir: Option<PathBuf>) -> PyResult<String> {
    py.allow_threads(|| {
        let report = match out_dir {
            Some(dir) => scenario::run_config_file(&path, seed, &dir)?.0,
            None => {
                let cfg = ScenarioConfig::load(&path)?;
                let opts = RunOptions {
                    seed,
                    base_dir: path.parent().map(PathBuf::from).unwrap_or_default(),
                };
                scenario::run_scenario(&cfg, &opts)?
            }
        };
        report.to_json()
    })
    .map_err(to_py)
}

/// Designs a near-field filter from a band spec file into `out_dir`.
#[pyfunction]
fn design_filter<'py>(py: Python<'py>, spec: PathBuf, out_dir: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let (report, out) = py
        .allow_threads(|| scenario::run_filter_design(&spec, &out_dir))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("filter", out.filter)?;
    d.set_item("trajectory", report.sca.trajectory.clone())?;
    d.set_item("passband_min", report.verify.passband_min)?;
    d.set_item("stopband_max", report.verify.stopband_max)?;
    d.set_item("gap_db", report.gap_db)?;
    d.set_item("violations", report.violations)?;
    Ok(d)
}

#[pymodule]
fn cbs_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(window_bandpass, m)?)?;
    m.add_function(wrap_pyfunction!(apply_cbs, m)?)?;
    m.add_function(wrap_pyfunction!(complexity, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(design_filter, m)?)?;
    Ok(())
}
