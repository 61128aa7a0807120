//! Python bindings for the coupled-core multi-core fiber simulator: Haar
//! coupling matrices, MDL spectrum statistics, the linear-SNR oracle, the
//! SNR estimator and full scenario runs driven from TOML text.

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use ccmcf::config::{self, Study};
use ccmcf::ensemble::run_ensemble;
use ccmcf::error::Error;
use ccmcf::mdl;
use ccmcf::rng::{substream, Role};
use ccmcf::transceiver;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Validation(_)
        | Error::Config(_)
        | Error::Parse(_)
        | Error::InvalidDimension(_)
        | Error::DimensionMismatch(_)
        | Error::Empty(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Crate version string.
#[pyfunction]
fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// Haar-distributed random unitary (QR of a complex Ginibre matrix with the
/// R-diagonal phases removed), as a list of rows.
#[pyfunction]
fn haar_unitary(dim: usize, seed: u64) -> PyResult<Vec<Vec<Complex64>>> {
    let mut rng = substream(seed, 0, 0, Role::Channel);
    let q = mdl::sample_haar_unitary(dim, &mut rng).map_err(to_py_err)?;
    Ok((0..dim)
        .map(|r| (0..dim).map(|c| q[(r, c)]).collect())
        .collect())
}

fn matrix_from_rows(rows: &[Vec<Complex64>]) -> PyResult<nalgebra::DMatrix<Complex64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("expected a square matrix"));
    }
    Ok(nalgebra::DMatrix::from_fn(n, n, |r, c| rows[r][c]))
}

/// Frobenius norm of (M^H M - I).
#[pyfunction]
fn unitarity_defect(matrix: Vec<Vec<Complex64>>) -> PyResult<f64> {
    Ok(mdl::unitarity_defect(&matrix_from_rows(&matrix)?))
}

/// Log squared singular values (nepers, ascending) of a square matrix.
#[pyfunction]
fn singular_gains(matrix: Vec<Vec<Complex64>>) -> PyResult<Vec<f64>> {
    let spec = mdl::singular_gains(&matrix_from_rows(&matrix)?).map_err(to_py_err)?;
    Ok(spec.as_slice().to_vec())
}

/// System gains (nepers, ascending) of one random cascade of `num_sections`
/// alternating-gain waveplates with Haar coupling.
#[pyfunction]
fn system_gains(
    num_modes: usize,
    num_sections: usize,
    sigma_g: f64,
    seed: u64,
) -> PyResult<Vec<f64>> {
    let mut rng = substream(seed, 0, 0, Role::Channel);
    let sections = (0..num_sections)
        .map(|_| mdl::lumped_mdl_element(sigma_g, num_modes, &mut rng))
        .collect::<Result<Vec<_>, _>>()
        .map_err(to_py_err)?;
    let tm = mdl::compose(&sections, &[0.0]).map_err(to_py_err)?;
    let spec = mdl::singular_gains(&tm.matrices()[0]).map_err(to_py_err)?;
    Ok(spec.as_slice().to_vec())
}

/// Ensemble mean of the peak-to-peak MDL (dB) of a cascade of
/// `num_elements` alternating-gain elements.
#[pyfunction]
fn mean_link_mdl_db(
    num_modes: usize,
    num_elements: usize,
    sigma_g: f64,
    realizations: u64,
    seed: u64,
) -> PyResult<f64> {
    if realizations == 0 {
        return Err(PyValueError::new_err("realizations must be >= 1"));
    }
    let mut acc = 0.0;
    for r in 0..realizations {
        let mut rng = substream(seed, 0, r, Role::Channel);
        let sections = (0..num_elements)
            .map(|_| mdl::lumped_mdl_element(sigma_g, num_modes, &mut rng))
            .collect::<Result<Vec<_>, _>>()
            .map_err(to_py_err)?;
        let tm = mdl::compose(&sections, &[0.0]).map_err(to_py_err)?;
        let spec = mdl::singular_gains(&tm.matrices()[0]).map_err(to_py_err)?;
        acc += mdl::peak_to_peak_db(&spec);
    }
    Ok(acc / realizations as f64)
}

/// Data-aided gain-normalized SNR estimator. Returns a dict with per-pol
/// signal/noise powers and the combined SNR in dB.
#[pyfunction]
fn estimate_snr(
    py: Python<'_>,
    rx_x: Vec<Complex64>,
    rx_y: Vec<Complex64>,
    tx_x: Vec<Complex64>,
    tx_y: Vec<Complex64>,
) -> PyResult<Py<PyDict>> {
    let p = transceiver::estimate_snr([&rx_x, &rx_y], [&tx_x, &tx_y], None).map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("p_x_w", p.p_x_w)?;
    d.set_item("p_y_w", p.p_y_w)?;
    d.set_item("n_x_w", p.n_x_w)?;
    d.set_item("n_y_w", p.n_y_w)?;
    d.set_item("snr_db", p.snr_db())?;
    d.set_item("snr_x_db", p.snr_x_db())?;
    d.set_item("snr_y_db", p.snr_y_db())?;
    Ok(d.into())
}

/// Names of the built-in scenario presets.
#[pyfunction]
fn preset_names() -> Vec<String> {
    config::preset_names()
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// TOML text of a built-in preset (editable starting point).
#[pyfunction]
fn preset_toml(name: &str) -> PyResult<String> {
    let s = config::preset(name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown preset '{name}'")))?;
    config::serialize_scenario(&s).map_err(to_py_err)
}

/// Validates a scenario given as TOML text; raises ValueError on problems.
#[pyfunction]
fn validate_scenario(toml_text: &str) -> PyResult<()> {
    let s = config::parse_scenario(toml_text).map_err(to_py_err)?;
    s.validate().map_err(to_py_err)
}

/// Runs a scenario given as TOML text and returns a summary dict with the
/// moment rows (and spectrum metrics for mdl-spectrum studies).
#[pyfunction]
#[pyo3(signature = (toml_text, workers = 0, seed = None))]
fn run_scenario(
    py: Python<'_>,
    toml_text: &str,
    workers: usize,
    seed: Option<u64>,
) -> PyResult<Py<PyDict>> {
    let mut scenario = config::parse_scenario(toml_text).map_err(to_py_err)?;
    if let Some(s) = seed {
        scenario.master_seed = s;
    }
    let workers = if workers == 0 {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    } else {
        workers
    };
    let summary = py
        .detach(|| run_ensemble(&scenario, workers))
        .map_err(to_py_err)?;

    let d = PyDict::new(py);
    d.set_item("name", summary.scenario.name.clone())?;
    d.set_item("num_records", summary.records.len())?;
    d.set_item("num_failed", summary.num_failed)?;
    let moments = PyList::empty(py);
    for m in &summary.moments {
        let row = PyDict::new(py);
        row.set_item("tag", m.tag.to_string())?;
        row.set_item("sweep_value", m.sweep_value)?;
        row.set_item("num_records", m.num_records)?;
        row.set_item("mean_snr_db", m.mean_snr_db)?;
        row.set_item("std_snr_db", m.std_snr_db)?;
        row.set_item("skewness", m.skewness)?;
        row.set_item("mean_ci_db", m.mean_ci_db)?;
        row.set_item("std_ci_db", m.std_ci_db)?;
        row.set_item("corr_xy", m.corr_xy)?;
        moments.append(row)?;
    }
    d.set_item("moments", moments)?;
    if matches!(summary.scenario.study, Study::MdlSpectrum) {
        if let Some(os) = &summary.order_stats {
            d.set_item("mean_peak_to_peak_db", os.mean_peak_to_peak_db)?;
            d.set_item("mixture_skewness", os.mixture_skewness)?;
        }
    }
    Ok(d.into())
}

#[pymodule]
fn ccmcf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(version, m)?)?;
    m.add_function(wrap_pyfunction!(haar_unitary, m)?)?;
    m.add_function(wrap_pyfunction!(unitarity_defect, m)?)?;
    m.add_function(wrap_pyfunction!(singular_gains, m)?)?;
    m.add_function(wrap_pyfunction!(system_gains, m)?)?;
    m.add_function(wrap_pyfunction!(mean_link_mdl_db, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_snr, m)?)?;
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    m.add_function(wrap_pyfunction!(preset_toml, m)?)?;
    m.add_function(wrap_pyfunction!(validate_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    Ok(())
}
