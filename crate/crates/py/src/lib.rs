//! Python bindings for the cardiac electromechanics engine.
//!
//! Arrays cross the boundary as nested Python lists so the module has no
//! numpy dependency; wrap them with `numpy.asarray` on the Python side.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use cardioem_core::circulation::{CircMode, Circulation};
use cardioem_core::fibers::generate_fibers;
use cardioem_core::geometry::build_geometry;
use cardioem_core::pipeline::Pipeline;
use cardioem_core::postio::{read_csv, RunConfig};
use cardioem_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::InvalidParameter(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// A validated run configuration.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    /// Start from a named preset (`"desk"` or `"full"`), optionally
    /// overlaid with TOML text.
    #[new]
    #[pyo3(signature = (preset = "desk", toml = None))]
    fn new(preset: &str, toml: Option<&str>) -> PyResult<Self> {
        let base = RunConfig::preset(preset).map_err(to_py)?;
        let inner = match toml {
            Some(text) => base.overlay(text).map_err(to_py)?,
            None => base,
        };
        Ok(Self { inner })
    }

    /// Return a copy with the TOML text merged on top.
    fn overlay(&self, toml: &str) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.overlay(toml).map_err(to_py)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().map_err(to_py)
    }

    #[getter]
    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[getter]
    fn output_dir(&self) -> PathBuf {
        self.inner.output.dir.clone()
    }

    fn __repr__(&self) -> String {
        format!("Config(hash='{}')", &self.inner.hash()[..12])
    }
}

fn rows(v: &[nalgebra::Vector3<f64>]) -> Vec<[f64; 3]> {
    v.iter().map(|x| [x.x, x.y, x.z]).collect()
}

/// Build the mechanics mesh described by the configuration.
///
/// Returns a dict with `nodes` (meters), `elements` (8 node indices per
/// hexahedron) and `boundary_faces`.
#[pyfunction]
fn build_mesh(py: Python<'_>, config: &PyConfig) -> PyResult<Py<PyAny>> {
    let mesh = build_geometry(&config.inner.geometry).map_err(to_py)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("nodes", rows(&mesh.nodes))?;
    d.set_item("elements", mesh.elements.clone())?;
    d.set_item("boundary_faces", mesh.faces.len())?;
    Ok(d.into_any().unbind())
}

/// Nodal fiber, sheet and sheet-normal directions on the mechanics mesh.
#[pyfunction]
fn fibers(py: Python<'_>, config: &PyConfig) -> PyResult<Py<PyAny>> {
    let c = &config.inner;
    let (f, fields) = py
        .detach(|| {
            let mesh = build_geometry(&c.geometry)?;
            generate_fibers(&mesh, c.fibers.rule, &c.fibers.angles)
        })
        .map_err(to_py)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("f0", rows(&f.f0))?;
    d.set_item("s0", rows(&f.s0))?;
    d.set_item("n0", rows(&f.n0))?;
    d.set_item("phi", fields.phi.clone())?;
    d.set_item("psi", fields.psi.clone())?;
    d.set_item("fallback_nodes", f.fallback_nodes.clone())?;
    Ok(d.into_any().unbind())
}

/// Run the closed-loop circulation alone with its own time-varying
/// elastance ventricles. Pressures are in mmHg, volumes in mL, time in s.
#[pyfunction]
#[pyo3(signature = (config, beats = 10, dt = 5e-4))]
fn circulation(config: &PyConfig, beats: usize, dt: f64) -> PyResult<BTreeMap<String, Vec<f64>>> {
    let params = config.inner.circulation;
    let circ = Circulation::new(params).map_err(to_py)?;
    let samples = circ
        .run(Default::default(), beats, dt)
        .map_err(to_py)?;
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (t, s) in &samples {
        let o = circ.outputs(*t, s, CircMode::Standalone);
        for (k, v) in [
            ("t", *t),
            ("p_lv", o.p_lv),
            ("p_rv", o.p_rv),
            ("p_la", o.p_la),
            ("p_ra", o.p_ra),
            ("v_lv", s.v_lv),
            ("v_rv", s.v_rv),
            ("total_volume", s.total_volume(&params)),
        ] {
            out.entry(k.to_string()).or_default().push(v);
        }
    }
    Ok(out)
}

/// Run the full pipeline (pre-run, reference recovery, inflation,
/// limit-cycle acceleration and recorded beats) and write outputs to the
/// configured directory.
///
/// Returns `(biomarkers, steps)`: a dict of scalar biomarkers and a dict
/// of per-step columns keyed like the `steps.csv` header.
#[pyfunction]
#[pyo3(signature = (config, out_dir = None, resume = false))]
fn simulate(
    py: Python<'_>,
    config: &PyConfig,
    out_dir: Option<PathBuf>,
    resume: bool,
) -> PyResult<(BTreeMap<String, f64>, BTreeMap<String, Vec<f64>>)> {
    let mut c = config.inner.clone();
    if let Some(dir) = out_dir {
        c.output.dir = dir;
    }
    let summary = py.detach(|| Pipeline::new(c, resume)?.run()).map_err(to_py)?;
    let biomarkers = summary.biomarkers.entries().into_iter().collect();
    Ok((biomarkers, step_columns(&summary.records)))
}

fn step_columns(records: &[cardioem_core::coupling::sis::StepRecord]) -> BTreeMap<String, Vec<f64>> {
    use cardioem_core::coupling::sis::StepRecord;
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        for (k, v) in StepRecord::HEADER.iter().zip(r.row()) {
            out.entry(k.to_string()).or_default().push(v);
        }
    }
    out
}

/// Read a CSV log written by the engine. Returns `(config_hash, columns)`.
#[pyfunction]
fn read_log(path: PathBuf) -> PyResult<(Option<String>, BTreeMap<String, Vec<f64>>)> {
    let table = read_csv(&path).map_err(to_py)?;
    let cols = table
        .header
        .iter()
        .filter_map(|h| Some((h.clone(), table.column(h)?)))
        .collect();
    Ok((table.config_hash, cols))
}

#[pymodule]
fn cardioem(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(build_mesh, m)?)?;
    m.add_function(wrap_pyfunction!(fibers, m)?)?;
    m.add_function(wrap_pyfunction!(circulation, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(read_log, m)?)?;
    Ok(())
}
