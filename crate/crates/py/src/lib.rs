//! Python module `tilesim`: scenarios, runs, fabrics and the standalone
//! gain, trilateration and PoE helpers.

use std::path::PathBuf;

use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;

use tilesim_core::coherent;
use tilesim_core::fabric::{self, FabricConfig};
use tilesim_core::power::PowerClass;
use tilesim_core::rover;
use tilesim_core::scenario::{self, Stage};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    match v {
        Value::Null => Ok(py.None().into_bound(py)),
        Value::Bool(b) => b.into_bound_py_any(py),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_bound_py_any(py),
            (None, Some(u)) => u.into_bound_py_any(py),
            _ => n.as_f64().unwrap_or(f64::NAN).into_bound_py_any(py),
        },
        Value::String(s) => s.into_bound_py_any(py),
        Value::Array(a) => {
            let list = PyList::empty(py);
            for x in a {
                list.append(to_py(py, x)?)?;
            }
            Ok(list.into_any())
        }
        Value::Object(o) => {
            let dict = PyDict::new(py);
            for (k, x) in o {
                dict.set_item(k, to_py(py, x)?)?;
            }
            Ok(dict.into_any())
        }
    }
}

#[pyclass(name = "Scenario", module = "tilesim", skip_from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: scenario::Scenario,
}

#[pymethods]
impl PyScenario {
    #[new]
    fn new() -> Self {
        PyScenario {
            inner: scenario::Scenario::default(),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        scenario::Scenario::from_toml(text)
            .map(|inner| PyScenario { inner })
            .map_err(value_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        scenario::Scenario::load(&path)
            .map(|inner| PyScenario { inner })
            .map_err(value_err)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn duration_s(&self) -> f64 {
        self.inner.duration_s
    }

    #[setter]
    fn set_duration_s(&mut self, d: f64) {
        self.inner.duration_s = d;
    }

    #[getter]
    fn stages(&self) -> Vec<&'static str> {
        self.inner.stages.iter().map(|s| s.name()).collect()
    }

    #[setter]
    fn set_stages(&mut self, names: Vec<String>) -> PyResult<()> {
        let mut out = Vec::new();
        for n in names {
            let s = Stage::ALL
                .iter()
                .find(|s| s.name() == n)
                .ok_or_else(|| PyValueError::new_err(format!("unknown stage `{n}`")))?;
            out.push(*s);
        }
        self.inner.stages = out;
        Ok(())
    }

    /// `(code, message)` pairs; empty when the scenario is runnable.
    fn validate(&self) -> Vec<(String, String)> {
        self.inner
            .validate()
            .into_iter()
            .map(|d| (d.code, d.message))
            .collect()
    }

    #[pyo3(signature = (out_dir=None, trace=false))]
    fn run(&self, py: Python<'_>, out_dir: Option<PathBuf>, trace: bool) -> PyResult<RunResult> {
        let dir = out_dir.unwrap_or_else(|| self.inner.output_path());
        let s = self.inner.clone();
        let out = py
            .detach(move || scenario::run_in(&s, &dir, trace))
            .map_err(value_err)?;
        Ok(RunResult {
            report: serde_json::from_str(&out.report.to_json()).map_err(value_err)?,
            dir: out.dir,
            ok: out.report.ok(),
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(seed={}, duration_s={}, stages={:?})",
            self.inner.seed,
            self.inner.duration_s,
            self.stages()
        )
    }
}

#[pyclass(module = "tilesim", frozen)]
struct RunResult {
    report: serde_json::Value,
    dir: PathBuf,
    ok: bool,
}

#[pymethods]
impl RunResult {
    #[getter]
    fn dir(&self) -> PathBuf {
        self.dir.clone()
    }

    #[getter]
    fn ok(&self) -> bool {
        self.ok
    }

    fn report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.report)
    }

    /// Dotted lookup such as `sync.p99_residual_ps`.
    fn metric<'py>(&self, py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyAny>> {
        match scenario::lookup(&self.report, name) {
            Some(v) => to_py(py, v),
            None => Err(PyKeyError::new_err(format!(
                "unknown metric `{name}`; available: {}",
                scenario::metric_names(&self.report).join(", ")
            ))),
        }
    }

    fn metric_names(&self) -> Vec<String> {
        scenario::metric_names(&self.report)
    }
}

#[pyclass(name = "Fabric", module = "tilesim", frozen)]
struct PyFabric {
    inner: fabric::Fabric,
}

#[pymethods]
impl PyFabric {
    /// Builds the default layout, optionally from a JSON `FabricConfig`.
    #[new]
    #[pyo3(signature = (config_json=None))]
    fn new(config_json: Option<&str>) -> PyResult<Self> {
        let cfg: FabricConfig = match config_json {
            Some(t) => serde_json::from_str(t).map_err(value_err)?,
            None => FabricConfig::default(),
        };
        fabric::build_default_fabric(&cfg)
            .map(|inner| PyFabric { inner })
            .map_err(value_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        fabric::Fabric::from_json(text)
            .map(|inner| PyFabric { inner })
            .map_err(value_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn validate(&self) -> Vec<String> {
        self.inner
            .validate()
            .iter()
            .map(|i| i.to_string())
            .collect()
    }

    #[getter]
    fn tile_count(&self) -> usize {
        self.inner.tiles.len()
    }

    #[getter]
    fn switch_count(&self) -> usize {
        self.inner.switches.len()
    }

    #[getter]
    fn link_count(&self) -> usize {
        self.inner.links.len()
    }

    /// Link ids from the broker side down to `tile`.
    fn path_to_tile(&self, tile: u32) -> PyResult<Vec<u32>> {
        self.inner
            .path_to_tile(tile)
            .map(|p| p.to_vec())
            .map_err(value_err)
    }

    /// `(up_ps, down_ps)` one-way delay of a link.
    fn link_delay_ps(&self, link: u32) -> PyResult<(u64, u64)> {
        let l = self
            .inner
            .links
            .get(link as usize)
            .ok_or_else(|| PyValueError::new_err(format!("unknown link {link}")))?;
        Ok((
            l.delay(fabric::Direction::Up).as_ps(),
            l.delay(fabric::Direction::Down).as_ps(),
        ))
    }
}

#[pyfunction]
fn coherent_gain(phases: Vec<f64>) -> PyResult<f64> {
    coherent::coherent_gain(&phases).map_err(value_err)
}

#[pyfunction]
fn check_carrier(carrier_hz: f64) -> PyResult<()> {
    coherent::check_carrier(carrier_hz).map_err(value_err)
}

/// Plan-view fix at known height `z`: `(x, y, rms_residual_m)`.
#[pyfunction]
fn trilaterate(ranges: Vec<f64>, anchors: Vec<[f64; 3]>, z: f64) -> PyResult<(f64, f64, f64)> {
    rover::trilaterate(&ranges, &anchors, z)
        .map(|f| (f.position[0], f.position[1], f.rms_residual_m))
        .map_err(value_err)
}

/// `(pd_power_w, pse_alloc_w)` for a PoE class.
#[pyfunction]
fn power_class(class_id: u8) -> PyResult<(f64, f64)> {
    PowerClass::get(class_id)
        .map(|c| (c.pd_power_w(), c.pse_alloc_w()))
        .ok_or_else(|| PyValueError::new_err(format!("unknown PoE class {class_id}")))
}

#[pyfunction]
fn validate_fabric_document(text: &str) -> PyResult<Vec<(String, String)>> {
    scenario::validate_fabric_document(text)
        .map(|d| d.into_iter().map(|d| (d.code, d.message)).collect())
        .map_err(PyValueError::new_err)
}

#[pymodule]
fn tilesim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<RunResult>()?;
    m.add_class::<PyFabric>()?;
    m.add_function(wrap_pyfunction!(coherent_gain, m)?)?;
    m.add_function(wrap_pyfunction!(check_carrier, m)?)?;
    m.add_function(wrap_pyfunction!(trilaterate, m)?)?;
    m.add_function(wrap_pyfunction!(power_class, m)?)?;
    m.add_function(wrap_pyfunction!(validate_fabric_document, m)?)?;
    Ok(())
}
