//! Python module `iaelab`: training, evaluation and the verification suites.
//!
//! Matrices cross the boundary as lists of rows; structured results as
//! plain dicts.

use std::path::PathBuf;

use iae_lab::trainer::{run_training_in, TrainConfig, Trainer as CoreTrainer};
use iae_lab::Tensor;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: iae_lab::Error) -> PyErr {
    use iae_lab::Error as E;
    match e {
        E::Io { .. } => PyIOError::new_err(e.to_string()),
        E::NonFinite(_) | E::Checkpoint(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_tensor(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    Tensor::from_rows(&rows).map_err(py_err)
}

fn to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

/// Serializable value to a Python object via `json.loads`.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_config(json: &str) -> PyResult<TrainConfig> {
    TrainConfig::from_json(json).map_err(py_err)
}

/// A model mid-training, built from a JSON config string.
#[pyclass(module = "iaelab")]
struct Trainer {
    inner: CoreTrainer,
}

#[pymethods]
impl Trainer {
    #[new]
    fn new(config_json: &str) -> PyResult<Self> {
        Ok(Self { inner: CoreTrainer::new(parse_config(config_json)?).map_err(py_err)? })
    }

    #[staticmethod]
    fn from_checkpoint(config_json: &str, dir: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: CoreTrainer::from_checkpoint(parse_config(config_json)?, &dir).map_err(py_err)? })
    }

    #[getter]
    fn step(&self) -> u64 {
        self.inner.step
    }

    /// Runs one step and returns its report.
    fn train_step<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let report = self.inner.train_step().map_err(py_err)?;
        to_py(py, &report)
    }

    #[pyo3(signature = (sample_dir=None))]
    fn evaluate<'py>(&self, py: Python<'py>, sample_dir: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
        let summary = self.inner.evaluate(sample_dir.as_deref()).map_err(py_err)?;
        to_py(py, &summary)
    }

    fn save_checkpoint(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save_checkpoint(&dir).map_err(py_err)
    }

    /// Encoder outputs for rows of `x`; `noise` is required when the encoder is stochastic.
    #[pyo3(signature = (x, noise=None))]
    fn encode(&self, x: Vec<Vec<f64>>, noise: Option<Vec<Vec<f64>>>) -> PyResult<Vec<Vec<f64>>> {
        let n = noise.map(to_tensor).transpose()?;
        let z = self.inner.nets.encoder.mlp.forward(&to_tensor(x)?, n.as_ref()).map_err(py_err)?;
        Ok(to_rows(&z))
    }

    #[pyo3(signature = (z, noise=None))]
    fn decode(&self, z: Vec<Vec<f64>>, noise: Option<Vec<Vec<f64>>>) -> PyResult<Vec<Vec<f64>>> {
        let n = noise.map(to_tensor).transpose()?;
        let x = self.inner.nets.decoder.mlp.forward(&to_tensor(z)?, n.as_ref()).map_err(py_err)?;
        Ok(to_rows(&x))
    }

    fn __repr__(&self) -> String {
        format!("Trainer(experiment={:?}, step={})", self.inner.config.experiment, self.inner.step)
    }
}

/// Full run into `output_dir`; returns the final evaluation summary.
#[pyfunction]
fn train<'py>(py: Python<'py>, config_json: &str, output_dir: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let cfg = parse_config(config_json)?;
    let artifacts = py.detach(|| run_training_in(&cfg, &output_dir)).map_err(py_err)?;
    to_py(py, &artifacts.summary)
}

/// Tabular identity sweep; one dict per check.
#[pyfunction]
#[pyo3(signature = (trials, seed, tolerance=1e-9))]
fn oracle_check<'py>(py: Python<'py>, trials: u64, seed: u64, tolerance: f64) -> PyResult<Bound<'py, PyAny>> {
    let rows = iae_lab::oracle::sweep(trials, seed, tolerance).map_err(py_err)?;
    to_py(py, &rows)
}

#[pyfunction]
fn gradcheck<'py>(py: Python<'py>, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let rows = iae_lab::gradcheck::run_gradcheck(seed).map_err(py_err)?;
    to_py(py, &rows)
}

#[pyfunction]
fn energy_distance(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    iae_lab::eval::energy_distance(&to_tensor(a)?, &to_tensor(b)?).map_err(py_err)
}

#[pyfunction]
fn cluster_error(assignments: Vec<usize>, labels: Vec<usize>, k_assign: usize, k_label: usize) -> PyResult<f64> {
    iae_lab::eval::cluster_error(&assignments, &labels, k_assign, k_label).map_err(py_err)
}

#[pyfunction]
fn posterior_separation(clouds: Vec<Vec<Vec<f64>>>) -> PyResult<f64> {
    let ts = clouds.into_iter().map(to_tensor).collect::<PyResult<Vec<_>>>()?;
    iae_lab::eval::posterior_separation(&ts).map_err(py_err)
}

/// Ring mixture samples as `(points, labels)`.
#[pyfunction]
fn sample_ring_mog(k: usize, radius: f64, sigma: f64, n: usize, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let spec = iae_lab::datasets::make_ring_mog(k, radius, sigma).map_err(py_err)?;
    let lp = iae_lab::datasets::sample_mog(&spec, n, seed).map_err(py_err)?;
    Ok((to_rows(&lp.points), lp.labels.unwrap_or_default()))
}

/// IDX file as a dict with `magic`, `count`, `item_shape` and flat `values`.
#[pyfunction]
fn load_idx<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let d = iae_lab::datasets::load_idx(&path).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("magic", d.magic)?;
    out.set_item("count", d.count)?;
    out.set_item("item_shape", d.item_shape.clone())?;
    out.set_item("values", d.tensor.data().to_vec())?;
    Ok(out)
}

#[pymodule]
fn iaelab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Trainer>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_check, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(energy_distance, m)?)?;
    m.add_function(wrap_pyfunction!(cluster_error, m)?)?;
    m.add_function(wrap_pyfunction!(posterior_separation, m)?)?;
    m.add_function(wrap_pyfunction!(sample_ring_mog, m)?)?;
    m.add_function(wrap_pyfunction!(load_idx, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
