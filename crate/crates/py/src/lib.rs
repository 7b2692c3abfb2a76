use std::collections::HashSet;
use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ::recgoat::cli::{self, RunConfig};
use ::recgoat::{alignment, evaluator, theory, trainer, Error};

fn py_err(e: Error) -> PyErr {
    match cli::exit_code(&e) {
        cli::EXIT_CONFIG => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_array(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Array2::from_shape_vec((n, m), rows.into_iter().flatten().collect()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Run configuration. Built from a JSON object string; unset keys keep
/// their defaults.
#[pyclass(name = "Config", module = "recgoat")]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (json = None))]
    fn new(json: Option<&str>) -> PyResult<Self> {
        let inner = match json {
            Some(s) => RunConfig::from_json(s).map_err(py_err)?,
            None => RunConfig::default(),
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfig::load(Some(&path)).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn help() -> String {
        RunConfig::help_text()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(py_err)
    }

    #[getter]
    fn out_dir(&self) -> PathBuf {
        self.inner.out_dir.clone()
    }

    #[setter]
    fn set_out_dir(&mut self, dir: PathBuf) {
        self.inner.out_dir = dir;
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
    fn variant(&self) -> String {
        self.inner.variant.to_string()
    }

    #[setter]
    fn set_variant(&mut self, name: &str) -> PyResult<()> {
        self.inner.variant = name.parse().map_err(py_err)?;
        Ok(())
    }

    fn __repr__(&self) -> String {
        format!("Config(variant={:?}, seed={}, out_dir={:?})", self.inner.variant.to_string(), self.inner.seed, self.inner.out_dir)
    }
}

fn checked(cfg: &PyConfig) -> PyResult<&RunConfig> {
    cfg.inner.validate().map_err(py_err)?;
    Ok(&cfg.inner)
}

/// Trained model state.
#[pyclass(name = "Checkpoint", module = "recgoat")]
struct PyCheckpoint {
    inner: trainer::Checkpoint,
}

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: trainer::load_checkpoint(&dir).map_err(py_err)?,
        })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        trainer::save_checkpoint(&dir, &self.inner).map_err(py_err)
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.inner.epoch
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.config.variant.to_string()
    }

    #[getter]
    fn user_repr(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.user_repr)
    }

    #[getter]
    fn item_repr(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.item_repr)
    }

    /// Metrics of the saved epoch as a JSON string.
    #[getter]
    fn metrics(&self) -> String {
        self.inner.metrics.to_string()
    }

    /// Top-`k` item indices for `user`, skipping `exclude`.
    #[pyo3(signature = (user, k = 10, exclude = Vec::new()))]
    fn recommend(&self, user: usize, k: usize, exclude: Vec<usize>) -> PyResult<Vec<usize>> {
        if user >= self.inner.user_repr.nrows() {
            return Err(PyValueError::new_err(format!("user {user} out of range")));
        }
        let mask: HashSet<usize> = exclude.into_iter().collect();
        evaluator::top_k(self.inner.user_repr.row(user), &self.inner.item_repr, &mask, k).map_err(py_err)
    }
}

#[pyfunction]
fn train(py: Python<'_>, cfg: &PyConfig) -> PyResult<PyCheckpoint> {
    let cfg = checked(cfg)?.clone();
    let inner = py.detach(move || cli::cmd_train(&cfg)).map_err(py_err)?;
    Ok(PyCheckpoint { inner })
}

/// Test-set metrics of the checkpoint under `cfg.out_dir` as a JSON string.
#[pyfunction]
fn evaluate(py: Python<'_>, cfg: &PyConfig) -> PyResult<String> {
    let cfg = checked(cfg)?.clone();
    py.detach(move || cli::cmd_evaluate(&cfg)).map(|v| v.to_string()).map_err(py_err)
}

/// Dataset statistics of the written prepared layout as a JSON string.
#[pyfunction]
fn generate(cfg: &PyConfig) -> PyResult<String> {
    let stats = cli::cmd_generate(checked(cfg)?).map_err(py_err)?;
    Ok(serde_json::to_string(&stats).expect("stats serialise"))
}

#[pyfunction]
fn prepare(cfg: &PyConfig) -> PyResult<String> {
    let stats = cli::cmd_prepare(checked(cfg)?).map_err(py_err)?;
    Ok(serde_json::to_string(&stats).expect("stats serialise"))
}

/// Ablation table as a JSON string.
#[pyfunction]
fn ablate(py: Python<'_>, cfg: &PyConfig) -> PyResult<String> {
    let cfg = checked(cfg)?.clone();
    let report = py.detach(move || cli::cmd_ablate(&cfg)).map_err(py_err)?;
    Ok(serde_json::to_string(&report).expect("report serialises"))
}

/// `(passed, reports_json)`.
#[pyfunction]
fn verify_bounds(py: Python<'_>, cfg: &PyConfig) -> PyResult<(bool, String)> {
    let cfg = checked(cfg)?.clone();
    let suite = py.detach(move || cli::cmd_verify_bounds(&cfg)).map_err(py_err)?;
    Ok((suite.passed(), serde_json::to_string(&suite.reports()).expect("reports serialise")))
}

/// `(gamma_t, gamma_v, gamma_id, recall, ndcg)` per grid point.
#[pyfunction]
fn sweep(py: Python<'_>, cfg: &PyConfig) -> PyResult<Vec<(f64, f64, f64, f64, f64)>> {
    let cfg = checked(cfg)?.clone();
    let pts = py.detach(move || cli::cmd_sweep(&cfg)).map_err(py_err)?;
    Ok(pts.into_iter().map(|p| (p.gamma_t, p.gamma_v, p.gamma_id, p.recall, p.ndcg)).collect())
}

/// Entropic transport plan at absolute regulariser `epsilon`; returns
/// `(plan, cost, converged)`.
#[pyfunction]
#[pyo3(signature = (cost, p, q, epsilon = 0.05, max_iters = 200, tol = 1e-6))]
fn sinkhorn(cost: Vec<Vec<f64>>, p: Vec<f64>, q: Vec<f64>, epsilon: f64, max_iters: usize, tol: f64) -> PyResult<(Vec<Vec<f64>>, f64, bool)> {
    let r = alignment::sinkhorn(&to_array(cost)?, &p, &q, epsilon, max_iters, tol).map_err(py_err)?;
    Ok((to_rows(&r.plan), r.cost, r.converged))
}

#[pyfunction]
#[pyo3(signature = (z_m, z_id, s = 1.0))]
fn cost_matrix(z_m: Vec<Vec<f64>>, z_id: Vec<Vec<f64>>, s: f64) -> PyResult<Vec<Vec<f64>>> {
    let c = alignment::cost_matrix(&to_array(z_m)?, &to_array(z_id)?, s).map_err(py_err)?;
    Ok(to_rows(&c))
}

/// Exact uniform-marginal transport cost by enumeration (n <= 7).
#[pyfunction]
fn exact_w1(cost: Vec<Vec<f64>>) -> PyResult<f64> {
    theory::exact_w1_bruteforce(&to_array(cost)?).map_err(py_err)
}

#[pyfunction]
fn recall_at_k(ranked: Vec<usize>, relevant: Vec<usize>, k: usize) -> PyResult<f64> {
    evaluator::recall_at_k(&ranked, &relevant.into_iter().collect(), k).map_err(py_err)
}

#[pyfunction]
fn ndcg_at_k(ranked: Vec<usize>, relevant: Vec<usize>, k: usize) -> PyResult<f64> {
    evaluator::ndcg_at_k(&ranked, &relevant.into_iter().collect(), k).map_err(py_err)
}

#[pymodule]
fn recgoat(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add("VARIANTS", trainer::Variant::ALL.iter().map(|v| v.to_string()).collect::<Vec<_>>())?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(prepare, m)?)?;
    m.add_function(wrap_pyfunction!(ablate, m)?)?;
    m.add_function(wrap_pyfunction!(verify_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(sinkhorn, m)?)?;
    m.add_function(wrap_pyfunction!(cost_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(exact_w1, m)?)?;
    m.add_function(wrap_pyfunction!(recall_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    Ok(())
}
