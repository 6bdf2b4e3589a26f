//! Python bindings for the linchain adapter library.
//!
//! Exposes the dense matrix type, adapter construction and evaluation,
//! the verified analytic gradients with their finite-difference check,
//! and a convenience training entry point for the synthetic
//! target-recovery task. See `python/smoke_test.py` for a tour.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use linchain::adapters::{self, AdapterConfig as CoreConfig, ChainInit, Method};
use linchain::experiments::{checkpoint_load, checkpoint_save};
use linchain::gradients::{self, LossSpec};
use linchain::linalg::{combine_seeds, Matrix as CoreMatrix, RngState};
use linchain::training::{self, OptimizerConfig, OptimizerKind, TaskKind, TaskSpec};

fn to_py_err(e: linchain::Error) -> PyErr {
    match e {
        linchain::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_method(name: &str) -> PyResult<Method> {
    match name {
        "lora" => Ok(Method::Lora),
        "moslora" => Ok(Method::Moslora),
        "linchain" => Ok(Method::Linchain),
        _ => Err(PyValueError::new_err(format!(
            "unknown method {name:?}; expected lora, moslora or linchain"
        ))),
    }
}

fn parse_chain_init(name: &str) -> PyResult<ChainInit> {
    match name {
        "kaiming" => Ok(ChainInit::Kaiming),
        "identity" => Ok(ChainInit::Identity),
        _ => Err(PyValueError::new_err(format!(
            "unknown chain_init {name:?}; expected kaiming or identity"
        ))),
    }
}

/// Dense row-major f64 matrix.
#[pyclass(name = "Matrix", skip_from_py_object)]
#[derive(Clone)]
struct PyMatrix {
    inner: CoreMatrix,
}

#[pymethods]
impl PyMatrix {
    /// Build from a nested list of rows.
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(PyMatrix {
            inner: CoreMatrix::from_rows(&rows).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    fn zeros(rows: usize, cols: usize) -> Self {
        PyMatrix {
            inner: CoreMatrix::zeros(rows, cols),
        }
    }

    #[staticmethod]
    fn identity(n: usize) -> Self {
        PyMatrix {
            inner: CoreMatrix::identity(n, n),
        }
    }

    /// Entries i.i.d. uniform on [-sqrt(6/rows), sqrt(6/rows)], drawn
    /// from the seeded deterministic generator.
    #[staticmethod]
    fn kaiming_uniform(rows: usize, cols: usize, seed: u64) -> Self {
        PyMatrix {
            inner: CoreMatrix::kaiming_uniform(rows, cols, &mut RngState::new(seed)),
        }
    }

    #[staticmethod]
    fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Self {
        PyMatrix {
            inner: CoreMatrix::uniform(rows, cols, lo, hi, &mut RngState::new(seed)),
        }
    }

    #[getter]
    fn rows(&self) -> usize {
        self.inner.rows()
    }

    #[getter]
    fn cols(&self) -> usize {
        self.inner.cols()
    }

    fn get(&self, i: usize, j: usize) -> PyResult<f64> {
        if i >= self.inner.rows() || j >= self.inner.cols() {
            return Err(PyValueError::new_err(format!(
                "index ({i}, {j}) out of range for {}x{}",
                self.inner.rows(),
                self.inner.cols()
            )));
        }
        Ok(self.inner.get(i, j))
    }

    /// The matrix as a nested list of rows.
    fn tolist(&self) -> Vec<Vec<f64>> {
        (0..self.inner.rows())
            .map(|i| self.inner.row(i).to_vec())
            .collect()
    }

    fn matmul(&self, other: &PyMatrix) -> PyResult<Self> {
        Ok(PyMatrix {
            inner: self.inner.matmul(&other.inner).map_err(to_py_err)?,
        })
    }

    fn transpose(&self) -> Self {
        PyMatrix {
            inner: self.inner.transpose(),
        }
    }

    fn max_abs_diff(&self, other: &PyMatrix) -> PyResult<f64> {
        self.inner.max_abs_diff(&other.inner).map_err(to_py_err)
    }

    fn frobenius_norm(&self) -> f64 {
        self.inner.frobenius_norm()
    }

    fn __repr__(&self) -> String {
        format!("Matrix({}x{})", self.inner.rows(), self.inner.cols())
    }
}

/// Declarative adapter description: method, dims, chain shape, seed.
#[pyclass(name = "AdapterConfig", skip_from_py_object)]
#[derive(Clone)]
struct PyAdapterConfig {
    inner: CoreConfig,
}

#[pymethods]
impl PyAdapterConfig {
    #[new]
    #[pyo3(signature = (method, d_in, d_out, chain_dims, scaling=1.0, seed=0, chain_init="kaiming"))]
    fn new(
        method: &str,
        d_in: usize,
        d_out: usize,
        chain_dims: Vec<usize>,
        scaling: f64,
        seed: u64,
        chain_init: &str,
    ) -> PyResult<Self> {
        let mut inner = CoreConfig::new(parse_method(method)?, d_in, d_out, chain_dims);
        inner.scaling = scaling;
        inner.seed = seed;
        inner.chain_init = parse_chain_init(chain_init)?;
        inner.validate().map_err(to_py_err)?;
        Ok(PyAdapterConfig { inner })
    }

    #[getter]
    fn method(&self) -> String {
        self.inner.method.label().to_string()
    }

    #[getter]
    fn chain_dims(&self) -> Vec<usize> {
        self.inner.chain_dims.clone()
    }

    /// Exact count of trainable scalars.
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn __repr__(&self) -> String {
        self.inner.label()
    }
}

/// A frozen base weight plus trainable adapter factors.
#[pyclass(name = "AdaptedLinear")]
struct PyAdaptedLinear {
    inner: adapters::AdaptedLinear,
}

#[pymethods]
impl PyAdaptedLinear {
    /// Initialize over `w0`: A and the chain Kaiming-uniform, B zero,
    /// so the fresh adapter computes exactly `x @ w0`.
    #[staticmethod]
    fn init(config: &PyAdapterConfig, w0: &PyMatrix, seed: u64) -> PyResult<Self> {
        let inner = adapters::init_adapter(
            &config.inner,
            w0.inner.clone(),
            &mut RngState::new(seed),
        )
        .map_err(to_py_err)?;
        Ok(PyAdaptedLinear { inner })
    }

    fn forward(&self, x: &PyMatrix) -> PyResult<PyMatrix> {
        Ok(PyMatrix {
            inner: self.inner.forward(&x.inner).map_err(to_py_err)?,
        })
    }

    /// The materialized update `scaling * A @ W1 @ ... @ Wn @ B`.
    fn delta_weight(&self) -> PyMatrix {
        PyMatrix {
            inner: self.inner.delta_weight(),
        }
    }

    /// `w0 + delta_weight`, the inference-time merged weight.
    fn merge(&self) -> PyMatrix {
        PyMatrix {
            inner: self.inner.merge(),
        }
    }

    /// Fold the chain into B, producing a plain lora adapter with the
    /// same update matrix.
    fn collapse_to_lora(&self) -> Self {
        PyAdaptedLinear {
            inner: self.inner.collapse_to_lora(),
        }
    }

    /// Overwrite all trainable matrices with uniform draws (for checks).
    fn randomize_uniform(&mut self, lo: f64, hi: f64, seed: u64) {
        self.inner.randomize_uniform(lo, hi, &mut RngState::new(seed));
    }

    fn param_count(&self) -> usize {
        self.inner.config().param_count()
    }

    fn param_names(&self) -> Vec<String> {
        self.inner.param_names()
    }

    #[getter]
    fn w0(&self) -> PyMatrix {
        PyMatrix {
            inner: self.inner.w0().clone(),
        }
    }

    #[getter]
    fn a(&self) -> PyMatrix {
        PyMatrix {
            inner: self.inner.a().clone(),
        }
    }

    #[getter]
    fn b(&self) -> PyMatrix {
        PyMatrix {
            inner: self.inner.b().clone(),
        }
    }

    #[getter]
    fn chain(&self) -> Vec<PyMatrix> {
        self.inner
            .chain()
            .iter()
            .map(|m| PyMatrix { inner: m.clone() })
            .collect()
    }

    /// Write a versioned binary checkpoint (config + all matrices).
    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint_save(&self.inner, &path).map_err(to_py_err)
    }

    /// Load a checkpoint written by `save`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyAdaptedLinear {
            inner: checkpoint_load(&path).map_err(to_py_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "AdaptedLinear({}, {}x{})",
            self.inner.config().label(),
            self.inner.config().d_in,
            self.inner.config().d_out
        )
    }
}

fn check_report_to_dict(py: Python<'_>, report: gradients::CheckReport) -> PyResult<Py<PyDict>> {
    let dict = PyDict::new(py);
    dict.set_item("tolerance", report.tolerance)?;
    dict.set_item("max_rel_error", report.max_rel_error)?;
    dict.set_item("pass", report.pass)?;
    let groups = PyDict::new(py);
    for g in report.groups {
        groups.set_item(g.name, g.max_rel_error)?;
    }
    dict.set_item("groups", groups)?;
    Ok(dict.into())
}

/// Check the analytic gradients against central finite differences under
/// a mean-squared-error loss. Returns a dict with per-group worst
/// relative errors and a pass flag.
#[pyfunction]
#[pyo3(signature = (adapter, x, target, tol=1e-5))]
fn grad_check_mse(
    py: Python<'_>,
    adapter: &PyAdaptedLinear,
    x: &PyMatrix,
    target: &PyMatrix,
    tol: f64,
) -> PyResult<Py<PyDict>> {
    let loss = LossSpec::Mse {
        target: target.inner.clone(),
    };
    let report =
        gradients::grad_check(&adapter.inner, &x.inner, &loss, tol).map_err(to_py_err)?;
    check_report_to_dict(py, report)
}

/// Same check under softmax cross-entropy with integer labels.
#[pyfunction]
#[pyo3(signature = (adapter, x, labels, tol=1e-5))]
fn grad_check_cross_entropy(
    py: Python<'_>,
    adapter: &PyAdaptedLinear,
    x: &PyMatrix,
    labels: Vec<usize>,
    tol: f64,
) -> PyResult<Py<PyDict>> {
    let loss = LossSpec::SoftmaxCrossEntropy { labels };
    let report =
        gradients::grad_check(&adapter.inner, &x.inner, &loss, tol).map_err(to_py_err)?;
    check_report_to_dict(py, report)
}

/// For a chain of length n, which other parameter matrices each
/// gradient depends on, plus the total factor-occurrence count
/// (n+2)(n+1).
#[pyfunction]
fn trace_dependencies(py: Python<'_>, n: usize) -> PyResult<Py<PyDict>> {
    let report = gradients::trace_dependencies(n);
    let dict = PyDict::new(py);
    dict.set_item("n", report.n)?;
    dict.set_item("total_factor_occurrences", report.total_factor_occurrences)?;
    let deps = PyDict::new(py);
    for d in report.dependencies {
        deps.set_item(d.param, d.depends_on)?;
    }
    dict.set_item("dependencies", deps)?;
    Ok(dict.into())
}

/// Train an adapter on the synthetic target-recovery task and return the
/// per-epoch `(epoch, train_loss, eval_loss)` trace. Fully deterministic
/// in the given seeds.
#[pyfunction]
#[pyo3(signature = (config, target_rank, epochs, learning_rate, noise_std=0.0,
                    optimizer="adam", batch_size=32, train_size=256, eval_size=128,
                    data_seed=11, run_seed=1, epsilon=1e-8))]
#[allow(clippy::too_many_arguments)]
fn train_target_recovery(
    config: &PyAdapterConfig,
    target_rank: usize,
    epochs: usize,
    learning_rate: f64,
    noise_std: f64,
    optimizer: &str,
    batch_size: usize,
    train_size: usize,
    eval_size: usize,
    data_seed: u64,
    run_seed: u64,
    epsilon: f64,
) -> PyResult<Vec<(usize, f64, f64)>> {
    let task = TaskSpec {
        kind: TaskKind::TargetRecovery,
        d_in: config.inner.d_in,
        d_out: config.inner.d_out,
        target_rank,
        train_size,
        eval_size,
        data_seed,
        noise_std,
    };
    let kind = match optimizer {
        "adam" => OptimizerKind::Adam,
        "sgd" => OptimizerKind::Sgd,
        _ => {
            return Err(PyValueError::new_err(format!(
                "unknown optimizer {optimizer:?}; expected adam or sgd"
            )))
        }
    };
    let opt = OptimizerConfig {
        kind,
        learning_rate,
        momentum: 0.0,
        beta1: 0.9,
        beta2: 0.999,
        epsilon,
        epochs,
        batch_size,
    };
    let data = training::make_task(&task).map_err(to_py_err)?;
    let mut rng = RngState::new(combine_seeds(config.inner.seed, run_seed));
    let mut ad =
        adapters::init_adapter(&config.inner, data.w0.clone(), &mut rng).map_err(to_py_err)?;
    let run = training::train(&mut ad, &data, &opt, run_seed).map_err(to_py_err)?;
    Ok(run
        .records
        .iter()
        .map(|r| (r.epoch, r.train_loss, r.eval_loss))
        .collect())
}

#[pymodule]
fn linchain_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMatrix>()?;
    m.add_class::<PyAdapterConfig>()?;
    m.add_class::<PyAdaptedLinear>()?;
    m.add_function(wrap_pyfunction!(grad_check_mse, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check_cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(trace_dependencies, m)?)?;
    m.add_function(wrap_pyfunction!(train_target_recovery, m)?)?;
    Ok(())
}
