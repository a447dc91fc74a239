//! Python bindings for the asynchronous Local-SGD simulator.

use async_local_sgd::data::shard_probabilities as shard_probs;
use async_local_sgd::experiment::{self, EquivalenceOptions};
use async_local_sgd::optim::{sequential_nesterov_closed_form, LrScheduleSpec};
use async_local_sgd::sim::{self, dylu_steps as dylu};
use async_local_sgd::{Activation, Batch, Error, ExperimentConfig, MetricsRow, Mlp, MlpConfig, ParamVector};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io { .. } => PyIOError::new_err(err.to_string()),
        Error::NonFinite(_) | Error::Unsupported(_) => PyRuntimeError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn row_dict<'py>(py: Python<'py>, row: &MetricsRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("server_update", row.server_update)?;
    d.set_item("local_updates", row.local_updates)?;
    d.set_item("sim_time_s", row.sim_time_s)?;
    d.set_item("eval_loss", row.eval_loss)?;
    d.set_item("eval_ppl", row.eval_ppl)?;
    d.set_item("eval_acc", row.eval_accuracy)?;
    Ok(d)
}

/// Experiment configuration in the flat `key = value` format.
#[pyclass(name = "Config", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    /// Parses `text`; an empty string gives the defaults.
    #[new]
    #[pyo3(signature = (text = ""))]
    fn new(text: &str) -> PyResult<Self> {
        Ok(PyConfig {
            inner: ExperimentConfig::parse(text).map_err(to_py)?,
        })
    }

    /// Sets one key and re-validates the whole config.
    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        let mut next = self.inner.clone();
        next.set(key, value).map_err(to_py)?;
        next.validate().map_err(to_py)?;
        self.inner = next;
        Ok(())
    }

    fn to_text(&self) -> String {
        self.inner.to_string()
    }

    #[getter]
    fn strategy_tag(&self) -> String {
        self.inner.strategy_tag()
    }

    #[getter]
    fn speeds(&self) -> Vec<f64> {
        self.inner.speeds()
    }

    fn __repr__(&self) -> String {
        format!("Config({})", self.inner.strategy_tag())
    }
}

/// Runs an experiment and returns its metrics rows as dicts.
#[pyfunction]
#[pyo3(signature = (config, out = None))]
fn run<'py>(py: Python<'py>, config: &PyConfig, out: Option<&str>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let output = match out {
        Some(path) => experiment::run(&config.inner, path.as_ref()),
        None => sim::run_experiment(&config.inner),
    }
    .map_err(to_py)?;
    output.log.rows.iter().map(|r| row_dict(py, r)).collect()
}

/// Multi-layer perceptron classifier over flat parameter lists.
#[pyclass(name = "Mlp")]
struct PyMlp {
    inner: Mlp,
}

impl PyMlp {
    fn params(&self, values: Vec<f64>) -> PyResult<ParamVector> {
        ParamVector::from_values(self.inner.shapes(), values).map_err(to_py)
    }

    fn batch(&self, inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<Batch> {
        let dim = self.inner.config().input_dim;
        if let Some(bad) = inputs.iter().find(|row| row.len() != dim) {
            return Err(PyValueError::new_err(format!(
                "input rows must have {dim} features, got {}",
                bad.len()
            )));
        }
        Batch::new(dim, inputs.concat(), labels).map_err(to_py)
    }
}

#[pymethods]
impl PyMlp {
    #[new]
    #[pyo3(signature = (input_dim = 2, hidden = vec![32], num_classes = 4, activation = "relu"))]
    fn new(input_dim: usize, hidden: Vec<usize>, num_classes: usize, activation: &str) -> PyResult<Self> {
        let activation = Activation::parse(activation)
            .ok_or_else(|| PyValueError::new_err(format!("unknown activation `{activation}`")))?;
        let inner = Mlp::new(MlpConfig {
            input_dim,
            hidden_dims: hidden,
            num_classes,
            activation,
        })
        .map_err(to_py)?;
        Ok(PyMlp { inner })
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    fn init_params(&self, seed: u64) -> Vec<f64> {
        self.inner.init_params(seed).into_values()
    }

    /// Mean cross-entropy over the batch.
    fn loss(&self, params: Vec<f64>, inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
        let p = self.params(params)?;
        let b = self.batch(inputs, labels)?;
        self.inner.forward_loss(&p, &b).map_err(to_py)
    }

    /// `(loss, gradient)` by backpropagation.
    fn gradient(&self, params: Vec<f64>, inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<(f64, Vec<f64>)> {
        let p = self.params(params)?;
        let b = self.batch(inputs, labels)?;
        let (loss, grad) = self.inner.backward(&p, &b).map_err(to_py)?;
        Ok((loss, grad.into_values()))
    }

    /// Central finite-difference gradient with step `h`.
    #[pyo3(signature = (params, inputs, labels, h = 1e-5))]
    fn finite_diff_gradient(&self, params: Vec<f64>, inputs: Vec<Vec<f64>>, labels: Vec<usize>, h: f64) -> PyResult<Vec<f64>> {
        let p = self.params(params)?;
        let b = self.batch(inputs, labels)?;
        Ok(self.inner.finite_diff_grad(&p, &b, h).map_err(to_py)?.into_values())
    }

    /// `(loss, ppl, accuracy)` on a labelled set.
    fn evaluate(&self, params: Vec<f64>, inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<(f64, f64, f64)> {
        let p = self.params(params)?;
        let b = self.batch(inputs, labels)?;
        let m = self.inner.eval_metrics(&p, &b).map_err(to_py)?;
        Ok((m.loss, m.ppl, m.accuracy))
    }
}

/// Warmup plus cosine learning rate at step `t`.
#[pyfunction]
fn lr_at(max_lr: f64, min_lr: f64, warmup_steps: u64, total_steps: u64, t: u64) -> PyResult<f64> {
    let spec = LrScheduleSpec {
        max_lr,
        min_lr,
        warmup_steps,
        total_steps,
    };
    spec.validate().map_err(to_py)?;
    Ok(spec.lr_at(t))
}

/// Local steps for a worker of speed `speed` when the fastest runs `h`.
#[pyfunction]
fn dylu_steps(speed: f64, fastest: f64, h: u64) -> PyResult<u64> {
    if !(speed > 0.0 && speed <= fastest && h >= 1) {
        return Err(PyValueError::new_err("need 0 < speed <= fastest and h >= 1"));
    }
    Ok(dylu(speed, fastest, h))
}

/// Shard sampling probabilities from sizes and consumed counts.
#[pyfunction]
fn shard_probabilities(sizes: Vec<usize>, consumed: Vec<u64>) -> PyResult<Vec<f64>> {
    if sizes.len() != consumed.len() || sizes.is_empty() || sizes.contains(&0) {
        return Err(PyValueError::new_err("need equally long, non-empty lists of positive sizes"));
    }
    Ok(shard_probs(&sizes, &consumed))
}

/// Momentum and displacement/lr after `k` Nesterov steps on one gradient.
#[pyfunction]
#[pyo3(signature = (m0, g, beta, k = 4))]
fn nesterov_closed_form(m0: Vec<f64>, g: Vec<f64>, beta: f64, k: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
    sequential_nesterov_closed_form(&m0, &g, beta, k).map_err(to_py)
}

/// Runs the equivalence checks; returns `(name, max_deviation, tolerance, passed)` tuples.
#[pyfunction]
#[pyo3(signature = (perturb_beta = 0.0))]
fn validate(perturb_beta: f64) -> PyResult<Vec<(String, f64, f64, bool)>> {
    let report = experiment::validate_equivalences(EquivalenceOptions {
        beta_perturbation: perturb_beta,
    })
    .map_err(to_py)?;
    Ok(report
        .checks
        .into_iter()
        .map(|c| (c.name.to_string(), c.max_deviation, c.tolerance, c.passed))
        .collect())
}

#[pymodule]
fn alsgd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyMlp>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at, m)?)?;
    m.add_function(wrap_pyfunction!(dylu_steps, m)?)?;
    m.add_function(wrap_pyfunction!(shard_probabilities, m)?)?;
    m.add_function(wrap_pyfunction!(nesterov_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    Ok(())
}
