//! Python bindings. Matrices cross the boundary as nested lists
//! (`list[list[float]]`, rows first); structured results come back as
//! plain dicts.

use std::path::PathBuf;

use milcci::data::{CategorySpec, Hyperparams, Label, ModelState, Preprocess, Trial, TrialSet};
use milcci::error::Error;
use milcci::eval::{self, DfMode, ValidationOptions};
use milcci::synth::{GroundTruth, SynthParams};
use ndarray::Array2;
use pyo3::exceptions::{PyArithmeticError, PyIndexError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Io { .. } => PyOSError::new_err(msg),
        Error::Numeric(_) | Error::FitAborted { .. } => PyArithmeticError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn to_array(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let t = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != t) {
        return Err(PyValueError::new_err("ragged nested list"));
    }
    Ok(Array2::from_shape_vec((n, t), rows.into_iter().flatten().collect()).expect("checked shape"))
}

fn to_rows(a: ndarray::ArrayView2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Serializes through JSON into Python objects.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn check_index(i: usize, len: usize, what: &str) -> PyResult<()> {
    if i < len {
        Ok(())
    } else {
        Err(PyIndexError::new_err(format!("{what} index {i} out of range ({len})")))
    }
}

#[pyclass(module = "pymilcci", frozen)]
pub struct Dataset {
    inner: TrialSet,
}

#[pymethods]
impl Dataset {
    /// `categories` is a list of dicts with the manifest fields; each trial
    /// is `(id, rows, label_tokens)`. `None` entries in `rows` are missing.
    #[new]
    #[pyo3(signature = (channel_names, categories, trials, preprocess = "none"))]
    fn new(
        channel_names: Vec<String>,
        categories: &Bound<'_, PyAny>,
        trials: Vec<(String, Vec<Vec<Option<f64>>>, Vec<String>)>,
        preprocess: &str,
    ) -> PyResult<Self> {
        let categories: Vec<CategorySpec> = from_py(categories)?;
        let preprocess = match preprocess {
            "none" => Preprocess::None,
            "tanh" => Preprocess::Tanh,
            other => return Err(PyValueError::new_err(format!("unknown preprocess '{other}'"))),
        };
        let mut out = Vec::with_capacity(trials.len());
        for (id, rows, tokens) in trials {
            let label = Label::from_tokens(&categories, &tokens).map_err(to_py_err)?;
            let mask_rows: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| r.iter().map(|v| if v.is_some() { 1.0 } else { 0.0 }).collect())
                .collect();
            let data = to_array(rows.into_iter().map(|r| r.into_iter().map(|v| v.unwrap_or(0.0)).collect()).collect())?;
            let mask = to_array(mask_rows)?.mapv(|v| v == 1.0);
            let mut trial = Trial::new(id, data, label);
            if mask.iter().any(|&b| !b) {
                trial.mask = Some(mask);
            }
            out.push(trial);
        }
        let inner = TrialSet::new(channel_names, categories, out, preprocess).map_err(to_py_err)?;
        Ok(Dataset { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Dataset {
            inner: milcci::io::load_dataset(&path).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        milcci::io::save_dataset(&path, &self.inner).map_err(to_py_err)
    }

    #[getter]
    fn n_channels(&self) -> usize {
        self.inner.n_channels()
    }

    #[getter]
    fn n_trials(&self) -> usize {
        self.inner.n_trials()
    }

    #[getter]
    fn channel_names(&self) -> Vec<String> {
        self.inner.channel_names.clone()
    }

    #[getter]
    fn trial_ids(&self) -> Vec<String> {
        self.inner.trials.iter().map(|t| t.id.clone()).collect()
    }

    fn categories<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.categories)
    }

    fn label(&self, m: usize) -> PyResult<Vec<String>> {
        check_index(m, self.inner.n_trials(), "trial")?;
        Ok(self.inner.trials[m].label.to_tokens(&self.inner.categories))
    }

    /// Trial `m` as rows of channels; missing entries are `None`.
    fn trial(&self, m: usize) -> PyResult<Vec<Vec<Option<f64>>>> {
        check_index(m, self.inner.n_trials(), "trial")?;
        let t = &self.inner.trials[m];
        Ok(t.data
            .indexed_iter()
            .fold(vec![Vec::with_capacity(t.n_times()); t.data.nrows()], |mut acc, ((r, c), &v)| {
                acc[r].push(t.observed(r, c).then_some(v));
                acc
            }))
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n_channels={}, n_trials={}, categories={})",
            self.inner.n_channels(),
            self.inner.n_trials(),
            self.inner.categories.len()
        )
    }
}

#[pyclass(module = "pymilcci", frozen)]
pub struct Truth {
    inner: GroundTruth,
}

#[pymethods]
impl Truth {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Truth {
            inner: milcci::io::load_truth(&path).map_err(to_py_err)?,
        })
    }

    fn component(&self, category: usize, value: usize) -> PyResult<Vec<Vec<f64>>> {
        check_index(category, self.inner.components.len(), "category")?;
        let t = &self.inner.components[category];
        check_index(value, t.n_variants(), "value")?;
        Ok(to_rows(t.variant(value)))
    }

    fn traces(&self, m: usize) -> PyResult<Vec<Vec<f64>>> {
        check_index(m, self.inner.traces.len(), "trial")?;
        Ok(to_rows(self.inner.traces[m].view()))
    }

    #[getter]
    fn random_components(&self) -> Vec<usize> {
        self.inner.random_components.clone()
    }
}

#[pyclass(module = "pymilcci", frozen)]
pub struct Model {
    inner: ModelState,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            inner: milcci::io::load_model(&path).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        milcci::io::save_model(&path, &self.inner, None).map_err(to_py_err)
    }

    /// Component block of `category` for label value index `value`.
    fn component(&self, category: usize, value: usize) -> PyResult<Vec<Vec<f64>>> {
        check_index(category, self.inner.components.len(), "category")?;
        let t = &self.inner.components[category];
        check_index(value, t.n_variants(), "value")?;
        Ok(to_rows(t.variant(value)))
    }

    fn traces(&self, m: usize) -> PyResult<Vec<Vec<f64>>> {
        check_index(m, self.inner.traces.len(), "trial")?;
        Ok(to_rows(self.inner.traces.traces[m].view()))
    }

    fn transition(&self, m: usize) -> PyResult<Option<Vec<Vec<f64>>>> {
        check_index(m, self.inner.traces.len(), "trial")?;
        Ok(self.inner.transitions.as_ref().map(|w| to_rows(w[m].view())))
    }

    fn reconstruct(&self, m: usize) -> PyResult<Vec<Vec<f64>>> {
        check_index(m, self.inner.traces.len(), "trial")?;
        Ok(to_rows(self.inner.reconstruct(m).view()))
    }

    #[getter]
    fn objective_history(&self) -> Vec<f64> {
        self.inner.objective_history.clone()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn noise_variance(&self) -> f64 {
        self.inner.noise_variance
    }

    #[getter]
    fn n_components(&self) -> usize {
        self.inner.n_traces()
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(n_channels={}, n_components={}, n_trials={}, converged={})",
            self.inner.n_channels(),
            self.inner.n_traces(),
            self.inner.trials.len(),
            self.inner.converged
        )
    }
}

/// Synthetic dataset and its ground truth.
#[pyfunction]
#[pyo3(signature = (preset = "desk", seed = 0, overrides = None))]
fn generate(preset: &str, seed: u64, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<(Dataset, Truth)> {
    let mut params = SynthParams::preset(preset).map_err(to_py_err)?;
    if let Some(o) = overrides {
        let mut base = serde_json::to_value(&params).expect("params serialize");
        let extra: serde_json::Value = from_py(o.as_any())?;
        if let (Some(b), Some(e)) = (base.as_object_mut(), extra.as_object()) {
            for (k, v) in e {
                b.insert(k.clone(), v.clone());
            }
        }
        params = serde_json::from_value(base).map_err(|e| PyValueError::new_err(e.to_string()))?;
    }
    let (trials, truth) = milcci::synth::generate(&params.with_seed(seed)).map_err(to_py_err)?;
    Ok((Dataset { inner: trials }, Truth { inner: truth }))
}

/// Fits a model. `config` may set any hyperparameter; unset ones keep
/// their defaults.
#[pyfunction]
#[pyo3(signature = (dataset, config = None))]
fn fit(py: Python<'_>, dataset: &Dataset, config: Option<&Bound<'_, PyDict>>) -> PyResult<Model> {
    let hyper: Hyperparams = match config {
        Some(c) => from_py(c.as_any())?,
        None => Hyperparams::default(),
    };
    let trials = &dataset.inner;
    let report = py
        .detach(|| milcci::fit::fit(trials, &hyper))
        .map_err(to_py_err)?;
    Ok(Model { inner: report.state })
}

#[pyfunction]
fn match_and_score<'py>(py: Python<'py>, model: &Model, truth: &Truth) -> PyResult<Bound<'py, PyAny>> {
    let r = eval::match_and_score(&model.inner, &truth.inner).map_err(to_py_err)?;
    to_py(py, &r)
}

#[pyfunction]
fn reconstruction_metrics<'py>(py: Python<'py>, model: &Model, dataset: &Dataset) -> PyResult<Bound<'py, PyAny>> {
    let r = eval::reconstruction_metrics(&model.inner, &dataset.inner).map_err(to_py_err)?;
    to_py(py, &r)
}

#[pyfunction]
#[pyo3(signature = (model, dataset, with_traces = false))]
fn information_criteria<'py>(
    py: Python<'py>,
    model: &Model,
    dataset: &Dataset,
    with_traces: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let mode = if with_traces {
        DfMode::ComponentsPlusTraces
    } else {
        DfMode::ComponentsNnz
    };
    let r = eval::information_criteria(&model.inner, &dataset.inner, mode).map_err(to_py_err)?;
    to_py(py, &r)
}

#[pyfunction]
#[pyo3(signature = (model, dataset, n_perm = 1000, n_coalitions = 500, seed = 0, run_nulls = true))]
fn validate<'py>(
    py: Python<'py>,
    model: &Model,
    dataset: &Dataset,
    n_perm: usize,
    n_coalitions: usize,
    seed: u64,
    run_nulls: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let opts = ValidationOptions {
        n_perm,
        n_coalitions,
        seed,
        run_nulls,
    };
    let r = py
        .detach(|| eval::validate_model(&model.inner, &dataset.inner, &opts))
        .map_err(to_py_err)?;
    to_py(py, &r)
}

/// Minimum-cost assignment; entry `i` is the column given to row `i`.
#[pyfunction]
fn linear_sum_assignment(cost: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
    let cost = to_array(cost)?;
    if cost.nrows() != cost.ncols() || cost.iter().any(|v| !v.is_finite()) {
        return Err(PyValueError::new_err("cost must be a finite square matrix"));
    }
    Ok(milcci::solvers::linear_sum_assignment(cost.view()))
}

/// Ridge estimate of `W` in `φ_t ≈ W φ_{t−1}` from a P × T trace matrix.
#[pyfunction]
fn fit_transition(traces: Vec<Vec<f64>>, gamma5: f64) -> PyResult<Vec<Vec<f64>>> {
    let phi = to_array(traces)?;
    let w = milcci::solvers::fit_transition(phi.view(), gamma5).map_err(to_py_err)?;
    Ok(to_rows(w.view()))
}

/// Similarity matrix of one category given as a dict with manifest fields.
#[pyfunction]
fn similarity_graph(category: &Bound<'_, PyAny>) -> PyResult<Vec<Vec<f64>>> {
    let spec: CategorySpec = from_py(category)?;
    let g = milcci::graph::build_graph(&spec).map_err(to_py_err)?;
    Ok(to_rows(g.weights.view()))
}

#[pymodule]
fn pymilcci(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Dataset>()?;
    m.add_class::<Truth>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(match_and_score, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruction_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(information_criteria, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(linear_sum_assignment, m)?)?;
    m.add_function(wrap_pyfunction!(fit_transition, m)?)?;
    m.add_function(wrap_pyfunction!(similarity_graph, m)?)?;
    Ok(())
}
