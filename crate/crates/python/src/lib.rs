//! Python bindings: records, transforms, datasets, metrics and experiments.

use std::path::PathBuf;

use pyo3::exceptions::{PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::de::DeserializeOwned;
use serde::Serialize;

use tyee_core::config::{self, Override};
use tyee_core::dataset::{self, Label};
use tyee_core::metrics::{self as m, Averaging, ConfusionMatrix};
use tyee_core::runner::{self, RunOptions};
use tyee_core::signal_io::{self, ChannelInfo, EventAnnotation};
use tyee_core::transforms::{self, Stage, TransformSpec};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Rust value to Python through the stdlib json module.
fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(err)
}

fn overrides(items: Vec<String>) -> PyResult<Vec<Override>> {
    items.iter().map(|s| s.parse::<Override>().map_err(err)).collect()
}

/// One continuous recording.
#[pyclass(name = "Record", module = "tyee")]
struct PyRecord {
    inner: signal_io::Record,
}

#[pymethods]
impl PyRecord {
    /// `channels` holds `(label, sampling_rate, physical_min, physical_max)` tuples.
    #[new]
    #[pyo3(signature = (record_id, subject_id, channels, data, annotations=None))]
    fn new(
        record_id: String,
        subject_id: String,
        channels: Vec<(String, f64, f64, f64)>,
        data: Vec<Vec<f64>>,
        annotations: Option<Vec<(f64, f64, String)>>,
    ) -> PyResult<Self> {
        let infos = channels
            .into_iter()
            .map(|(label, rate, lo, hi)| ChannelInfo::new(label, rate, lo, hi))
            .collect();
        let annotations = annotations
            .unwrap_or_default()
            .into_iter()
            .map(|(onset, duration, label)| EventAnnotation { onset, duration, label })
            .collect();
        let inner = signal_io::Record::new(record_id, subject_id, Default::default(), infos, data, annotations).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn record_id(&self) -> &str {
        &self.inner.record_id
    }

    #[getter]
    fn subject_id(&self) -> &str {
        &self.inner.subject_id
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.channels.iter().map(|c| c.label.clone()).collect()
    }

    #[getter]
    fn sampling_rates(&self) -> Vec<f64> {
        self.inner.channels.iter().map(|c| c.sampling_rate).collect()
    }

    #[getter]
    fn data(&self) -> Vec<Vec<f64>> {
        self.inner.data.clone()
    }

    #[getter]
    fn annotations(&self) -> Vec<(f64, f64, String)> {
        self.inner.annotations.iter().map(|a| (a.onset, a.duration, a.label.clone())).collect()
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration()
    }

    /// Largest physical error one digital step can introduce, per channel.
    fn quantization_steps(&self) -> Vec<f64> {
        self.inner.channels.iter().map(ChannelInfo::quantization_step).collect()
    }

    /// Runs transform specs such as `{"name": "bandpass", "low": 1, "high": 40}`.
    fn transform(&self, py: Python<'_>, specs: &Bound<'_, PyAny>) -> PyResult<Self> {
        let specs: Vec<TransformSpec> = from_py(py, specs)?;
        let pipeline = transforms::compile_pipeline(&specs, Stage::Offline).map_err(err)?;
        Ok(Self {
            inner: pipeline.apply(&self.inner).map_err(err)?,
        })
    }

    fn write_edf(&self, path: PathBuf) -> PyResult<()> {
        signal_io::write_edf(&self.inner, path).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Record(id={:?}, subject={:?}, channels={}, duration={:.3}s)",
            self.inner.record_id,
            self.inner.subject_id,
            self.inner.channels.len(),
            self.inner.duration()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (path, format=None))]
fn read_record(path: PathBuf, format: Option<String>) -> PyResult<PyRecord> {
    let format = format.map(|f| f.parse().map_err(err)).transpose()?;
    Ok(PyRecord {
        inner: signal_io::read_record(path, format).map_err(err)?,
    })
}

/// Epoched samples built from the dataset section of a config.
#[pyclass(name = "Dataset", module = "tyee")]
struct PyDataset {
    inner: dataset::Dataset,
}

#[pymethods]
impl PyDataset {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `(data, label, subject_id, record_id)` after online transforms.
    fn __getitem__(&self, py: Python<'_>, index: isize) -> PyResult<(Vec<Vec<f64>>, Py<PyAny>, String, String)> {
        let len = self.inner.len() as isize;
        let i = if index < 0 { index + len } else { index };
        if i < 0 || i >= len {
            return Err(PyIndexError::new_err(format!("index {index} out of range for {len} samples")));
        }
        let s = self.inner.get_item(i as usize).map_err(err)?;
        let label = match &s.label {
            Label::Class(c) => c.into_pyobject(py)?.into_any().unbind(),
            Label::Values(v) => to_py(py, v)?,
        };
        Ok((s.data, label, s.subject_id, s.record_id))
    }

    /// Per-record summaries: id, subject, windows, cache key, cache hit.
    fn records(&self) -> Vec<(String, String, usize, String, bool)> {
        self.inner
            .records()
            .iter()
            .map(|r| (r.record_id.clone(), r.subject_id.clone(), r.windows, r.key.clone(), r.cache_hit))
            .collect()
    }
}

/// A parsed and validated experiment configuration.
#[pyclass(name = "Config", module = "tyee")]
struct PyConfig {
    inner: config::ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    #[pyo3(signature = (path, overrides=Vec::new(), seed=None))]
    fn load(path: PathBuf, overrides: Vec<String>, seed: Option<u64>) -> PyResult<Self> {
        let mut inner = config::apply_overrides(&config::load_config(&path).map_err(err)?, &self::overrides(overrides)?).map_err(err)?;
        if let Some(seed) = seed {
            inner.common.seed = seed;
        }
        Ok(Self { inner })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: config::parse_config(text).map_err(err)?,
        })
    }

    /// Validation problems as `(path, message)` pairs; empty when valid.
    fn validate(&self) -> Vec<(String, String)> {
        config::validate(&self.inner).into_iter().map(|i| (i.path, i.message)).collect()
    }

    fn warnings(&self) -> Vec<String> {
        self.inner.warnings()
    }

    fn to_yaml(&self) -> String {
        self.inner.to_yaml()
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner)
    }

    /// Builds the dataset, using the configured cache root.
    fn dataset(&self) -> PyResult<PyDataset> {
        let cache = runner::cache_dir(&self.inner);
        Ok(PyDataset {
            inner: dataset::build_dataset(&self.inner.dataset, Some(&cache)).map_err(err)?,
        })
    }

    /// Trains and returns the final report, or None if `stop_after` cut the run.
    #[pyo3(signature = (resume=None, stop_after=None))]
    fn run(&self, py: Python<'_>, resume: Option<PathBuf>, stop_after: Option<usize>) -> PyResult<Py<PyAny>> {
        let issues = config::validate(&self.inner);
        if !issues.is_empty() {
            let text: Vec<String> = issues.iter().map(ToString::to_string).collect();
            return Err(PyValueError::new_err(text.join("; ")));
        }
        let report = runner::run_experiment(&self.inner, &RunOptions { resume, stop_after })
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        to_py(py, &report)
    }

    fn evaluate(&self, py: Python<'_>, checkpoint: PathBuf) -> PyResult<Py<PyAny>> {
        let report =
            runner::evaluate_checkpoint(&self.inner, &checkpoint).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        to_py(py, &report)
    }
}

fn confusion(truth: &[usize], pred: &[usize]) -> PyResult<ConfusionMatrix> {
    let classes = truth.iter().chain(pred).max().map_or(1, |c| c + 1);
    ConfusionMatrix::from_labels(truth, pred, classes).map_err(err)
}

#[pyfunction]
fn accuracy(truth: Vec<usize>, pred: Vec<usize>) -> PyResult<f64> {
    m::accuracy(&confusion(&truth, &pred)?).map_err(err)
}

#[pyfunction]
fn balanced_accuracy(truth: Vec<usize>, pred: Vec<usize>) -> PyResult<f64> {
    m::balanced_accuracy(&confusion(&truth, &pred)?).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (truth, pred, average="macro"))]
fn f1(truth: Vec<usize>, pred: Vec<usize>, average: &str) -> PyResult<f64> {
    let averaging = match average {
        "macro" => Averaging::Macro,
        "weighted" => Averaging::Weighted,
        other => return Err(PyValueError::new_err(format!("unknown averaging {other:?}"))),
    };
    m::f1(&confusion(&truth, &pred)?, averaging).map_err(err)
}

#[pyfunction]
fn cohen_kappa(truth: Vec<usize>, pred: Vec<usize>) -> PyResult<f64> {
    m::cohen_kappa(&confusion(&truth, &pred)?).map_err(err)
}

#[pyfunction]
fn auroc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    m::auroc(&scores, &labels).map_err(err)
}

#[pyfunction]
fn auprc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    m::auprc(&scores, &labels).map_err(err)
}

#[pyfunction]
fn mae(pred: Vec<f64>, target: Vec<f64>) -> PyResult<f64> {
    m::mae(&pred, &target).map_err(err)
}

#[pyfunction]
fn scale_mae(value: f64) -> PyResult<f64> {
    m::scale_mae(value).map_err(err)
}

#[pyfunction]
fn mean_cc(pred: Vec<Vec<f64>>, target: Vec<Vec<f64>>) -> PyResult<f64> {
    m::mean_cc(&pred, &target).map_err(err)
}

#[pymodule]
fn tyee(module: &Bound<'_, PyModule>) -> PyResult<()> {
    module.add_class::<PyRecord>()?;
    module.add_class::<PyDataset>()?;
    module.add_class::<PyConfig>()?;
    module.add_function(wrap_pyfunction!(read_record, module)?)?;
    for f in [
        wrap_pyfunction!(accuracy, module)?,
        wrap_pyfunction!(balanced_accuracy, module)?,
        wrap_pyfunction!(f1, module)?,
        wrap_pyfunction!(cohen_kappa, module)?,
        wrap_pyfunction!(auroc, module)?,
        wrap_pyfunction!(auprc, module)?,
        wrap_pyfunction!(mae, module)?,
        wrap_pyfunction!(scale_mae, module)?,
        wrap_pyfunction!(mean_cc, module)?,
    ] {
        module.add_function(f)?;
    }
    module.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
