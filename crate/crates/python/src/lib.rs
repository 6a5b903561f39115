//! Python bindings: tensors, models, checkpoints, filtering, losses and metrics.

use std::path::PathBuf;

use ecg_core::autodiff::{gradcheck_params, GradcheckOptions, Graph};
use ecg_core::labels::Task;
use ecg_core::learn::{compute_metrics as core_metrics, focal_loss as core_focal, FocalLossParams};
use ecg_core::models::{build, Architecture, ModelSpec};
use ecg_core::rng::substream;
use ecg_core::signal::{normalize_lead, sample_segment, NormalizationMethod, Sos};
use ecg_core::transfer::{load_checkpoint, save_checkpoint, Provenance};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: ecg_core::Error) -> PyErr {
    match e {
        ecg_core::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_task(task: &str, classes: usize) -> PyResult<Task> {
    let t = match task {
        "binary" => Task::Binary,
        "multiclass" | "multi_class" => Task::MultiClass { classes },
        "multilabel" | "multi_label" => Task::MultiLabel { classes },
        other => return Err(PyValueError::new_err(format!("unknown task `{other}`"))),
    };
    t.validate().map_err(err)?;
    Ok(t)
}

/// Dense row-major float64 array.
#[pyclass(name = "Tensor", module = "ecg_toolkit", from_py_object)]
#[derive(Clone)]
pub struct PyTensor {
    inner: ecg_core::Tensor,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f64>) -> PyResult<Self> {
        Ok(PyTensor {
            inner: ecg_core::Tensor::new(shape, data).map_err(err)?,
        })
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> Self {
        PyTensor {
            inner: ecg_core::Tensor::zeros(&shape),
        }
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.shape().first().copied().unwrap_or(0)
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

/// A classifier network with its parameters.
#[pyclass(name = "Model", module = "ecg_toolkit", unsendable)]
pub struct PyModel {
    inner: ecg_core::models::Model,
}

#[pymethods]
impl PyModel {
    /// `tiny=True` selects the reduced-width hyperparameters.
    #[new]
    #[pyo3(signature = (architecture, task = "binary", classes = 1, seed = 0, tiny = false))]
    fn new(architecture: &str, task: &str, classes: usize, seed: u64, tiny: bool) -> PyResult<Self> {
        let arch = Architecture::from_key(architecture).map_err(err)?;
        let task = parse_task(task, classes)?;
        let spec = if tiny { ModelSpec::tiny(arch, task) } else { ModelSpec::new(arch, task) };
        Ok(PyModel {
            inner: build(&spec, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = load_checkpoint(&path).map_err(err)?;
        Ok(PyModel {
            inner: ckpt.to_model().map_err(err)?,
        })
    }

    #[pyo3(signature = (path, source = "none"))]
    fn save(&self, path: PathBuf, source: &str) -> PyResult<()> {
        let prov = Provenance {
            source: source.to_string(),
            ..Provenance::none()
        };
        save_checkpoint(&self.inner, &prov, &path).map_err(err)
    }

    /// Eval-mode logits for a `[batch, 12, length]` input.
    fn predict(&mut self, x: &PyTensor) -> PyResult<PyTensor> {
        Ok(PyTensor {
            inner: self.inner.predict(&x.inner).map_err(err)?,
        })
    }

    #[getter]
    fn architecture(&self) -> &'static str {
        self.inner.spec().architecture.key()
    }

    #[getter]
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    #[getter]
    fn outputs(&self) -> usize {
        self.inner.outputs()
    }

    #[getter]
    fn min_length(&self) -> usize {
        self.inner.min_length()
    }

    fn parameter_count(&self) -> usize {
        self.inner.summary().total
    }

    fn parameter_names(&self) -> Vec<String> {
        self.inner.store.iter().map(|(_, p)| p.name().to_string()).collect()
    }

    fn summary(&self) -> String {
        self.inner.summary().to_string()
    }

    /// Largest relative error between analytic and central-difference
    /// parameter gradients of `sum((logits - 0.3)^2)` on a random input.
    #[pyo3(signature = (batch = 2, length = None, max_elements = 4, seed = 0))]
    fn gradcheck(&mut self, batch: usize, length: Option<usize>, max_elements: usize, seed: u64) -> PyResult<f64> {
        use rand::Rng;
        let l = length.unwrap_or_else(|| self.inner.min_length().max(96));
        let mut rng = substream(seed, "py-gradcheck", 0);
        let n = batch * 12 * l;
        let x = ecg_core::Tensor::new(vec![batch, 12, l], (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).map_err(err)?;
        let model = &self.inner;
        let mut store = model.store.clone();
        let opts = GradcheckOptions {
            max_elements,
            seed,
            ..Default::default()
        };
        let (report, _) = gradcheck_params(
            |g, store| {
                let mut r = substream(seed, "py-gradcheck", 1);
                let xv = g.constant(x.clone());
                let y = model.forward_with(store, g, xv, true, &mut r)?;
                Ok(g.sum(g.square(g.add_scalar(y, -0.3))))
            },
            &mut store,
            opts,
        )
        .map_err(err)?;
        Ok(report.max_rel_error())
    }

    fn __repr__(&self) -> String {
        format!("Model({}, outputs={})", self.inner.spec().architecture, self.inner.outputs())
    }
}

/// Zero-phase Butterworth bandpass of one lead.
#[pyfunction]
#[pyo3(signature = (lead, fs = 500.0, low = 1.0, high = 45.0, order = 2))]
fn bandpass(lead: Vec<f64>, fs: f64, low: f64, high: f64, order: usize) -> PyResult<Vec<f64>> {
    let sos = Sos::butterworth_bandpass(order, low, high, fs).map_err(err)?;
    Ok(sos.filtfilt(&lead))
}

/// Magnitude response of the bandpass at `freq` Hz.
#[pyfunction]
#[pyo3(signature = (freq, fs = 500.0, low = 1.0, high = 45.0, order = 2))]
fn bandpass_gain(freq: f64, fs: f64, low: f64, high: f64, order: usize) -> PyResult<f64> {
    let sos = Sos::butterworth_bandpass(order, low, high, fs).map_err(err)?;
    Ok(sos.response(2.0 * std::f64::consts::PI * freq / fs).norm())
}

#[pyfunction]
fn normalize(lead: Vec<f64>, method: &str) -> PyResult<Vec<f64>> {
    let m = match method {
        "minmax" => NormalizationMethod::MinMax,
        "zscore" => NormalizationMethod::ZScore,
        "rscale" => NormalizationMethod::RScale,
        "logscale" => NormalizationMethod::LogScale,
        "l2" => NormalizationMethod::L2,
        other => return Err(PyValueError::new_err(format!("unknown normalization `{other}`"))),
    };
    Ok(normalize_lead(&lead, m))
}

/// Start offset of a random segment of `length` samples.
#[pyfunction]
#[pyo3(signature = (source_len, length, seed, stream = 0))]
fn sample_segment_start(source_len: usize, length: usize, seed: u64, stream: u64) -> PyResult<usize> {
    let mut rng = substream(seed, "py-segment", stream);
    Ok(sample_segment(source_len, length, &mut rng).map_err(err)?.start)
}

/// Mean focal loss and its gradient with respect to the logits.
#[pyfunction]
#[pyo3(signature = (logits, targets, gamma = 2.0, alpha = 0.7))]
fn focal_loss(logits: &PyTensor, targets: &PyTensor, gamma: f64, alpha: f64) -> PyResult<(f64, PyTensor)> {
    let g = Graph::new();
    let z = g.leaf(logits.inner.clone(), true);
    let l = core_focal(&g, z, &targets.inner, FocalLossParams { gamma, alpha }).map_err(err)?;
    let value = g.value(l).item();
    let grads = g.backward(l).map_err(err)?;
    let dz = grads.wrt(z).cloned().unwrap_or_else(|| ecg_core::Tensor::zeros(logits.inner.shape()));
    Ok((value, PyTensor { inner: dz }))
}

/// Metric report for `[n, k]` scores against 0/1 targets.
#[pyfunction]
#[pyo3(signature = (scores, targets, task = "binary", threshold = 0.5))]
fn compute_metrics<'py>(py: Python<'py>, scores: &PyTensor, targets: &PyTensor, task: &str, threshold: f64) -> PyResult<Bound<'py, PyDict>> {
    let k = scores.inner.shape().get(1).copied().unwrap_or(1);
    let task = parse_task(task, k)?;
    let names: Vec<String> = (0..k).map(|c| format!("class{c}")).collect();
    let r = core_metrics(&scores.inner, &targets.inner, task, threshold, &names).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("accuracy", r.accuracy)?;
    d.set_item("f1", r.f1)?;
    d.set_item("map", r.map)?;
    d.set_item("gmean", r.gmean)?;
    d.set_item("auc", r.auc)?;
    d.set_item("sensitivity", r.sensitivity)?;
    d.set_item("specificity", r.specificity)?;
    d.set_item("ppv", r.ppv)?;
    d.set_item("warnings", r.warnings)?;
    Ok(d)
}

#[pyfunction]
fn architectures() -> Vec<&'static str> {
    Architecture::ALL.iter().map(|a| a.key()).collect()
}

#[pymodule]
fn ecg_toolkit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(bandpass, m)?)?;
    m.add_function(wrap_pyfunction!(bandpass_gain, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(sample_segment_start, m)?)?;
    m.add_function(wrap_pyfunction!(focal_loss, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(architectures, m)?)?;
    Ok(())
}
