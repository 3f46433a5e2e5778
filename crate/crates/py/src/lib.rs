//! Python module `selective_ae`.
//!
//! Images cross the boundary as flat row-major lists of floats with explicit
//! `rows`/`cols`; structured results (annotations, reports, histories) come
//! back as plain Python dicts and lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::Serialize;

use selective_ae::annotations::AnnotationSet;
use selective_ae::checkpoint::Checkpoint;
use selective_ae::detect::{detect_frame, DetectConfig, EIGHT_BIT};
use selective_ae::frame::Frame;
use selective_ae::metrics::evaluate;
use selective_ae::model::{build_model, Arch, ModelParams};
use selective_ae::patch::{make_grid, NormalizationMap};
use selective_ae::synth::{generate_frame, generate_patch_dataset, PatchDatasetConfig, SynthConfig};
use selective_ae::train::{initial_model, train_model, TrainConfig};
use selective_ae::{Error, Tensor};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(PyModule::import(py, "json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, value: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    let text: String = match value {
        None => "{}".into(),
        Some(v) => PyModule::import(py, "json")?.call_method1("dumps", (v,))?.extract()?,
    };
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse_arch(name: &str) -> PyResult<Arch> {
    match name.to_ascii_lowercase().as_str() {
        "model1" => Ok(Arch::Model1),
        "model2" => Ok(Arch::Model2),
        _ => Err(PyValueError::new_err(format!("unknown arch {name:?}; use 'model1' or 'model2'"))),
    }
}

/// A trained or freshly initialized network with its intensity map.
#[pyclass(name = "Model", module = "selective_ae")]
#[derive(Clone)]
pub struct PyModel {
    params: ModelParams,
    normalization: NormalizationMap,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (arch = "model1", seed = 0))]
    fn new(arch: &str, seed: u64) -> PyResult<Self> {
        Ok(Self {
            params: build_model(parse_arch(arch)?, seed).map_err(err)?,
            normalization: EIGHT_BIT,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = Checkpoint::load(&path).map_err(err)?;
        Ok(Self {
            params: ck.model,
            normalization: ck.normalization.unwrap_or(EIGHT_BIT),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        Checkpoint::new(self.params.clone(), Some(self.normalization))
            .save(&path, &serde_json::json!({ "source": "python" }))
            .map_err(err)
    }

    #[getter]
    fn arch(&self) -> String {
        format!("{:?}", self.params.arch).to_lowercase()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.params.param_count()
    }

    /// Reconstructs a batch of 16x16 patches given as a flat list on the
    /// [0, 1] scale.
    fn predict(&self, patches: Vec<f64>, batch: usize) -> PyResult<Vec<f64>> {
        let x = Tensor::new(&[batch, 1, 16, 16], patches).map_err(err)?;
        Ok(self.params.predict(&x).map_err(err)?.data().to_vec())
    }

    /// Runs full-frame detection and returns the report as a dict.
    #[pyo3(signature = (pixels, rows, cols, config = None))]
    fn detect(
        &self,
        py: Python<'_>,
        pixels: Vec<f64>,
        rows: usize,
        cols: usize,
        config: Option<&Bound<'_, PyAny>>,
    ) -> PyResult<PyObject> {
        let config: DetectConfig = from_py(py, config)?;
        let frame = Frame::new("frame", rows, cols, pixels).map_err(err)?;
        let report = py
            .allow_threads(|| detect_frame(&self.params, &self.normalization, &frame, &config))
            .map_err(err)?;
        to_py(py, &report)
    }

    fn __repr__(&self) -> String {
        format!("Model(arch={:?}, params={})", self.arch(), self.param_count())
    }
}

/// Number of `patch x patch` windows at `stride` on a `rows x cols` frame.
#[pyfunction]
#[pyo3(signature = (rows, cols, stride, patch = 16))]
fn patch_count(rows: usize, cols: usize, stride: usize, patch: usize) -> PyResult<usize> {
    Ok(make_grid(rows, cols, patch, patch, stride, stride).map_err(err)?.count())
}

/// One synthetic frame: `{"pixels", "rows", "cols", "annotations"}`.
#[pyfunction]
#[pyo3(signature = (index, config = None, boundary_case = false))]
fn synth_frame(py: Python<'_>, index: usize, config: Option<&Bound<'_, PyAny>>, boundary_case: bool) -> PyResult<PyObject> {
    let config: SynthConfig = from_py(py, config)?;
    let sf = generate_frame(&config, index, boundary_case).map_err(err)?;
    to_py(
        py,
        &serde_json::json!({
            "frame_id": sf.frame.id,
            "rows": sf.frame.rows,
            "cols": sf.frame.cols,
            "pixels": sf.frame.pixels,
            "annotations": sf.annotations(),
            "distractors": sf.distractor_count,
        }),
    )
}

/// Trains on a seeded synthetic patch set; returns `(model, history)`.
#[pyfunction]
#[pyo3(signature = (train = None, synth = None, patches = None))]
fn train_synthetic(
    py: Python<'_>,
    train: Option<&Bound<'_, PyAny>>,
    synth: Option<&Bound<'_, PyAny>>,
    patches: Option<&Bound<'_, PyAny>>,
) -> PyResult<(PyModel, PyObject)> {
    let train: TrainConfig = from_py(py, train)?;
    let synth: SynthConfig = from_py(py, synth)?;
    let patches: PatchDatasetConfig = from_py(py, patches)?;
    let (model, history) = py
        .allow_threads(|| {
            let (pairs, _) = generate_patch_dataset(&synth, &patches)?;
            let model = initial_model(&pairs, &train)?;
            train_model(model, &pairs, &train, |_| {})
        })
        .map_err(err)?;
    Ok((
        PyModel {
            params: model,
            normalization: EIGHT_BIT,
        },
        to_py(py, &history)?,
    ))
}

/// Scores predicted against true annotation sets (lists of frame dicts).
#[pyfunction]
#[pyo3(signature = (predicted, truth, non_eggs = None, iou_min = 0.3))]
fn evaluate_sets(
    py: Python<'_>,
    predicted: &Bound<'_, PyAny>,
    truth: &Bound<'_, PyAny>,
    non_eggs: Option<&Bound<'_, PyAny>>,
    iou_min: f64,
) -> PyResult<PyObject> {
    let predicted: AnnotationSet = from_py(py, Some(predicted))?;
    let truth: AnnotationSet = from_py(py, Some(truth))?;
    let non_eggs: std::collections::BTreeMap<String, usize> = from_py(py, non_eggs)?;
    let result = evaluate(&predicted, &truth, &non_eggs, iou_min).map_err(err)?;
    to_py(py, &result)
}

#[pymodule]
#[pyo3(name = "selective_ae")]
fn selective_ae_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(patch_count, m)?)?;
    m.add_function(wrap_pyfunction!(synth_frame, m)?)?;
    m.add_function(wrap_pyfunction!(train_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_sets, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
