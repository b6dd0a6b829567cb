//! Python bindings: synthetic data, training, prediction and checkpoints.

use bdd::checkpoint::{metrics_csv, Checkpoint};
use bdd::corpus::{synth_corpus, Document, SynthSpec};
use bdd::trainer::{Dataset, Mode, TrainConfig, Trainer};
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

/// `(id, text, labels)`; labels are ignored for unlabeled documents.
type Doc = (String, String, Vec<String>);

fn to_py(e: bdd::Error) -> PyErr {
    match e {
        bdd::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        bdd::Error::Numerical(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn docs(items: Vec<Doc>) -> Vec<Document> {
    items.into_iter().map(|(id, text, labels)| Document::new(id, text, labels)).collect()
}

fn tuples(docs: &[Document]) -> Vec<Doc> {
    docs.iter().map(|d| (d.id.clone(), d.text.clone(), d.labels.clone())).collect()
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// Default configuration for `mode` ("mcc-s", "mcc-f" or "mlc") as JSON.
/// `preset` is "desk" or "published".
#[pyfunction]
#[pyo3(signature = (mode, preset = "desk"))]
fn default_config(mode: &str, preset: &str) -> PyResult<String> {
    let mode: Mode = mode.parse().map_err(to_py)?;
    let cfg = match preset {
        "desk" => TrainConfig::desk_preset(mode),
        "published" => TrainConfig::published_defaults(mode),
        other => return Err(PyValueError::new_err(format!("unknown preset {other:?}"))),
    };
    Ok(cfg.to_json())
}

/// The four-label margin-bias corpus. Returns a dict of document lists keyed
/// by split, with the hidden labels of the unlabeled split under "unlabeled_truth".
#[pyfunction]
#[pyo3(signature = (multi_label = false, n_unlabeled = 2000, seed = 1))]
fn synth(py: Python<'_>, multi_label: bool, n_unlabeled: usize, seed: u64) -> PyResult<Bound<'_, PyDict>> {
    let c = synth_corpus(&SynthSpec::margin_bias_preset(multi_label, n_unlabeled, seed)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("labeled", tuples(&c.labeled))?;
    out.set_item("unlabeled", tuples(&c.unlabeled))?;
    out.set_item("unlabeled_truth", tuples(&c.unlabeled_truth))?;
    out.set_item("dev", tuples(&c.dev))?;
    out.set_item("test", tuples(&c.test))?;
    Ok(out)
}

#[pyclass(name = "Model")]
struct PyModel {
    inner: Checkpoint,
}

impl PyModel {
    fn featurize(&self, texts: Vec<String>) -> Vec<bdd::corpus::SparseVec> {
        texts
            .into_iter()
            .map(|t| self.inner.features.featurize(&Document::new("", t, Vec::new())).vec)
            .collect()
    }
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: Checkpoint::load(path).map_err(to_py)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels.names().to_vec()
    }

    #[getter]
    fn config(&self) -> String {
        self.inner.config.to_json()
    }

    /// Per-epoch metrics of the run that produced this model, as CSV. Empty
    /// after `load`.
    fn metrics_csv(&self) -> String {
        metrics_csv(&self.inner.epochs)
    }

    fn predict(&self, texts: Vec<String>) -> Vec<Vec<String>> {
        let xs = self.featurize(texts);
        let names = self.inner.labels.names();
        self.inner
            .model
            .predict(xs.iter())
            .labels
            .iter()
            .map(|row| row.iter().zip(names).filter(|(&on, _)| on).map(|(_, n)| n.clone()).collect())
            .collect()
    }

    /// Label posteriors, one row per text in `labels` order.
    fn scores(&self, texts: Vec<String>) -> Vec<Vec<f64>> {
        let xs = self.featurize(texts);
        self.inner.model.predict(xs.iter()).scores
    }

    fn evaluate<'py>(&self, py: Python<'py>, docs: Vec<Doc>) -> PyResult<Bound<'py, PyAny>> {
        let c = &self.inner;
        let ds = Dataset::with_features(c.model.mode, c.labels.clone(), c.features.clone(), &[], &[], &self::docs(docs))
            .map_err(to_py)?;
        let report = c.model.evaluate(&ds.dev).map_err(to_py)?;
        json_to_py(py, &report.to_json())
    }
}

/// Trains a model. `config` is a full configuration as JSON, e.g. from
/// `default_config`.
#[pyfunction]
#[pyo3(signature = (config, labeled, unlabeled = Vec::new(), dev = Vec::new()))]
fn train(py: Python<'_>, config: &str, labeled: Vec<Doc>, unlabeled: Vec<Doc>, dev: Vec<Doc>) -> PyResult<PyModel> {
    let cfg = TrainConfig::from_json(config).map_err(to_py)?;
    let (labeled, unlabeled, dev) = (docs(labeled), docs(unlabeled), docs(dev));
    let inner = py
        .detach(|| -> bdd::Result<Checkpoint> {
            let ds = Dataset::prepare(cfg.mode, cfg.min_df, cfg.max_features, &labeled, &unlabeled, &dev)?;
            let mut t = Trainer::new(cfg.clone(), &ds)?;
            let epochs = t.fit(&mut ())?;
            let state = t.into_state();
            Ok(Checkpoint {
                config: cfg,
                model: state.model,
                admm: state.admm,
                features: ds.features,
                labels: ds.labels,
                epochs,
            })
        })
        .map_err(to_py)?;
    Ok(PyModel { inner })
}

#[pymodule]
fn bddtext(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_class::<PyModel>()?;
    Ok(())
}
