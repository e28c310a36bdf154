//! Python bindings: embedding tables, models, training, and LRP
//! explanations.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use lrptext_core::corpus;
use lrptext_core::embedding::EmbeddingTable;
use lrptext_core::lrp::{explain_prediction, LrpConfig};
use lrptext_core::nn::{self, ArchName, Hyper, Model};
use lrptext_core::synth;
use lrptext_core::train::{self, Sample, TrainConfig};

fn err(e: lrptext_core::Error) -> PyErr {
    match e {
        lrptext_core::Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Token vectors with a hashed character n-gram fallback for
/// out-of-vocabulary tokens.
#[pyclass(name = "EmbeddingTable")]
struct PyEmbeddingTable {
    inner: EmbeddingTable,
}

#[pymethods]
impl PyEmbeddingTable {
    /// Deterministic table with an empty vocabulary; every token goes
    /// through the subword path and is scaled to unit norm.
    #[staticmethod]
    #[pyo3(signature = (dim, bucket_count = 50_000))]
    fn synthetic(dim: usize, bucket_count: usize) -> Self {
        PyEmbeddingTable {
            inner: EmbeddingTable::synthetic(dim, bucket_count),
        }
    }

    /// Load a text `.vec` file (`count dim` header, one vector per line).
    #[staticmethod]
    fn load_vec(path: PathBuf) -> PyResult<Self> {
        Ok(PyEmbeddingTable {
            inner: EmbeddingTable::load_vec_file(&path).map_err(err)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn contains(&self, token: &str) -> bool {
        self.inner.contains(token)
    }

    fn embed_token(&self, token: &str) -> PyResult<Vec<f64>> {
        if token.is_empty() {
            return Err(PyValueError::new_err("token must be non-empty"));
        }
        Ok(self.inner.embed_token(token))
    }
}

fn embed_samples(
    table: &EmbeddingTable,
    texts: &[String],
    labels: &[usize],
    num_classes: usize,
    max_len: usize,
) -> PyResult<Vec<Sample>> {
    if texts.len() != labels.len() {
        return Err(PyValueError::new_err("texts and labels differ in length"));
    }
    texts
        .iter()
        .zip(labels)
        .map(|(text, &label)| {
            if label >= num_classes {
                return Err(PyValueError::new_err(format!(
                    "label {label} outside 0..{num_classes}"
                )));
            }
            let tokens = corpus::tokenize(text);
            if tokens.is_empty() {
                return Err(PyValueError::new_err("a document tokenizes to empty"));
            }
            let doc = table
                .embed_document(&tokens, tokens.len().min(max_len))
                .map_err(err)?;
            Ok(Sample { doc, label })
        })
        .collect()
}

/// A classifier over embedded token sequences.
#[pyclass(name = "Model")]
struct PyModel {
    inner: Model,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: nn::load_model(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        nn::save_model(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn arch(&self) -> String {
        self.inner.arch.to_string()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Classify `text`; returns a dict with `predicted_class`,
    /// `probabilities`, and `logits`.
    #[pyo3(signature = (table, text, max_len = 256))]
    fn predict<'py>(
        &self,
        py: Python<'py>,
        table: &PyEmbeddingTable,
        text: &str,
        max_len: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let tokens = corpus::tokenize(text);
        if tokens.is_empty() {
            return Err(PyValueError::new_err("text tokenizes to empty"));
        }
        let doc = table
            .inner
            .embed_document(&tokens, tokens.len().min(max_len))
            .map_err(err)?;
        let (pred, _) = nn::forward_model(&self.inner, &doc).map_err(err)?;
        let out = PyDict::new(py);
        out.set_item("predicted_class", pred.predicted_class)?;
        out.set_item("probabilities", pred.probabilities)?;
        out.set_item("logits", pred.logits)?;
        Ok(out)
    }

    /// Explain a prediction with epsilon-LRP. Returns a dict with
    /// per-token relevances, the target logit `f_c`, named sinks, gate
    /// relevance, and the conservation residual.
    #[pyo3(signature = (table, text, target_class = None, epsilon = 1e-3, delta = 1.0, max_len = 256))]
    #[allow(clippy::too_many_arguments)]
    fn explain<'py>(
        &self,
        py: Python<'py>,
        table: &PyEmbeddingTable,
        text: &str,
        target_class: Option<usize>,
        epsilon: f64,
        delta: f64,
        max_len: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let tokens = corpus::tokenize(text);
        if tokens.is_empty() {
            return Err(PyValueError::new_err("text tokenizes to empty"));
        }
        let doc = table
            .inner
            .embed_document(&tokens, tokens.len().min(max_len))
            .map_err(err)?;
        let cfg = LrpConfig { epsilon, delta };
        let result =
            explain_prediction(&self.inner, &doc, &tokens, target_class, &cfg).map_err(err)?;

        let out = PyDict::new(py);
        out.set_item(
            "tokens",
            result
                .token_relevances
                .iter()
                .map(|t| (t.token.clone(), t.relevance))
                .collect::<Vec<_>>(),
        )?;
        out.set_item("predicted_class", result.prediction.predicted_class)?;
        out.set_item("target_class", result.target_class)?;
        out.set_item("f_c", result.f_c)?;
        out.set_item("conservation_residual", result.conservation_residual)?;
        out.set_item("gate_relevance", result.gate_relevance)?;
        let sinks = PyDict::new(py);
        sinks.set_item("boundary", result.sinks.boundary)?;
        sinks.set_item("initial_state", result.sinks.initial_state)?;
        sinks.set_item("bias_leak", result.sinks.bias_leak)?;
        out.set_item("sinks", sinks)?;
        Ok(out)
    }

    /// Train in place on raw texts with integer labels. Returns the
    /// per-epoch history as `(epoch, train_loss, train_macro_f1)`.
    #[pyo3(signature = (table, texts, labels, epochs = 20, learning_rate = 1e-3, batch_size = 16, seed = 42, max_len = 256, patience = 0))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        &mut self,
        table: &PyEmbeddingTable,
        texts: Vec<String>,
        labels: Vec<usize>,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
        seed: u64,
        max_len: usize,
        patience: usize,
    ) -> PyResult<Vec<(usize, f64, f64)>> {
        let samples = embed_samples(
            &table.inner,
            &texts,
            &labels,
            self.inner.num_classes,
            max_len,
        )?;
        let cfg = TrainConfig {
            epochs,
            batch_size,
            learning_rate,
            seed,
            max_len,
            patience,
            ..TrainConfig::default()
        };
        let history = train::train(&mut self.inner, &samples, &samples, &cfg).map_err(err)?;
        Ok(history
            .iter()
            .map(|h| (h.epoch, h.train_loss, h.val_macro_f1))
            .collect())
    }

    /// Macro-averaged F1 on raw texts with integer labels.
    #[pyo3(signature = (table, texts, labels, max_len = 256))]
    fn score(
        &self,
        table: &PyEmbeddingTable,
        texts: Vec<String>,
        labels: Vec<usize>,
        max_len: usize,
    ) -> PyResult<f64> {
        let samples = embed_samples(
            &table.inner,
            &texts,
            &labels,
            self.inner.num_classes,
            max_len,
        )?;
        let metrics = train::evaluate_samples(&self.inner, &samples).map_err(err)?;
        Ok(metrics.macro_f1)
    }
}

/// Build an untrained model. `arch` is one of `bilstm`, `cnn`,
/// `cnn_bilstm`.
#[pyfunction]
#[pyo3(signature = (arch, input_dim, num_classes, seed, bilstm_units = (64, 32), dense_hidden = 64, conv_filters = 128, conv_kernel = 5))]
#[allow(clippy::too_many_arguments)]
fn build_model(
    arch: &str,
    input_dim: usize,
    num_classes: usize,
    seed: u64,
    bilstm_units: (usize, usize),
    dense_hidden: usize,
    conv_filters: usize,
    conv_kernel: usize,
) -> PyResult<PyModel> {
    let arch: ArchName = arch.parse().map_err(err)?;
    let hyper = Hyper {
        bilstm_units,
        dense_hidden,
        conv_filters,
        conv_kernel,
    };
    Ok(PyModel {
        inner: nn::build_model(arch, input_dim, num_classes, hyper, seed).map_err(err)?,
    })
}

/// Lowercase and split on non-alphanumeric characters.
#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    corpus::tokenize(text)
}

/// Deterministic keyword corpus: list of `(text, label, label_name)`.
#[pyfunction]
fn synthetic_corpus(
    num_docs: usize,
    tokens_per_doc: usize,
    seed: u64,
) -> Vec<(String, usize, String)> {
    let ds = synth::synthetic_corpus(num_docs, tokens_per_doc, seed);
    ds.documents
        .iter()
        .map(|d| {
            (
                d.raw_text.clone(),
                d.label,
                ds.label_map.name(d.label).to_string(),
            )
        })
        .collect()
}

#[pymodule]
fn lrptext(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEmbeddingTable>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(build_model, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_corpus, m)?)?;
    Ok(())
}
