//! Python bindings: configs, corpora, synthetic data, training, evaluation,
//! checkpoints and the gradient check.

use std::path::PathBuf;

use komei_core::corpus::{corpus_from_jsonl, corpus_to_jsonl, tokenize as core_tokenize, MaskedSample};
use komei_core::encoders::load_embedding_table;
use komei_core::numerics::Tensor2;
use komei_core::prediction::EvalReport;
use komei_core::synthetic::{generate, Scenario, SyntheticCorpus, SyntheticSpec};
use komei_core::trainer::{self, MediaBank, Model, TrainConfig};
use komei_core::KomeiError;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

fn to_py(e: KomeiError) -> PyErr {
    match e {
        KomeiError::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Flat `key = value` training configuration.
#[pyclass(name = "Config", module = "komei", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: TrainConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (text=None))]
    fn new(text: Option<&str>) -> PyResult<Self> {
        let inner = match text {
            Some(t) => TrainConfig::parse(t).map_err(to_py)?,
            None => TrainConfig::default(),
        };
        Ok(Self { inner })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(to_py)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn d_g(&self) -> usize {
        self.inner.d_g
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Config(hash={:?})", &self.inner.hash()[..12])
    }
}

/// Masked samples.
#[pyclass(name = "Corpus", module = "komei", from_py_object)]
#[derive(Clone)]
struct PyCorpus {
    samples: Vec<MaskedSample>,
}

#[pymethods]
impl PyCorpus {
    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        Ok(Self {
            samples: corpus_from_jsonl(text).map_err(to_py)?,
        })
    }

    fn to_jsonl(&self) -> String {
        corpus_to_jsonl(&self.samples)
    }

    fn ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.id.clone()).collect()
    }

    fn labels(&self) -> Vec<Option<usize>> {
        self.samples.iter().map(|s| s.label).collect()
    }

    fn tokens(&self) -> Vec<Vec<String>> {
        self.samples.iter().map(|s| s.tokens.clone()).collect()
    }

    fn __len__(&self) -> usize {
        self.samples.len()
    }
}

/// Frozen image and speech evidence.
#[pyclass(name = "Media", module = "komei", from_py_object)]
#[derive(Clone)]
struct PyMedia {
    inner: MediaBank,
}

#[pymethods]
impl PyMedia {
    /// Hashed toy vectors for every key.
    #[staticmethod]
    #[pyo3(signature = (seed=0, image_count=4))]
    fn toy(seed: u64, image_count: usize) -> Self {
        Self {
            inner: MediaBank::toy(seed, image_count),
        }
    }

    /// KOME tables, with optional toy vectors for missing keys.
    #[staticmethod]
    #[pyo3(signature = (image=None, speech=None, toy_fallback=false, seed=0, image_count=4))]
    fn load(
        image: Option<PathBuf>,
        speech: Option<PathBuf>,
        toy_fallback: bool,
        seed: u64,
        image_count: usize,
    ) -> PyResult<Self> {
        Ok(Self {
            inner: MediaBank {
                image: image.map(load_embedding_table).transpose().map_err(to_py)?,
                speech: speech.map(load_embedding_table).transpose().map_err(to_py)?,
                toy_fallback,
                toy_seed: seed,
                image_count,
            },
        })
    }
}

/// Generated corpus with planted signal.
#[pyclass(name = "Synthetic", module = "komei")]
struct PySynthetic {
    inner: SyntheticCorpus,
}

#[pymethods]
impl PySynthetic {
    #[new]
    #[pyo3(signature = (scenario="overfit", seed=0, samples=None))]
    fn new(scenario: &str, seed: u64, samples: Option<usize>) -> PyResult<Self> {
        let scenario: Scenario = scenario.parse().map_err(to_py)?;
        let mut spec = SyntheticSpec::new(scenario, seed);
        if let Some(n) = samples {
            spec.samples = n;
        }
        Ok(Self {
            inner: generate(&spec).map_err(to_py)?,
        })
    }

    #[getter]
    fn categories(&self) -> Vec<String> {
        self.inner.categories().to_vec()
    }

    #[getter]
    fn train(&self) -> PyCorpus {
        PyCorpus {
            samples: self.inner.train.clone(),
        }
    }

    #[getter]
    fn val(&self) -> PyCorpus {
        PyCorpus {
            samples: self.inner.val.clone(),
        }
    }

    #[getter]
    fn test(&self) -> PyCorpus {
        PyCorpus {
            samples: self.inner.test.clone(),
        }
    }

    #[getter]
    fn d_v(&self) -> usize {
        self.inner.image.dim()
    }

    #[getter]
    fn d_s(&self) -> usize {
        self.inner.speech.dim()
    }

    fn media(&self) -> PyMedia {
        PyMedia {
            inner: self.inner.media(),
        }
    }
}

/// Acc@1..3 of one evaluation.
#[pyclass(name = "EvalReport", module = "komei", get_all)]
struct PyEvalReport {
    acc1: f64,
    acc2: f64,
    acc3: f64,
    n: usize,
    config_hash: String,
}

impl From<EvalReport> for PyEvalReport {
    fn from(r: EvalReport) -> Self {
        Self {
            acc1: r.acc[0],
            acc2: r.acc[1],
            acc3: r.acc[2],
            n: r.n,
            config_hash: r.config_hash,
        }
    }
}

#[pymethods]
impl PyEvalReport {
    fn __repr__(&self) -> String {
        format!(
            "EvalReport(acc1={:.4}, acc2={:.4}, acc3={:.4}, n={})",
            self.acc1, self.acc2, self.acc3, self.n
        )
    }
}

fn rows(t: &Tensor2) -> Vec<Vec<f64>> {
    t.to_rows()
}

/// A trained or restored model.
#[pyclass(name = "Model", module = "komei")]
struct PyModel {
    inner: Model,
    #[pyo3(get)]
    val_acc1: Vec<f64>,
}

#[pymethods]
impl PyModel {
    /// Trains from scratch; returns the best-validation model.
    #[staticmethod]
    #[pyo3(signature = (config, categories, train, media, val=None))]
    fn train(
        py: Python<'_>,
        config: PyRef<'_, PyConfig>,
        categories: Vec<String>,
        train: PyRef<'_, PyCorpus>,
        media: PyRef<'_, PyMedia>,
        val: Option<PyRef<'_, PyCorpus>>,
    ) -> PyResult<Self> {
        let cfg = config.inner.clone();
        let train_set = train.samples.clone();
        let val_set = val.map(|v| v.samples.clone()).unwrap_or_default();
        let bank = media.inner.clone();
        let out = py
            .detach(move || trainer::train(&cfg, &categories, &train_set, &val_set, &bank))
            .map_err(to_py)?;
        Ok(Self {
            inner: out.model,
            val_acc1: out.val_acc1,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Model::load(path).map_err(to_py)?,
            val_acc1: Vec::new(),
        })
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self {
            inner: Model::from_bytes(data).map_err(to_py)?,
            val_acc1: Vec::new(),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_bytes())
    }

    #[getter]
    fn categories(&self) -> Vec<String> {
        self.inner.categories.clone()
    }

    #[getter]
    fn config(&self) -> PyConfig {
        PyConfig {
            inner: self.inner.config.clone(),
        }
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.store.trainable_count()
    }

    /// Class probabilities, one row per sample.
    fn predict(&self, corpus: PyRef<'_, PyCorpus>, media: PyRef<'_, PyMedia>) -> PyResult<Vec<Vec<f64>>> {
        let probs = self.inner.predict(&corpus.samples, &media.inner).map_err(to_py)?;
        Ok(rows(&probs))
    }

    /// Fused features `H`, one row per sample.
    fn features(&self, corpus: PyRef<'_, PyCorpus>, media: PyRef<'_, PyMedia>) -> PyResult<Vec<Vec<f64>>> {
        let h = self.inner.features(&corpus.samples, &media.inner).map_err(to_py)?;
        Ok(rows(&h))
    }

    #[pyo3(signature = (corpus, media, expect_hash=None))]
    fn evaluate(
        &self,
        corpus: PyRef<'_, PyCorpus>,
        media: PyRef<'_, PyMedia>,
        expect_hash: Option<&str>,
    ) -> PyResult<PyEvalReport> {
        let report = trainer::evaluate(&self.inner, &corpus.samples, &media.inner, expect_hash).map_err(to_py)?;
        Ok(report.into())
    }
}

/// Acc@1..3 of a score matrix against gold labels.
#[pyfunction]
fn top_k_accuracy(scores: Vec<Vec<f64>>, gold: Vec<usize>) -> PyResult<(f64, f64, f64)> {
    let n = scores.first().map_or(0, Vec::len);
    let categories: Vec<String> = (0..n).map(|j| j.to_string()).collect();
    let probs = Tensor2::from_rows(&scores).map_err(to_py)?;
    let r = EvalReport::from_scores(&probs, &gold, &categories, "").map_err(to_py)?;
    Ok((r.acc[0], r.acc[1], r.acc[2]))
}

/// Worst relative error of the full objective's gradient on a toy batch.
#[pyfunction]
#[pyo3(signature = (d_g=8, batch=4, seed=0, h=1e-5))]
fn gradcheck(d_g: usize, batch: usize, seed: u64, h: f64) -> PyResult<(f64, usize)> {
    let r = trainer::gradcheck_full_objective(d_g, batch, seed, h).map_err(to_py)?;
    Ok((r.max_rel_err, r.coords_checked))
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    core_tokenize(text)
}

#[pymodule]
fn komei(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyMedia>()?;
    m.add_class::<PySynthetic>()?;
    m.add_class::<PyEvalReport>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(top_k_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_wrapper_counts_top_k() {
        let acc = top_k_accuracy(vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.3, 0.6]], vec![1, 2]).unwrap();
        assert_eq!(acc, (0.5, 1.0, 1.0));
    }

    #[test]
    fn config_round_trips_through_text() {
        let mut cfg = PyConfig::new(None).unwrap();
        cfg.set("d_g", "12").unwrap();
        let back = PyConfig::new(Some(&cfg.to_text())).unwrap();
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(back.d_g(), 12);
    }

    #[test]
    fn synthetic_splits_are_exposed() {
        let s = PySynthetic::new("audio-planted", 2, Some(50)).unwrap();
        assert_eq!(s.train().__len__() + s.val().__len__(), 50);
        assert_eq!(s.categories().len(), 6);
        let jsonl = s.test().to_jsonl();
        assert_eq!(PyCorpus::from_jsonl(&jsonl).unwrap().to_jsonl(), jsonl);
    }
}
