//! Python bindings: `import tilkit_py`.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;
use serde_json::Value;

use tilkit::corpus::{self, DigestOrigin, DigestSet, Document, StageConfig};
use tilkit::eval::score_candidate;
use tilkit::model::{Checkpoint, ModelConfig, Transformer};
use tilkit::tokenizer::{self, TokenizerModel, END_OF_TEXT};
use tilkit::trainer::{self, BatchPlan, OptimizerConfig, OptimizerState};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    match v {
        Value::Null => Ok(py.None().into_bound(py)),
        Value::Bool(b) => b.into_bound_py_any(py),
        Value::Number(n) => match (n.as_u64(), n.as_i64()) {
            (Some(u), _) => u.into_bound_py_any(py),
            (None, Some(i)) => i.into_bound_py_any(py),
            _ => n.as_f64().unwrap_or(f64::NAN).into_bound_py_any(py),
        },
        Value::String(s) => s.into_bound_py_any(py),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            Ok(list.into_any())
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, to_py(py, item)?)?;
            }
            Ok(dict.into_any())
        }
    }
}

type Record = (String, String, String);

fn serialize<'py>(py: Python<'py>, v: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &serde_json::to_value(v).map_err(value_err)?)
}

/// Applies the three text transforms (NFC, control-character removal,
/// whitespace collapse) without any filtering.
#[pyfunction]
fn clean_text(text: &str) -> String {
    corpus::clean_text(text)
}

/// Runs the full cleaning pipeline over `(id, source, text)` records.
/// `config` is an optional JSON string of stage thresholds.
/// Returns the surviving records and the per-stage report as a dict.
#[pyfunction]
#[pyo3(signature = (docs, config=None, workers=1))]
fn clean_documents<'py>(
    py: Python<'py>,
    docs: Vec<Record>,
    config: Option<&str>,
    workers: usize,
) -> PyResult<(Vec<Record>, Bound<'py, PyAny>)> {
    let cfg: StageConfig = match config {
        Some(s) => serde_json::from_str(s).map_err(value_err)?,
        None => StageConfig::default(),
    };
    let docs = docs.into_iter().map(|(id, source, text)| Document { id, source, text });
    let reference = DigestSet::new(DigestOrigin::ExternalReference);
    let (kept, report) =
        corpus::run_pipeline_with_workers(docs, &cfg, &reference, workers.max(1)).map_err(value_err)?;
    let kept = kept.into_iter().map(|d| (d.id, d.source, d.text)).collect();
    Ok((kept, serialize(py, &report)?))
}

/// Byte-level BPE tokenizer.
#[pyclass(name = "Tokenizer", module = "tilkit_py", frozen)]
struct PyTokenizer {
    inner: TokenizerModel,
}

#[pymethods]
impl PyTokenizer {
    /// Trains on a list of documents; `<|endoftext|>` is the only special.
    #[staticmethod]
    #[pyo3(signature = (texts, vocab_size=tokenizer::DEFAULT_VOCAB_SIZE))]
    fn train(texts: Vec<String>, vocab_size: usize) -> PyResult<Self> {
        let inner = tokenizer::train_bpe(&texts, vocab_size, &[END_OF_TEXT.to_string()]).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: TokenizerModel::load(&path).map_err(io_err)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: TokenizerModel::from_json(text).map_err(value_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(io_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        self.inner.encode(text)
    }

    fn decode(&self, ids: Vec<u32>) -> PyResult<String> {
        Ok(self.inner.decode(&ids).map_err(value_err)?.text)
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    #[getter]
    fn eot_id(&self) -> Option<u32> {
        self.inner.eot_id()
    }

    fn merges(&self) -> Vec<(String, String)> {
        self.inner.merges()
    }

    fn token(&self, id: u32) -> Option<String> {
        self.inner.token(id).map(str::to_owned)
    }

    /// Tokens per whitespace-separated word.
    fn fertility(&self, text: &str) -> PyResult<f64> {
        Ok(tokenizer::fertility(&self.inner, "", text).map_err(value_err)?.fertility)
    }

    /// Packs documents into blocks of `block_len` ids separated by end-of-text.
    fn pack_blocks(&self, texts: Vec<String>, block_len: usize) -> PyResult<Vec<Vec<u32>>> {
        let blocks = tokenizer::pretokenize_corpus(&self.inner, &texts, block_len).map_err(value_err)?;
        Ok(blocks.blocks().map(<[u32]>::to_vec).collect())
    }

    fn __len__(&self) -> usize {
        self.inner.vocab_size()
    }
}

/// Decoder architecture hyperparameters.
#[pyclass(name = "ModelConfig", module = "tilkit_py", frozen)]
struct PyModelConfig {
    inner: ModelConfig,
}

#[pymethods]
impl PyModelConfig {
    /// One of `tiny`, `50m`, `150m`, `300m`, `600m`.
    #[staticmethod]
    #[pyo3(signature = (name, vocab_size=None))]
    fn preset(name: &str, vocab_size: Option<usize>) -> PyResult<Self> {
        let mut inner = ModelConfig::preset(name).ok_or_else(|| value_err(format!("unknown preset {name:?}")))?;
        if let Some(v) = vocab_size {
            inner.vocab_size = v;
        }
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: ModelConfig = serde_json::from_str(text).map_err(value_err)?;
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("config serializes")
    }

    fn count_parameters(&self) -> u64 {
        self.inner.count_parameters()
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size
    }

    #[getter]
    fn n_layers(&self) -> usize {
        self.inner.n_layers
    }

    #[getter]
    fn hidden(&self) -> usize {
        self.inner.hidden
    }

    #[getter]
    fn n_heads(&self) -> usize {
        self.inner.n_heads
    }

    #[getter]
    fn n_kv_heads(&self) -> usize {
        self.inner.kv_heads()
    }

    #[getter]
    fn intermediate(&self) -> usize {
        self.inner.intermediate
    }

    #[getter]
    fn context_len(&self) -> usize {
        self.inner.context_len
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelConfig(layers={}, hidden={}, heads={}, kv_heads={}, vocab={})",
            self.inner.n_layers,
            self.inner.hidden,
            self.inner.n_heads,
            self.inner.kv_heads(),
            self.inner.vocab_size
        )
    }
}

/// An f32 decoder with its weights.
#[pyclass(name = "Model", module = "tilkit_py")]
struct PyModel {
    inner: Transformer<f32>,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (config, seed=0))]
    fn new(config: PyRef<'_, PyModelConfig>, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: Transformer::init(config.inner.clone(), seed).map_err(value_err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = Checkpoint::load(&path).map_err(io_err)?;
        Ok(Self { inner: ckpt.into_model().map_err(value_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        Checkpoint::from_model(&self.inner).save(&path).map_err(io_err)
    }

    #[getter]
    fn config(&self) -> PyModelConfig {
        PyModelConfig { inner: self.inner.cfg.clone() }
    }

    /// Mean next-token cross-entropy over `ids`.
    fn loss(&self, py: Python<'_>, ids: Vec<u32>) -> PyResult<f32> {
        py.detach(|| self.inner.loss(&ids)).map_err(value_err)
    }

    /// One row of logits per input position.
    fn logits(&self, py: Python<'_>, ids: Vec<u32>) -> PyResult<Vec<Vec<f32>>> {
        let flat = py.detach(|| self.inner.logits(&ids)).map_err(value_err)?;
        Ok(flat.chunks(self.inner.cfg.vocab_size).map(<[f32]>::to_vec).collect())
    }

    /// Length-normalized log-likelihood of `candidate` after `prompt`.
    fn score(&self, py: Python<'_>, tokenizer: PyRef<'_, PyTokenizer>, prompt: &str, candidate: &str) -> PyResult<f64> {
        let tok = &tokenizer.inner;
        let s = py.detach(|| score_candidate(&self.inner, tok, prompt, candidate)).map_err(value_err)?;
        Ok(s.normalized)
    }

    /// Trains in place on equal-length blocks and returns the per-step losses.
    #[pyo3(signature = (blocks, peak_lr, steps=None, batch_size=8, seed=0))]
    fn fit(
        &mut self,
        py: Python<'_>,
        blocks: Vec<Vec<u32>>,
        peak_lr: f64,
        steps: Option<u64>,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        let block_len = blocks.first().map(Vec::len).ok_or_else(|| value_err("no blocks"))?;
        if blocks.iter().any(|b| b.len() != block_len) {
            return Err(value_err("blocks differ in length"));
        }
        let n_blocks = blocks.len();
        let file = tokenizer::BlockFile {
            block_len,
            vocab_size: self.inner.cfg.vocab_size,
            ids: blocks.into_iter().flatten().collect(),
        };
        let plan = BatchPlan { n_blocks, batch_size, seed };
        let opt = OptimizerConfig::new(peak_lr, steps.unwrap_or_else(|| plan.steps_per_epoch()));
        let model = &mut self.inner;
        let records = py
            .detach(|| {
                let mut state = OptimizerState::new(&model.params);
                trainer::train(model, &file, &opt, &plan, &mut state, |_, _, _| Ok(()))
            })
            .map_err(value_err)?;
        Ok(records.iter().map(|r| r.loss).collect())
    }

    fn __repr__(&self) -> String {
        format!("Model({} parameters)", self.inner.cfg.count_parameters())
    }
}

/// Learning rate at 1-based `step` under linear warmup and cosine decay.
#[pyfunction]
#[pyo3(signature = (step, peak_lr, total_steps, warmup_steps=None, min_lr=None))]
fn lr_at_step(
    step: u64,
    peak_lr: f64,
    total_steps: u64,
    warmup_steps: Option<u64>,
    min_lr: Option<f64>,
) -> PyResult<f64> {
    let mut cfg = OptimizerConfig::new(peak_lr, total_steps);
    if let Some(w) = warmup_steps {
        cfg.warmup_steps = w;
    }
    if let Some(m) = min_lr {
        cfg.min_lr = m;
    }
    cfg.validate().map_err(value_err)?;
    trainer::lr_at_step(step, &cfg).map_err(value_err)
}

#[pyfunction]
fn tokens_per_parameter(token_count: f64, param_count: f64) -> f64 {
    trainer::tokens_per_parameter(token_count, param_count)
}

#[pymodule]
fn tilkit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTokenizer>()?;
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(clean_text, m)?)?;
    m.add_function(wrap_pyfunction!(clean_documents, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at_step, m)?)?;
    m.add_function(wrap_pyfunction!(tokens_per_parameter, m)?)?;
    m.add("END_OF_TEXT", END_OF_TEXT)?;
    Ok(())
}
