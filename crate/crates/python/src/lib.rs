//! Python bindings for the toolkit, importable as `xlm`.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use xlm_core::corpus::SentenceStore;
use xlm_core::evaluation::{perplexity, PplObjective};
use xlm_core::model::ModelState;
use xlm_core::numerics::op_grad_check;
use xlm_core::streams::Objective;
use xlm_core::subword::{apply_bpe, count_subwords, MergeTable, TokenId, Vocabulary};
use xlm_core::training::{load_checkpoint, Checkpoint};
use xlm_core::XlmError;

fn py_err(e: XlmError) -> PyErr {
    let line = xlm_core::cli::error_line(&e);
    match e {
        XlmError::Io { .. } => PyOSError::new_err(line),
        _ => PyValueError::new_err(line),
    }
}

/// Ordered BPE merge operations.
#[pyclass(name = "MergeTable")]
#[derive(Clone)]
struct PyMergeTable {
    inner: MergeTable,
}

#[pymethods]
impl PyMergeTable {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        MergeTable::load(&path).map(|inner| PyMergeTable { inner }).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    fn merges(&self) -> Vec<(String, String)> {
        self.inner.merges().to_vec()
    }

    /// Segment a sentence into sub-words with `@@` continuation markers.
    fn apply(&self, sentence: &str) -> Vec<String> {
        apply_bpe(sentence, &self.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Learn `num_merges` merges from whitespace-tokenized sentences.
#[pyfunction]
fn learn_bpe(sentences: Vec<String>, num_merges: usize) -> PyResult<PyMergeTable> {
    xlm_core::subword::learn_bpe(&sentences, num_merges)
        .map(|inner| PyMergeTable { inner })
        .map_err(py_err)
}

/// Shared token vocabulary with the special tokens first.
#[pyclass(name = "Vocabulary")]
#[derive(Clone)]
struct PyVocabulary {
    inner: Vocabulary,
}

#[pymethods]
impl PyVocabulary {
    /// Build from sentences, segmented with `merges` when given.
    #[staticmethod]
    #[pyo3(signature = (sentences, merges=None, min_count=1))]
    fn build(sentences: Vec<String>, merges: Option<&PyMergeTable>, min_count: u64) -> PyResult<Self> {
        let segmented: Vec<Vec<String>> = sentences
            .iter()
            .map(|s| match merges {
                Some(m) => apply_bpe(s, &m.inner),
                None => s.split_whitespace().map(str::to_string).collect(),
            })
            .collect();
        Vocabulary::build(&count_subwords(&segmented), min_count)
            .map(|inner| PyVocabulary { inner })
            .map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Vocabulary::load(&path).map(|inner| PyVocabulary { inner }).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    #[pyo3(signature = (sentence, merges=None))]
    fn encode(&self, sentence: &str, merges: Option<&PyMergeTable>) -> Vec<TokenId> {
        match merges {
            Some(m) => self.inner.encode(sentence, &m.inner),
            None => self.inner.encode_words(sentence),
        }
    }

    fn decode(&self, ids: Vec<TokenId>) -> PyResult<String> {
        self.inner.decode(&ids).map_err(py_err)
    }

    fn token(&self, id: TokenId) -> Option<String> {
        self.inner.token(id).map(str::to_string)
    }

    fn id(&self, token: &str) -> Option<TokenId> {
        self.inner.id(token)
    }

    fn tokens(&self) -> Vec<String> {
        self.inner.tokens().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// A trained model loaded from a checkpoint file.
#[pyclass(name = "Model")]
struct PyModel {
    model: ModelState<f32>,
    names: Vec<String>,
    objective: String,
    stream_len: usize,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let Checkpoint { model, names, plan, .. } = load_checkpoint(&path).map_err(py_err)?;
        Ok(PyModel {
            model,
            names,
            objective: plan.objectives.to_string(),
            stream_len: plan.stream_len,
        })
    }

    #[getter]
    fn languages(&self) -> Vec<String> {
        self.names.clone()
    }

    #[getter]
    fn objective(&self) -> String {
        self.objective.clone()
    }

    fn config(&self) -> HashMap<String, f64> {
        let c = &self.model.config;
        HashMap::from([
            ("vocab_size".into(), c.vocab_size as f64),
            ("dim".into(), c.dim as f64),
            ("heads".into(), c.heads as f64),
            ("layers".into(), c.layers as f64),
            ("max_positions".into(), c.max_positions as f64),
            ("languages".into(), c.languages as f64),
            ("dropout".into(), c.dropout),
        ])
    }

    fn param_count(&self) -> usize {
        self.model.param_count()
    }

    /// Token embedding table, one row per vocabulary id.
    fn embeddings(&self) -> Vec<Vec<f32>> {
        let t = self.model.token_table();
        t.data().chunks(t.shape()[1]).map(<[f32]>::to_vec).collect()
    }

    /// Held-out perplexity of encoded sentences in language `language`.
    #[pyo3(signature = (sentences, language, objective="clm", seed=0))]
    fn perplexity(&self, sentences: Vec<Vec<TokenId>>, language: &str, objective: &str, seed: u64) -> PyResult<f64> {
        let id = self
            .names
            .iter()
            .position(|n| n == language)
            .ok_or_else(|| PyValueError::new_err(format!("unknown language {language:?}")))?;
        let objective = match objective {
            "clm" => PplObjective::Clm,
            "mlm" => PplObjective::Mlm,
            o => return Err(PyValueError::new_err(format!("objective must be clm or mlm, got {o:?}"))),
        };
        let store = SentenceStore::new(id, sentences).map_err(py_err)?;
        perplexity(&self.model, &store, objective, self.stream_len, seed).map_err(py_err)
    }
}

/// Smoothed language probabilities `q_i ∝ (n_i / N)^alpha`.
#[pyfunction]
fn language_probs(sizes: Vec<usize>, alpha: f64) -> PyResult<Vec<f64>> {
    xlm_core::sampling::language_probs(&sizes, alpha)
        .map(|d| d.probs().to_vec())
        .map_err(py_err)
}

/// Maximum relative gradient error of one primitive at a seeded point.
#[pyfunction]
fn grad_check(op: &str, seed: u64) -> PyResult<f64> {
    op_grad_check(op, seed).map(|r| r.max_rel_error).map_err(py_err)
}

/// Maximum relative gradient error of a small full model.
#[pyfunction]
#[pyo3(signature = (seed, objective="mlm"))]
fn model_grad_check(seed: u64, objective: &str) -> PyResult<f64> {
    let objective = match objective {
        "clm" => Objective::Clm,
        "mlm" => Objective::Mlm,
        "tlm" => Objective::Tlm,
        o => return Err(PyValueError::new_err(format!("objective must be clm, mlm or tlm, got {o:?}"))),
    };
    xlm_core::model::model_grad_check(seed, objective)
        .map(|r| r.max_rel_error)
        .map_err(py_err)
}

/// Run a command-line subcommand in-process; returns its standard output.
#[pyfunction]
fn run(args: Vec<String>) -> PyResult<String> {
    let mut out = Vec::new();
    xlm_core::cli::run(std::iter::once("xlm".to_string()).chain(args), &mut out).map_err(py_err)?;
    Ok(String::from_utf8_lossy(&out).into_owned())
}

#[pymodule]
fn xlm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMergeTable>()?;
    m.add_class::<PyVocabulary>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(learn_bpe, m)?)?;
    m.add_function(wrap_pyfunction!(language_probs, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add_function(wrap_pyfunction!(model_grad_check, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add("CHECKED_OPS", xlm_core::numerics::CHECKED_OPS.to_vec())?;
    Ok(())
}
