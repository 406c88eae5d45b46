//! Python bindings for the core types and operations: alignment-table
//! training, vocabulary construction, model training and decoding, and
//! the evaluation metrics.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use coreseq::alignment;
use coreseq::corpus::ParallelCorpus;
use coreseq::decoding::{beam_decode, greedy_decode, ModelScorer};
use coreseq::eval;
use coreseq::synth;
use coreseq::training::{self, TrainConfig, VocabSet};
use coreseq::vocab;

type Pairs = Vec<(Vec<String>, Vec<String>)>;

fn to_py_err(e: coreseq::Error) -> PyErr {
    match &e {
        coreseq::Error::Io(_) => PyIOError::new_err(e.to_string()),
        coreseq::Error::Numeric(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn corpus_from_pairs(pairs: Pairs) -> PyResult<ParallelCorpus> {
    ParallelCorpus::new(pairs).map_err(to_py_err)
}

/// Lexical translation table trained by expectation-maximization.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct AlignmentTable {
    inner: alignment::AlignmentTable,
    #[pyo3(get)]
    log_likelihoods: Vec<f64>,
}

#[pymethods]
impl AlignmentTable {
    /// Train on (source tokens, target tokens) pairs.
    #[staticmethod]
    #[pyo3(signature = (pairs, iterations=5, diagonal_tension=None))]
    fn train(pairs: Pairs, iterations: usize, diagonal_tension: Option<f64>) -> PyResult<Self> {
        let corpus = corpus_from_pairs(pairs)?;
        let out = alignment::train_alignment(&corpus, iterations, diagonal_tension)
            .map_err(to_py_err)?;
        Ok(AlignmentTable {
            inner: out.table,
            log_likelihoods: out.log_likelihoods,
        })
    }

    /// Keep the k most reliable targets per source token.
    fn prune(&self, k: usize) -> PyResult<Self> {
        Ok(AlignmentTable {
            inner: alignment::prune_top_k(&self.inner, k).map_err(to_py_err)?,
            log_likelihoods: self.log_likelihoods.clone(),
        })
    }

    /// Union of table targets over the given source tokens.
    fn expand(&self, source_tokens: Vec<String>) -> Vec<String> {
        self.inner.expand(&source_tokens).into_iter().collect()
    }

    /// Ranked (target, probability) list for one source token.
    fn targets(&self, source: &str) -> Vec<(String, f64)> {
        self.inner
            .targets(source)
            .map(|t| t.to_vec())
            .unwrap_or_default()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(std::path::Path::new(path)).map_err(to_py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(AlignmentTable {
            inner: alignment::AlignmentTable::load(std::path::Path::new(path)).map_err(to_py_err)?,
            log_likelihoods: Vec::new(),
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Token/id mapping with reserved PAD, UNK, BOS, EOS entries.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct Vocabulary {
    inner: vocab::Vocabulary,
}

#[pymethods]
impl Vocabulary {
    /// Build from corpus pairs; `side` is "source" or "target".
    #[staticmethod]
    #[pyo3(signature = (pairs, side="target", min_count=1))]
    fn build(pairs: Pairs, side: &str, min_count: u64) -> PyResult<Self> {
        let corpus = corpus_from_pairs(pairs)?;
        let side = match side {
            "source" => vocab::Side::Source,
            "target" => vocab::Side::Target,
            other => return Err(PyValueError::new_err(format!("side must be source|target, got {other}"))),
        };
        Ok(Vocabulary {
            inner: vocab::build_vocab(&corpus, side, min_count).map_err(to_py_err)?,
        })
    }

    /// The most frequent target tokens (plus UNK).
    #[staticmethod]
    fn frequent(pairs: Pairs, size: usize) -> PyResult<Self> {
        let corpus = corpus_from_pairs(pairs)?;
        Ok(Vocabulary {
            inner: vocab::frequent_table(&corpus, size).map_err(to_py_err)?,
        })
    }

    fn id(&self, token: &str) -> Option<u32> {
        self.inner.id(token)
    }

    fn token(&self, id: u32) -> PyResult<String> {
        if (id as usize) < self.inner.len() {
            Ok(self.inner.token(id).to_string())
        } else {
            Err(PyValueError::new_err(format!("id {id} out of range")))
        }
    }

    fn contains(&self, token: &str) -> bool {
        self.inner.contains(token)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Interpolated 3-gram language model.
#[pyclass]
struct NgramLM {
    inner: eval::NgramLM,
}

#[pymethods]
impl NgramLM {
    #[staticmethod]
    fn train(sentences: Vec<Vec<String>>) -> PyResult<Self> {
        Ok(NgramLM {
            inner: eval::train_lm(&sentences).map_err(to_py_err)?,
        })
    }

    /// Model with every conditional uniform over n tokens.
    #[staticmethod]
    fn uniform(n: usize) -> Self {
        NgramLM {
            inner: eval::NgramLM::uniform(n),
        }
    }

    fn perplexity(&self, texts: Vec<Vec<String>>) -> PyResult<f64> {
        eval::perplexity(&self.inner, &texts).map_err(to_py_err)
    }

    fn conditional(&self, h2: &str, h1: &str, w: &str) -> f64 {
        self.inner.conditional(h2, h1, w)
    }
}

/// The trained network plus everything needed to decode new sources.
#[pyclass]
struct CoreModel {
    model: coreseq::model::CoreModel,
    vocabs: VocabSet,
    table: alignment::AlignmentTable,
    #[pyo3(get)]
    metrics: Vec<(usize, f64, f64)>,
}

#[pymethods]
impl CoreModel {
    /// Train on (source tokens, target tokens) pairs with a prebuilt
    /// alignment table.
    #[staticmethod]
    #[pyo3(signature = (pairs, table, embedding_dim=32, hidden_dim=64, learning_rate=0.01,
                        batch_size=32, epochs=60, frequent_size=2000, seed=42))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        pairs: Pairs,
        table: &AlignmentTable,
        embedding_dim: usize,
        hidden_dim: usize,
        learning_rate: f64,
        batch_size: usize,
        epochs: usize,
        frequent_size: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let corpus = corpus_from_pairs(pairs)?;
        let vocabs = VocabSet {
            source: vocab::build_vocab(&corpus, vocab::Side::Source, 2).map_err(to_py_err)?,
            target: vocab::build_vocab(&corpus, vocab::Side::Target, 1).map_err(to_py_err)?,
            frequent: vocab::frequent_table(&corpus, frequent_size).map_err(to_py_err)?,
        };
        let cfg = TrainConfig {
            embedding_dim,
            hidden_dim,
            learning_rate,
            batch_size,
            epochs,
            frequent_size,
            seed,
            ..TrainConfig::default()
        };
        let out = training::train(&cfg, &corpus, None, &table.inner, &vocabs, &mut |_, _| Ok(()))
            .map_err(to_py_err)?;
        let metrics = out
            .metrics
            .iter()
            .map(|m| (m.epoch, m.train_eps1, m.train_eps2))
            .collect();
        Ok(CoreModel {
            model: out.model,
            vocabs,
            table: table.inner.clone(),
            metrics,
        })
    }

    /// Greedy decode: argmax of the combined copy/generate distribution.
    #[pyo3(signature = (source, max_len=50))]
    fn greedy(&self, source: Vec<String>, max_len: usize) -> PyResult<Vec<String>> {
        let scorer =
            ModelScorer::new(&self.model, &self.vocabs, &self.table, &source).map_err(to_py_err)?;
        Ok(greedy_decode(&scorer, max_len).map_err(to_py_err)?.tokens)
    }

    /// Beam decode; width 1 reproduces greedy exactly.
    #[pyo3(signature = (source, beam_width=4, max_len=50))]
    fn beam(&self, source: Vec<String>, beam_width: usize, max_len: usize) -> PyResult<Vec<String>> {
        let scorer =
            ModelScorer::new(&self.model, &self.vocabs, &self.table, &source).map_err(to_py_err)?;
        Ok(beam_decode(&scorer, beam_width, max_len)
            .map_err(to_py_err)?
            .tokens)
    }

    /// Per-step copy-gate values under teacher forcing, for inspection.
    fn copy_gates(&self, source: Vec<String>, target: Vec<String>) -> PyResult<Vec<f64>> {
        let prepared = training::prepare_pair(&source, &target, &self.table, &self.vocabs);
        let (run, _) = training::run_pair(&self.model, &prepared, false).map_err(to_py_err)?;
        Ok(run.gates)
    }
}

/// ROUGE-n (precision, recall, f) on token lists.
#[pyfunction]
fn rouge_n(candidate: Vec<String>, reference: Vec<String>, n: usize) -> (f64, f64, f64) {
    let s = eval::rouge_n(&candidate, &reference, n);
    (s.precision, s.recall, s.f)
}

/// Binary copy supervision: 1.0 where the target token occurs in the
/// source.
#[pyfunction]
fn lambda_supervision(source: Vec<String>, target: Vec<String>) -> Vec<f64> {
    training::lambda_supervision(&source, &target)
}

/// First min(k, len) source tokens.
#[pyfunction]
fn lead_baseline(source: Vec<String>, k: usize) -> Vec<String> {
    eval::lead_baseline(&source, k)
}

/// (mean_length, unk_pct, copy_pct) of outputs against paired sources.
#[pyfunction]
fn quality_stats(
    outputs: Vec<Vec<String>>,
    sources: Vec<Vec<String>>,
) -> PyResult<(f64, f64, f64)> {
    let q = eval::quality_stats(&outputs, &sources).map_err(to_py_err)?;
    Ok((q.mean_length, q.unk_pct, q.copy_pct))
}

/// Target-coverage staircase [(label, percent)] of a test split against
/// artifacts built from a training split.
#[pyfunction]
#[pyo3(signature = (train_pairs, test_pairs, k=10, frequent_size=2000, top_n=30000))]
fn coverage(
    train_pairs: Pairs,
    test_pairs: Pairs,
    k: usize,
    frequent_size: usize,
    top_n: usize,
) -> PyResult<Vec<(String, f64)>> {
    let train = corpus_from_pairs(train_pairs)?;
    let test = corpus_from_pairs(test_pairs)?;
    let trained = alignment::train_alignment(&train, 5, None).map_err(to_py_err)?;
    let table = alignment::prune_top_k(&trained.table, k).map_err(to_py_err)?;
    let frequent = vocab::frequent_table(&train, frequent_size).map_err(to_py_err)?;
    let ranked = vocab::ranked_target_tokens(&train);
    let inputs = vocab::CoverageInputs {
        table: &table,
        frequent: &frequent,
        ranked_target: &ranked,
    };
    let specs = [
        vocab::CoverageSpec::Source,
        vocab::CoverageSpec::SourceAlign,
        vocab::CoverageSpec::SourceAlignFrequent,
        vocab::CoverageSpec::TopTarget(top_n),
    ];
    Ok(specs
        .iter()
        .map(|s| (s.label(), vocab::coverage_ratio(&test, *s, &inputs)))
        .collect())
}

/// Seeded copy corpus (target = source) as a list of pairs.
#[pyfunction]
fn copy_corpus(pairs: usize, vocab_size: usize, min_len: usize, max_len: usize, seed: u64) -> Pairs {
    synth::copy_corpus(pairs, vocab_size, min_len, max_len, seed).pairs
}

#[pymodule]
fn coreseq_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<AlignmentTable>()?;
    m.add_class::<Vocabulary>()?;
    m.add_class::<NgramLM>()?;
    m.add_class::<CoreModel>()?;
    m.add_function(wrap_pyfunction!(rouge_n, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_supervision, m)?)?;
    m.add_function(wrap_pyfunction!(lead_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(quality_stats, m)?)?;
    m.add_function(wrap_pyfunction!(coverage, m)?)?;
    m.add_function(wrap_pyfunction!(copy_corpus, m)?)?;
    Ok(())
}
