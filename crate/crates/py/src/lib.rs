//! Python module `srank`: catalog and embedding access, personalization
//! features, evaluation helpers, trained-model scoring and the pipeline.

use std::collections::BTreeSet;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyKeyError, PyValueError};
use pyo3::prelude::*;
use srank_core::catalog as cat;
use srank_core::embed as emb;
use srank_core::features::{self as feat, ClickContext, FeatureValue};
use srank_core::pipeline::{Command, ExperimentConfig, Overrides, Pipeline};
use srank_core::{eval, lambdamart, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::UnknownItem(_) => PyKeyError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn opt(v: FeatureValue) -> Option<f64> {
    v.get()
}

#[pyfunction]
fn tokenize_title(title: &str) -> Vec<String> {
    cat::tokenize_title(title).into_iter().collect()
}

#[pyfunction]
fn cosine_similarity(v: Vec<f64>, w: Vec<f64>) -> PyResult<f64> {
    emb::cosine_similarity(&v, &w).map_err(py_err)
}

#[pyfunction]
fn jaccard(a: Vec<String>, b: Vec<String>) -> f64 {
    let a: BTreeSet<String> = a.into_iter().collect();
    let b: BTreeSet<String> = b.into_iter().collect();
    feat::jaccard(&a, &b)
}

#[pyclass(frozen)]
struct Catalog(cat::Catalog);

#[pymethods]
impl Catalog {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        cat::load_catalog(path).map(Catalog).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __contains__(&self, item_id: &str) -> bool {
        self.0.get(item_id).is_some()
    }

    fn ids(&self) -> Vec<String> {
        self.0.iter().map(|i| i.item_id.clone()).collect()
    }

    fn price(&self, item_id: &str) -> PyResult<f64> {
        self.0.require(item_id).map(|i| i.price).map_err(py_err)
    }

    fn title(&self, item_id: &str) -> PyResult<String> {
        self.0.require(item_id).map(|i| i.title.clone()).map_err(py_err)
    }

    fn title_tokens(&self, item_id: &str) -> PyResult<Vec<String>> {
        self.0
            .require(item_id)
            .map(|i| i.title_tokens.iter().cloned().collect())
            .map_err(py_err)
    }
}

#[pyclass(frozen)]
struct EmbeddingTable(emb::EmbeddingTable);

#[pymethods]
impl EmbeddingTable {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        emb::read_embeddings_text(path).map(EmbeddingTable).map_err(py_err)
    }

    #[new]
    fn new(ids: Vec<String>, vectors: Vec<Vec<f64>>) -> PyResult<Self> {
        let dim = vectors.first().map_or(0, Vec::len);
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(PyValueError::new_err("vectors differ in length"));
        }
        emb::EmbeddingTable::new(ids, vectors.concat(), dim)
            .map(EmbeddingTable)
            .map_err(py_err)
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.0.dimension()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __contains__(&self, item_id: &str) -> bool {
        self.0.contains(item_id)
    }

    fn ids(&self) -> Vec<String> {
        self.0.ids().to_vec()
    }

    fn vector(&self, item_id: &str) -> Option<Vec<f64>> {
        self.0.get(item_id).map(<[f64]>::to_vec)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        emb::write_embeddings_text(&self.0, path).map_err(py_err)
    }

    /// `k` most similar other items as (item_id, cosine similarity).
    fn nearest_neighbors(&self, item_id: &str, k: usize) -> PyResult<Vec<(String, f64)>> {
        emb::nearest_neighbors(&self.0, item_id, k).map_err(py_err)
    }
}

fn id_context(ids: Vec<String>) -> ClickContext {
    ClickContext::from_parts(ids.into_iter().map(|id| (id, 1.0, BTreeSet::new())).collect())
}

/// Mean cosine distance to the embedded context clicks; None when missing.
#[pyfunction]
fn cos_distance_avg(candidate: &str, context: Vec<String>, table: &EmbeddingTable) -> Option<f64> {
    opt(feat::cos_distance_avg(candidate, &id_context(context), &table.0))
}

#[pyfunction]
fn cos_distance_last(candidate: &str, context: Vec<String>, table: &EmbeddingTable) -> Option<f64> {
    opt(feat::cos_distance_last(candidate, &id_context(context), &table.0))
}

#[pyfunction]
fn price_ratio_mean(candidate_price: f64, context_prices: Vec<f64>) -> Option<f64> {
    let ctx = ClickContext::from_parts(
        context_prices
            .into_iter()
            .enumerate()
            .map(|(i, p)| (format!("c{i}"), p, BTreeSet::new()))
            .collect(),
    );
    opt(feat::price_ratio_mean(candidate_price, &ctx))
}

/// Jaccard similarity to the most recent context title; None without context.
#[pyfunction]
fn title_jaccard_sim(candidate_tokens: Vec<String>, context_titles: Vec<Vec<String>>) -> Option<f64> {
    let ctx = ClickContext::from_parts(
        context_titles
            .into_iter()
            .enumerate()
            .map(|(i, t)| (format!("c{i}"), 1.0, t.into_iter().collect()))
            .collect(),
    );
    opt(feat::title_jaccard_sim(&candidate_tokens.into_iter().collect(), &ctx))
}

#[pyfunction]
fn reciprocal_rank(ranked_labels: Vec<u8>) -> f64 {
    eval::reciprocal_rank(&ranked_labels)
}

/// (median, ci_low, ci_high) of the bootstrapped MRR.
#[pyfunction]
#[pyo3(signature = (per_query_rr, resamples = eval::DEFAULT_RESAMPLES, seed = 0))]
fn bootstrap_mrr(per_query_rr: Vec<f64>, resamples: usize, seed: u64) -> PyResult<(f64, f64, f64)> {
    let ci = eval::bootstrap_mrr(&per_query_rr, resamples, seed).map_err(py_err)?;
    Ok((ci.median, ci.ci_low, ci.ci_high))
}

#[pyclass(frozen)]
struct TreeEnsemble(lambdamart::TreeEnsemble);

#[pymethods]
impl TreeEnsemble {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        lambdamart::TreeEnsemble::load(path).map(TreeEnsemble).map_err(py_err)
    }

    #[getter]
    fn feature_schema(&self) -> Vec<String> {
        self.0.feature_schema.clone()
    }

    #[getter]
    fn best_iteration(&self) -> usize {
        self.0.best_iteration
    }

    fn __len__(&self) -> usize {
        self.0.trees.len()
    }

    /// Score one instance; None marks a missing feature.
    fn score(&self, features: Vec<Option<f64>>) -> PyResult<f64> {
        let values: Vec<FeatureValue> = features
            .into_iter()
            .map(|f| f.map_or_else(FeatureValue::missing, FeatureValue::present))
            .collect();
        lambdamart::score(&self.0, &values).map_err(py_err)
    }
}

/// Run one pipeline command (`simulate` ... `report`, or `all`).
#[pyfunction]
#[pyo3(signature = (command, config, seed = None, workers = None, dim = None, variant = None, workdir = None))]
fn run_pipeline(
    py: Python<'_>,
    command: &str,
    config: PathBuf,
    seed: Option<u64>,
    workers: Option<usize>,
    dim: Option<usize>,
    variant: Option<&str>,
    workdir: Option<PathBuf>,
) -> PyResult<()> {
    let command: Command = command.parse().map_err(py_err)?;
    let variant = variant.map(str::parse).transpose().map_err(py_err)?;
    let mut cfg = ExperimentConfig::load(config).map_err(py_err)?;
    cfg.apply(&Overrides {
        seed,
        workers,
        dim,
        variant,
        workdir,
    })
    .map_err(py_err)?;
    py.detach(|| Pipeline::new(cfg).and_then(|mut p| p.run(command)))
        .map_err(py_err)
}

#[pymodule]
fn srank(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MISSING", feat::MISSING)?;
    m.add_class::<Catalog>()?;
    m.add_class::<EmbeddingTable>()?;
    m.add_class::<TreeEnsemble>()?;
    m.add_function(wrap_pyfunction!(tokenize_title, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(jaccard, m)?)?;
    m.add_function(wrap_pyfunction!(cos_distance_avg, m)?)?;
    m.add_function(wrap_pyfunction!(cos_distance_last, m)?)?;
    m.add_function(wrap_pyfunction!(price_ratio_mean, m)?)?;
    m.add_function(wrap_pyfunction!(title_jaccard_sim, m)?)?;
    m.add_function(wrap_pyfunction!(reciprocal_rank, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_mrr, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
