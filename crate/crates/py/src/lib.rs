//! Python bindings for the HELM language-model core: notation parsing and
//! topology features, the compression tokenizer, span masking, the encoder,
//! evaluation metrics and the fold-wise comparison statistics.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use helm_lm_core::corpus::kmeans::kmeans_cluster;
use helm_lm_core::corpus::masking;
use helm_lm_core::corpus::pca::pca_reduce;
use helm_lm_core::encoder::{EncoderWeights, Mode, ModelConfig, Session};
use helm_lm_core::eval;
use helm_lm_core::helm;
use helm_lm_core::linalg::Mat;
use helm_lm_core::stats;
use helm_lm_core::tokenizer::{CompressionMap, TokenSequence, Vocabulary as CoreVocabulary};
use helm_lm_core::training::{load_checkpoint, save_checkpoint};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn rows_to_mat(rows: Vec<Vec<f64>>) -> PyResult<Mat> {
    if rows.is_empty() {
        return Err(PyValueError::new_err("empty point list"));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged point list"));
    }
    Ok(Mat::from_rows(&rows))
}

// ---------------------------------------------------------------------------
// HELM notation
// ---------------------------------------------------------------------------

/// Parse a HELM string and return its topology features.
#[pyfunction]
fn parse_features(py: Python<'_>, helm_text: &str) -> PyResult<PyObject> {
    let seq = helm::parse_helm(helm_text).map_err(value_err)?;
    let summary = helm::classify_structure(&seq);
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("key", helm::canonical_key(&seq))?;
    dict.set_item("structure_type", summary.structure_type.to_string())?;
    dict.set_item("n_rings", summary.n_rings)?;
    dict.set_item("n_monomers", seq.n_monomers())?;
    dict.set_item("n_polymers", seq.polymers.len())?;
    Ok(dict.into())
}

/// Canonical deduplication key (invariant under polymer renumbering and
/// connection ordering).
#[pyfunction]
fn canonical_key(helm_text: &str) -> PyResult<String> {
    let seq = helm::parse_helm(helm_text).map_err(value_err)?;
    Ok(helm::canonical_key(&seq))
}

/// Round-trip a HELM string through the parser and serializer.
#[pyfunction]
fn round_trip(helm_text: &str) -> PyResult<String> {
    let seq = helm::parse_helm(helm_text).map_err(value_err)?;
    Ok(helm::serialize_helm(&seq))
}

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

/// Dictionary-based character vocabulary with semantic compression.
#[pyclass]
struct Vocabulary {
    inner: CoreVocabulary,
}

#[pymethods]
impl Vocabulary {
    /// Build from a corpus. `extra_motifs` extends the default
    /// {PEPTIDE -> '/', me -> '*'} dictionary.
    #[staticmethod]
    #[pyo3(signature = (corpus, extra_motifs=None))]
    fn build(corpus: Vec<String>, extra_motifs: Option<Vec<(String, char)>>) -> PyResult<Self> {
        let mut map = CompressionMap::default_paper();
        for (motif, marker) in extra_motifs.unwrap_or_default() {
            map.push(motif, marker).map_err(value_err)?;
        }
        Ok(Vocabulary {
            inner: CoreVocabulary::build(&corpus, &map).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Vocabulary {
            inner: CoreVocabulary::load(&path).map_err(io_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(io_err)
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        self.inner.encode(text).ids
    }

    fn decode(&self, ids: Vec<u32>) -> PyResult<String> {
        self.inner
            .decode(&TokenSequence { ids })
            .map_err(value_err)
    }

    #[getter]
    fn size(&self) -> usize {
        self.inner.size()
    }

    /// Ids of the UNK, MASK and PAD tokens.
    fn special_ids(&self) -> HashMap<String, u32> {
        HashMap::from([
            ("unk".to_string(), self.inner.special.unk),
            ("mask".to_string(), self.inner.special.mask),
            ("pad".to_string(), self.inner.special.pad),
        ])
    }
}

/// Span-mask one token sequence: returns (input_ids, target_ids, loss_mask).
#[pyfunction]
fn apply_span_mask(
    ids: Vec<u32>,
    vocab: &Vocabulary,
    seed: u64,
) -> (Vec<u32>, Vec<u32>, Vec<bool>) {
    let row = masking::apply_span_mask(&TokenSequence { ids }, &vocab.inner, seed);
    (row.input_ids, row.target_ids, row.loss_mask)
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

/// The encoder plus its configuration (f32 weights).
#[pyclass]
struct Encoder {
    weights: EncoderWeights<f32>,
    pad_id: u32,
}

#[pymethods]
impl Encoder {
    /// Randomly initialized encoder over a vocabulary.
    #[staticmethod]
    #[pyo3(signature = (vocab, hidden=64, layers=2, heads=4, kappa=8, max_len=512, seed=0))]
    fn init(
        vocab: &Vocabulary,
        hidden: usize,
        layers: usize,
        heads: usize,
        kappa: usize,
        max_len: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let mut config = ModelConfig::new(vocab.inner.size(), hidden, layers, heads);
        config.max_relative_distance = kappa;
        config.max_len = max_len;
        let weights = EncoderWeights::init(&config, seed).map_err(value_err)?;
        Ok(Encoder {
            weights,
            pad_id: vocab.inner.special.pad,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf, vocab: &Vocabulary) -> PyResult<Self> {
        let contents = load_checkpoint(&path).map_err(io_err)?;
        Ok(Encoder {
            weights: contents.weights,
            pad_id: vocab.inner.special.pad,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.weights, None, &path).map_err(io_err)
    }

    /// Mean-pooled embedding of one token sequence.
    fn embed(&self, ids: Vec<u32>) -> PyResult<Vec<f64>> {
        let mask: Vec<bool> = ids.iter().map(|&id| id != self.pad_id).collect();
        let mut session = Session::new();
        let pooled = helm_lm_core::encoder::mean_pool(
            &mut session,
            &self.weights,
            &ids,
            &mask,
            &mut Mode::Eval,
        )
        .map_err(value_err)?;
        Ok(pooled.value().data().iter().map(|v| *v as f64).collect())
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.weights.parameter_count()
    }

    /// Names of every weight tensor, in checkpoint manifest order.
    fn manifest(&self) -> Vec<String> {
        self.weights
            .named_tensors()
            .into_iter()
            .map(|(n, _)| n)
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// Corrected resampled t-test over fold-wise differences; returns (t, p).
#[pyfunction]
fn corrected_resampled_ttest(
    diffs: Vec<f64>,
    n_train: usize,
    n_test: usize,
) -> PyResult<(f64, f64)> {
    let r = stats::corrected_resampled_ttest(&diffs, n_train, n_test).map_err(value_err)?;
    Ok((r.t, r.p))
}

/// Benjamini-Hochberg step-up; returns (reject_flags, adjusted_p).
#[pyfunction]
#[pyo3(signature = (p_values, q=0.05))]
fn bh_fdr(p_values: Vec<f64>, q: f64) -> PyResult<(Vec<bool>, Vec<f64>)> {
    let r = stats::bh_fdr(&p_values, q).map_err(value_err)?;
    Ok((r.reject, r.adjusted))
}

#[pyfunction]
fn cohens_d(diffs: Vec<f64>) -> PyResult<f64> {
    stats::cohens_d(&diffs).map_err(value_err)
}

/// Conventional effect-size label for a Cohen's d value.
#[pyfunction]
fn effect_magnitude(d: f64) -> String {
    format!("{:?}", stats::EffectMagnitude::from_d(d)).to_lowercase()
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[pyfunction]
fn regression_metrics(
    py: Python<'_>,
    y_true: Vec<f64>,
    y_pred: Vec<f64>,
) -> PyResult<PyObject> {
    let m = eval::regression_metrics(&y_true, &y_pred).map_err(value_err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("r2", m.r2)?;
    dict.set_item("pearson_r", m.pearson_r)?;
    dict.set_item("rmse", m.rmse)?;
    dict.set_item("mae", m.mae)?;
    Ok(dict.into())
}

#[pyfunction]
#[pyo3(signature = (y_true, scores, threshold=0.5))]
fn classification_metrics(
    py: Python<'_>,
    y_true: Vec<bool>,
    scores: Vec<f64>,
    threshold: f64,
) -> PyResult<PyObject> {
    let m = eval::classification_metrics(&y_true, &scores, threshold).map_err(value_err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("roc_auc", m.roc_auc)?;
    dict.set_item("pr_auc", m.pr_auc)?;
    dict.set_item("mcc", m.mcc)?;
    dict.set_item("balanced_accuracy", m.balanced_accuracy)?;
    Ok(dict.into())
}

/// Leave-one-out k-NN accuracy with Euclidean distances.
#[pyfunction]
#[pyo3(signature = (points, labels, k=3))]
fn knn_accuracy(points: Vec<Vec<f64>>, labels: Vec<usize>, k: usize) -> PyResult<f64> {
    eval::knn_classify(&rows_to_mat(points)?, &labels, k).map_err(value_err)
}

/// Silhouette, Davies-Bouldin and Calinski-Harabasz over ground-truth labels.
#[pyfunction]
fn clustering_indices(
    py: Python<'_>,
    points: Vec<Vec<f64>>,
    labels: Vec<usize>,
) -> PyResult<PyObject> {
    let idx = eval::clustering_indices(&rows_to_mat(points)?, &labels).map_err(value_err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("silhouette", idx.silhouette)?;
    dict.set_item("davies_bouldin", idx.davies_bouldin)?;
    dict.set_item("calinski_harabasz", idx.calinski_harabasz)?;
    Ok(dict.into())
}

// ---------------------------------------------------------------------------
// Clustering / reduction
// ---------------------------------------------------------------------------

/// Lloyd's k-means with k-means++ seeding; returns (labels, inertia).
#[pyfunction]
fn kmeans(points: Vec<Vec<f64>>, k: usize, seed: u64) -> PyResult<(Vec<usize>, f64)> {
    let result = kmeans_cluster(&rows_to_mat(points)?, k, seed).map_err(value_err)?;
    Ok((result.labels, result.inertia))
}

/// Mean-centered PCA projection onto the top `dims` components.
#[pyfunction]
fn pca(points: Vec<Vec<f64>>, dims: usize) -> PyResult<Vec<Vec<f64>>> {
    let fit = pca_reduce(&rows_to_mat(points)?, dims).map_err(value_err)?;
    Ok((0..fit.projected.rows)
        .map(|i| fit.projected.row(i).to_vec())
        .collect())
}

#[pymodule]
fn helm_lm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(parse_features, m)?)?;
    m.add_function(wrap_pyfunction!(canonical_key, m)?)?;
    m.add_function(wrap_pyfunction!(round_trip, m)?)?;
    m.add_function(wrap_pyfunction!(apply_span_mask, m)?)?;
    m.add_function(wrap_pyfunction!(corrected_resampled_ttest, m)?)?;
    m.add_function(wrap_pyfunction!(bh_fdr, m)?)?;
    m.add_function(wrap_pyfunction!(cohens_d, m)?)?;
    m.add_function(wrap_pyfunction!(effect_magnitude, m)?)?;
    m.add_function(wrap_pyfunction!(regression_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(classification_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(knn_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(clustering_indices, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(pca, m)?)?;
    m.add_class::<Vocabulary>()?;
    m.add_class::<Encoder>()?;
    Ok(())
}
