//! Python bindings for the embedding math, ranking, synthetic spaces and stores.

use std::fmt::Display;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sonify_core::embedding as emb;
use sonify_core::eval;
use sonify_core::metrics::{self, DistanceKind, RankedResult, SlerpParams};
use sonify_core::retrieval;
use sonify_core::store::{self, StoreError};
use sonify_core::synth::{self, SyntheticSpaceConfig};
use sonify_core::{Embedding, Modality};

create_exception!(sonify, SonifyError, PyException);

fn err(e: impl Display) -> PyErr {
    SonifyError::new_err(e.to_string())
}

fn store_err(e: StoreError) -> PyErr {
    match e {
        StoreError::Io(msg) => PyOSError::new_err(msg),
        other => err(other),
    }
}

fn distance_kind(name: &str) -> PyResult<DistanceKind> {
    match name {
        "cosine" => Ok(DistanceKind::Cosine),
        "euclidean" => Ok(DistanceKind::Euclidean),
        other => Err(err(format!(
            "unknown distance {other:?}; expected cosine or euclidean"
        ))),
    }
}

fn ranked_pairs(r: RankedResult) -> Vec<(String, f64)> {
    r.entries
        .into_iter()
        .map(|e| (e.candidate_id, e.score))
        .collect()
}

/// Modality-tagged vector. Stored as float32.
#[pyclass(name = "Embedding", module = "sonify", frozen)]
pub struct PyEmbedding {
    inner: Embedding,
}

impl From<Embedding> for PyEmbedding {
    fn from(inner: Embedding) -> Self {
        Self { inner }
    }
}

#[pymethods]
impl PyEmbedding {
    #[new]
    fn new(id: String, modality: &str, vector: Vec<f32>) -> PyResult<Self> {
        let m: Modality = modality.parse().map_err(err)?;
        Embedding::new(id, m, vector).map(Self::from).map_err(err)
    }

    #[getter]
    fn id(&self) -> &str {
        self.inner.id()
    }

    #[getter]
    fn modality(&self) -> &'static str {
        self.inner.modality().as_str()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn vector(&self) -> Vec<f32> {
        self.inner.vector().to_vec()
    }

    fn norm(&self) -> f64 {
        self.inner.norm()
    }

    fn __len__(&self) -> usize {
        self.inner.dim()
    }

    fn __repr__(&self) -> String {
        format!(
            "Embedding(id={:?}, modality={:?}, dim={})",
            self.inner.id(),
            self.inner.modality().as_str(),
            self.inner.dim()
        )
    }
}

#[pyfunction]
fn normalize(e: &PyEmbedding) -> PyResult<PyEmbedding> {
    emb::normalize(&e.inner).map(Into::into).map_err(err)
}

#[pyfunction]
fn cosine_similarity(a: &PyEmbedding, b: &PyEmbedding) -> PyResult<f64> {
    emb::cosine_similarity(&a.inner, &b.inner).map_err(err)
}

/// `(1 - cos) / 2`, in `[0, 1]`.
#[pyfunction]
fn dis_cos(a: &PyEmbedding, b: &PyEmbedding) -> PyResult<f64> {
    emb::dis_cos(&a.inner, &b.inner).map_err(err)
}

#[pyfunction]
fn euclidean(a: &PyEmbedding, b: &PyEmbedding) -> PyResult<f64> {
    emb::euclidean(&a.inner, &b.inner).map_err(err)
}

#[pyfunction]
fn slerp(a: &PyEmbedding, b: &PyEmbedding, theta: f64) -> PyResult<PyEmbedding> {
    emb::slerp(&a.inner, &b.inner, theta)
        .map(Into::into)
        .map_err(err)
}

/// Returns a dict with `d_image_text`, `d_image_audio` and `inc`.
#[pyfunction]
fn inconsistency<'py>(
    py: Python<'py>,
    image: &PyEmbedding,
    text: &PyEmbedding,
    audio: &PyEmbedding,
) -> PyResult<Bound<'py, PyDict>> {
    let r = metrics::inconsistency(&image.inner, &text.inner, &audio.inner).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("frame_id", r.frame_id)?;
    d.set_item("text_id", r.text_id)?;
    d.set_item("audio_id", r.audio_id)?;
    d.set_item("d_image_text", r.d_image_text)?;
    d.set_item("d_image_audio", r.d_image_audio)?;
    d.set_item("inc", r.inc)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (ref_audio, ref_frame, target_frame, theta = 0.5))]
fn slerp_audio_target(
    ref_audio: &PyEmbedding,
    ref_frame: &PyEmbedding,
    target_frame: &PyEmbedding,
    theta: f64,
) -> PyResult<PyEmbedding> {
    let params = SlerpParams::new(theta, DistanceKind::Cosine).map_err(err)?;
    metrics::slerp_audio_target(
        &ref_audio.inner,
        &ref_frame.inner,
        &target_frame.inner,
        &params,
    )
    .map(Into::into)
    .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (candidate, target, distance = "cosine"))]
fn slerp_distance(candidate: &PyEmbedding, target: &PyEmbedding, distance: &str) -> PyResult<f64> {
    let params = SlerpParams::new(0.5, distance_kind(distance)?).map_err(err)?;
    metrics::slerp_distance(&candidate.inner, &target.inner, &params).map_err(err)
}

/// Ranks candidates by distance to `query`, ascending, ties by id.
#[pyfunction]
#[pyo3(signature = (query, candidates, k, distance = "cosine"))]
fn ranking(
    query: &PyEmbedding,
    candidates: Vec<PyRef<'_, PyEmbedding>>,
    k: usize,
    distance: &str,
) -> PyResult<Vec<(String, f64)>> {
    let kind = distance_kind(distance)?;
    let pool: Vec<Embedding> = candidates.iter().map(|c| c.inner.clone()).collect();
    let q = &query.inner;
    let ranked = metrics::rank_candidates(q.id(), kind.as_str(), &pool, k, |c| {
        Ok(match kind {
            DistanceKind::Cosine => emb::dis_cos(q, c)?,
            DistanceKind::Euclidean => emb::euclidean(q, c)?,
        })
    })
    .map_err(err)?;
    Ok(ranked_pairs(ranked))
}

#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    eval::pearson(&x, &y).map_err(err)
}

/// Validated manifest plus embeddings, indexed by id, modality and scene.
#[pyclass(name = "EmbeddingStore", module = "sonify", frozen)]
pub struct PyEmbeddingStore {
    inner: store::EmbeddingStore,
}

#[pymethods]
impl PyEmbeddingStore {
    #[staticmethod]
    #[pyo3(signature = (manifest, archive, normalize = true))]
    fn ingest(manifest: &str, archive: &str, normalize: bool) -> PyResult<Self> {
        store::EmbeddingStore::ingest(manifest, archive, normalize)
            .map(|inner| Self { inner })
            .map_err(store_err)
    }

    fn write(&self, manifest: &str, archive: &str) -> PyResult<()> {
        store::write_manifest(manifest, self.inner.manifest()).map_err(store_err)?;
        store::write_archive(archive, &self.inner.to_archive()).map_err(store_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Ids in archive order, optionally restricted to one modality.
    #[pyo3(signature = (modality = None))]
    fn ids(&self, modality: Option<&str>) -> PyResult<Vec<String>> {
        let filter = modality
            .map(str::parse::<Modality>)
            .transpose()
            .map_err(err)?;
        Ok(self
            .inner
            .embeddings()
            .iter()
            .filter(|e| filter.is_none_or(|m| e.modality() == m))
            .map(|e| e.id().to_string())
            .collect())
    }

    fn scenes(&self) -> Vec<String> {
        self.inner.scenes().map(str::to_string).collect()
    }

    fn scene_of(&self, id: &str) -> Option<String> {
        self.inner.scene_of(id).map(str::to_string)
    }

    fn get(&self, id: &str) -> PyResult<PyEmbedding> {
        self.inner
            .require(id)
            .cloned()
            .map(Into::into)
            .map_err(store_err)
    }

    /// Library audio nearest to a frame by `dis_cos`.
    #[pyo3(signature = (frame_id, k = 1))]
    fn retrieve(&self, frame_id: &str, k: usize) -> PyResult<Vec<(String, f64)>> {
        let frame = self.inner.require(frame_id).map_err(store_err)?;
        let plan = retrieval::sonorize_scheme1(frame, &self.inner, k).map_err(err)?;
        Ok(ranked_pairs(plan.candidates))
    }

    fn __repr__(&self) -> String {
        let c = self.inner.counts();
        format!(
            "EmbeddingStore(dim={}, images={}, texts={}, audios={})",
            self.inner.dim(),
            c.image,
            c.text,
            c.audio
        )
    }
}

/// Seeded synthetic space; unspecified options take the library defaults.
#[pyfunction]
#[pyo3(signature = (
    seed = 0, dim = None, n_scenes = None, frames_per_scene = None, texts_per_frame = None,
    audios_per_frame = None, gap_angle = None, intra_scene_spread = None, noise = None,
    orthogonal_anchors = None,
))]
#[allow(clippy::too_many_arguments)]
fn generate_synthetic(
    seed: u64,
    dim: Option<usize>,
    n_scenes: Option<usize>,
    frames_per_scene: Option<usize>,
    texts_per_frame: Option<usize>,
    audios_per_frame: Option<usize>,
    gap_angle: Option<f64>,
    intra_scene_spread: Option<f64>,
    noise: Option<f64>,
    orthogonal_anchors: Option<bool>,
) -> PyResult<PyEmbeddingStore> {
    let d = SyntheticSpaceConfig::default();
    let cfg = SyntheticSpaceConfig {
        seed,
        dim: dim.unwrap_or(d.dim),
        n_scenes: n_scenes.unwrap_or(d.n_scenes),
        frames_per_scene: frames_per_scene.unwrap_or(d.frames_per_scene),
        texts_per_frame: texts_per_frame.unwrap_or(d.texts_per_frame),
        audios_per_frame: audios_per_frame.unwrap_or(d.audios_per_frame),
        gap_angle: gap_angle.unwrap_or(d.gap_angle),
        intra_scene_spread: intra_scene_spread.unwrap_or(d.intra_scene_spread),
        noise: noise.unwrap_or(d.noise),
        orthogonal_anchors: orthogonal_anchors.unwrap_or(d.orthogonal_anchors),
    };
    let (_, inner) = synth::generate(&cfg).map_err(err)?;
    Ok(PyEmbeddingStore { inner })
}

#[pymodule]
pub fn sonify(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SonifyError", m.py().get_type::<SonifyError>())?;
    m.add_class::<PyEmbedding>()?;
    m.add_class::<PyEmbeddingStore>()?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(dis_cos, m)?)?;
    m.add_function(wrap_pyfunction!(euclidean, m)?)?;
    m.add_function(wrap_pyfunction!(slerp, m)?)?;
    m.add_function(wrap_pyfunction!(inconsistency, m)?)?;
    m.add_function(wrap_pyfunction!(slerp_audio_target, m)?)?;
    m.add_function(wrap_pyfunction!(slerp_distance, m)?)?;
    m.add_function(wrap_pyfunction!(ranking, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    Ok(())
}
