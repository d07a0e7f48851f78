//! Consistency metrics between modalities and candidate ranking.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{
    dis_cos, euclidean, normalize64, slerp64, Embedding, EmbeddingError, Modality,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("no candidates to rank")]
    EmptyCandidates,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("score for candidate '{0}' is not a number")]
    NanScore(String),
}

/// Inconsistency of one (image, text, audio) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InconsistencyReport {
    pub frame_id: String,
    pub text_id: String,
    pub audio_id: String,
    pub d_image_text: f64,
    pub d_image_audio: f64,
    pub inc: f64,
}

/// `inc = 2 * dis_cos(image, text) - dis_cos(image, audio)`.
///
/// Ranges over `[-1, 2]`; 0 means image, caption and audio agree.
pub fn inconsistency(
    image: &Embedding,
    text: &Embedding,
    audio: &Embedding,
) -> Result<InconsistencyReport, MetricsError> {
    image.expect_modality(Modality::Image)?;
    text.expect_modality(Modality::Text)?;
    audio.expect_modality(Modality::Audio)?;
    let d_image_text = dis_cos(image, text)?;
    let d_image_audio = dis_cos(image, audio)?;
    Ok(InconsistencyReport {
        frame_id: image.id().to_string(),
        text_id: text.id().to_string(),
        audio_id: audio.id().to_string(),
        d_image_text,
        d_image_audio,
        inc: 2.0 * d_image_text - d_image_audio,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    #[default]
    Cosine,
    Euclidean,
}

impl DistanceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DistanceKind::Cosine => "cosine",
            DistanceKind::Euclidean => "euclidean",
        }
    }
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistanceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cosine" => Ok(DistanceKind::Cosine),
            "euclidean" => Ok(DistanceKind::Euclidean),
            other => Err(format!(
                "unknown distance '{other}' (expected cosine|euclidean)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlerpParams {
    theta: f64,
    pub distance: DistanceKind,
}

impl Default for SlerpParams {
    fn default() -> Self {
        Self {
            theta: 0.5,
            distance: DistanceKind::Cosine,
        }
    }
}

impl SlerpParams {
    pub fn new(theta: f64, distance: DistanceKind) -> Result<Self, EmbeddingError> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(EmbeddingError::InvalidTheta(theta));
        }
        Ok(Self { theta, distance })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
}

/// Projects the variation between two frames onto the audio subspace.
///
/// `m = slerp(target_frame, ref_frame, theta)`, then the displacement
/// `m - ref_frame` is added to `ref_audio` and the sum is renormalized.
/// `theta = 1` returns `ref_audio`; `theta = 0` carries the full displacement
/// from the reference frame to the target frame.
pub fn slerp_audio_target(
    ref_audio: &Embedding,
    ref_frame: &Embedding,
    target_frame: &Embedding,
    params: &SlerpParams,
) -> Result<Embedding, MetricsError> {
    ref_audio.expect_modality(Modality::Audio)?;
    ref_frame.expect_modality(Modality::Image)?;
    target_frame.expect_modality(Modality::Image)?;
    for e in [ref_audio, ref_frame, target_frame] {
        if e.dim() != ref_audio.dim() {
            return Err(EmbeddingError::DimMismatch {
                left: ref_audio.dim(),
                right: e.dim(),
            }
            .into());
        }
        e.expect_unit()?;
    }
    let reference = ref_frame.to_f64();
    let mid = slerp64(&target_frame.to_f64(), &reference, params.theta)?;
    let mut out: Vec<f64> = ref_audio
        .to_f64()
        .iter()
        .zip(mid.iter().zip(&reference))
        .map(|(a, (m, r))| a + (m - r))
        .collect();
    normalize64(&mut out)?;
    Ok(Embedding::from_f64(
        format!("{}@{}", ref_audio.id(), target_frame.id()),
        Modality::Audio,
        &out,
    )?)
}

/// Distance between a candidate audio and a projected audio target.
pub fn slerp_distance(
    candidate: &Embedding,
    target: &Embedding,
    params: &SlerpParams,
) -> Result<f64, MetricsError> {
    candidate.expect_modality(Modality::Audio)?;
    Ok(match params.distance {
        DistanceKind::Cosine => dis_cos(candidate, target)?,
        DistanceKind::Euclidean => euclidean(candidate, target)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub candidate_id: String,
    pub score: f64,
}

/// Candidates sorted ascending by score, ties broken by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub query_id: String,
    pub metric_name: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedResult {
    pub fn best(&self) -> Option<&RankedEntry> {
        self.entries.first()
    }
}

fn order(a: &RankedEntry, b: &RankedEntry) -> Ordering {
    a.score
        .total_cmp(&b.score)
        .then_with(|| a.candidate_id.cmp(&b.candidate_id))
}

/// Sorts precomputed `(candidate_id, score)` pairs and keeps the best `k`.
pub fn rank_scores(
    query_id: &str,
    metric_name: &str,
    scores: Vec<(String, f64)>,
    k: usize,
) -> Result<RankedResult, MetricsError> {
    if k == 0 {
        return Err(MetricsError::InvalidK);
    }
    if scores.is_empty() {
        return Err(MetricsError::EmptyCandidates);
    }
    let mut entries = Vec::with_capacity(scores.len());
    for (candidate_id, score) in scores {
        if score.is_nan() {
            return Err(MetricsError::NanScore(candidate_id));
        }
        entries.push(RankedEntry {
            candidate_id,
            score,
        });
    }
    if k < entries.len() {
        entries.select_nth_unstable_by(k - 1, order);
        entries.truncate(k);
    }
    entries.sort_unstable_by(order);
    Ok(RankedResult {
        query_id: query_id.to_string(),
        metric_name: metric_name.to_string(),
        entries,
    })
}

/// Scores every candidate (in parallel) and ranks them ascending.
pub fn rank_candidates<C, F>(
    query_id: &str,
    metric_name: &str,
    candidates: &[C],
    k: usize,
    score: F,
) -> Result<RankedResult, MetricsError>
where
    C: AsRef<Embedding> + Sync,
    F: Fn(&Embedding) -> Result<f64, MetricsError> + Sync,
{
    if k == 0 {
        return Err(MetricsError::InvalidK);
    }
    if candidates.is_empty() {
        return Err(MetricsError::EmptyCandidates);
    }
    let scores = candidates
        .par_iter()
        .map(|c| {
            let e = c.as_ref();
            score(e).map(|s| (e.id().to_string(), s))
        })
        .collect::<Result<Vec<_>, _>>()?;
    rank_scores(query_id, metric_name, scores, k)
}

impl AsRef<Embedding> for Embedding {
    fn as_ref(&self) -> &Embedding {
        self
    }
}

/// Ranks (caption, audio) pairs for one image by `|inc|`; candidate ids are
/// the audio ids. Also returns the signed per-pair reports.
pub fn rank_by_inconsistency(
    image: &Embedding,
    pairs: &[(&Embedding, &Embedding)],
    k: usize,
) -> Result<(RankedResult, Vec<InconsistencyReport>), MetricsError> {
    if k == 0 {
        return Err(MetricsError::InvalidK);
    }
    if pairs.is_empty() {
        return Err(MetricsError::EmptyCandidates);
    }
    let reports = pairs
        .par_iter()
        .map(|(t, a)| inconsistency(image, t, a))
        .collect::<Result<Vec<_>, _>>()?;
    let scores = reports
        .iter()
        .map(|r| (r.audio_id.clone(), r.inc.abs()))
        .collect();
    let ranked = rank_scores(image.id(), "abs_inconsistency", scores, k)?;
    Ok((ranked, reports))
}
