//! Vector mathematics on the unit hypersphere.
//!
//! Components are stored as `f32` (what encoders emit) but every reduction
//! and interpolation below runs in `f64`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Norms below this are treated as the zero vector.
pub const ZERO_NORM: f64 = 1e-12;

/// Accepted deviation from norm 1 for inputs that must be unit vectors.
///
/// Looser than the 1e-6 output guarantee because inputs may have been
/// rounded to `f32` after normalization.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

/// Below this arc angle SLERP degrades to normalized linear interpolation.
pub const SLERP_LERP_THRESHOLD: f64 = 1e-6;

/// Cosine at or below `-1 + ANTIPODAL_MARGIN` is treated as antipodal.
pub const ANTIPODAL_MARGIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("zero vector{}", id_suffix(.0))]
    ZeroVector(Option<String>),
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("embedding '{id}' has a non-finite component at index {index}")]
    NonFinite { id: String, index: usize },
    #[error("embedding '{id}' has dimension {dim}, at least 2 is required")]
    TooFewDims { id: String, dim: usize },
    #[error("vectors are antipodal, interpolation path is undefined")]
    AntipodalVectors,
    #[error("embedding '{id}' is not unit norm (norm = {norm})")]
    NotUnitNorm { id: String, norm: f64 },
    #[error("embedding '{id}' has modality {found}, expected {expected}")]
    WrongModality {
        id: String,
        expected: Modality,
        found: Modality,
    },
    #[error("interpolation weight {0} outside [0, 1]")]
    InvalidTheta(f64),
    #[error("unknown modality '{0}'")]
    UnknownModality(String),
}

fn id_suffix(id: &Option<String>) -> String {
    match id {
        Some(id) => format!(" '{id}'"),
        None => String::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Text,
    Audio,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Image, Modality::Text, Modality::Audio];

    /// Stable serialization code.
    pub fn code(self) -> u8 {
        match self {
            Modality::Image => 0,
            Modality::Text => 1,
            Modality::Audio => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Modality::Image),
            1 => Some(Modality::Text),
            2 => Some(Modality::Audio),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Text => "text",
            Modality::Audio => "audio",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = EmbeddingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "image" => Ok(Modality::Image),
            "text" => Ok(Modality::Text),
            "audio" => Ok(Modality::Audio),
            _ => Err(EmbeddingError::UnknownModality(s.to_string())),
        }
    }
}

/// A modality-tagged vector for one asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    id: String,
    modality: Modality,
    vector: Vec<f32>,
}

impl Embedding {
    /// Validates that every component is finite and that `dim >= 2`.
    pub fn new(
        id: impl Into<String>,
        modality: Modality,
        vector: Vec<f32>,
    ) -> Result<Self, EmbeddingError> {
        let id = id.into();
        if vector.len() < 2 {
            return Err(EmbeddingError::TooFewDims {
                id,
                dim: vector.len(),
            });
        }
        if let Some(index) = vector.iter().position(|x| !x.is_finite()) {
            return Err(EmbeddingError::NonFinite { id, index });
        }
        Ok(Self {
            id,
            modality,
            vector,
        })
    }

    pub(crate) fn from_f64(
        id: impl Into<String>,
        modality: Modality,
        vector: &[f64],
    ) -> Result<Self, EmbeddingError> {
        Self::new(id, modality, vector.iter().map(|&x| x as f32).collect())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn vector(&self) -> &[f32] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.vector)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub(crate) fn to_f64(&self) -> Vec<f64> {
        self.vector.iter().map(|&x| x as f64).collect()
    }

    pub(crate) fn expect_modality(&self, expected: Modality) -> Result<(), EmbeddingError> {
        if self.modality == expected {
            Ok(())
        } else {
            Err(EmbeddingError::WrongModality {
                id: self.id.clone(),
                expected,
                found: self.modality,
            })
        }
    }

    pub(crate) fn expect_unit(&self) -> Result<(), EmbeddingError> {
        let n = self.norm();
        if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(EmbeddingError::NotUnitNorm {
                id: self.id.clone(),
                norm: n,
            });
        }
        Ok(())
    }

    pub fn into_vector(self) -> Vec<f32> {
        self.vector
    }
}

fn check_dims(a: usize, b: usize) -> Result<(), EmbeddingError> {
    if a != b {
        return Err(EmbeddingError::DimMismatch { left: a, right: b });
    }
    Ok(())
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn norm(v: &[f32]) -> f64 {
    dot(v, v).sqrt()
}

fn norm64(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `v` to unit euclidean norm.
pub fn normalize(v: &Embedding) -> Result<Embedding, EmbeddingError> {
    let n = v.norm();
    if n < ZERO_NORM {
        return Err(EmbeddingError::ZeroVector(Some(v.id.clone())));
    }
    let scaled: Vec<f64> = v.vector.iter().map(|&x| x as f64 / n).collect();
    Embedding::from_f64(v.id.clone(), v.modality, &scaled)
}

pub(crate) fn normalize64(v: &mut [f64]) -> Result<(), EmbeddingError> {
    let n = norm64(v);
    if n < ZERO_NORM {
        return Err(EmbeddingError::ZeroVector(None));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(())
}

pub(crate) fn cosine_slices(a: &[f32], b: &[f32]) -> Result<f64, EmbeddingError> {
    check_dims(a.len(), b.len())?;
    let (na2, nb2) = (dot(a, a), dot(b, b));
    if na2.sqrt() < ZERO_NORM || nb2.sqrt() < ZERO_NORM {
        return Err(EmbeddingError::ZeroVector(None));
    }
    // sqrt(na2 * nb2) is exact for a == b, so cos(a, a) is exactly 1.
    Ok((dot(a, b) / (na2 * nb2).sqrt()).clamp(-1.0, 1.0))
}

/// `dot(a, b) / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, EmbeddingError> {
    cosine_slices(&a.vector, &b.vector).map_err(|e| match e {
        EmbeddingError::ZeroVector(_) => {
            let id = if a.norm() < ZERO_NORM { &a.id } else { &b.id };
            EmbeddingError::ZeroVector(Some(id.clone()))
        }
        other => other,
    })
}

/// Normalized cosine distance `(1 - cos) / 2`, in `[0, 1]`.
///
/// 0 for parallel vectors, 0.5 for orthogonal ones, 1 for antiparallel ones.
pub fn dis_cos(a: &Embedding, b: &Embedding) -> Result<f64, EmbeddingError> {
    Ok((1.0 - cosine_similarity(a, b)?) / 2.0)
}

pub fn euclidean(a: &Embedding, b: &Embedding) -> Result<f64, EmbeddingError> {
    check_dims(a.dim(), b.dim())?;
    Ok(a.vector
        .iter()
        .zip(&b.vector)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

/// SLERP on `f64` unit vectors. Callers validate norms and `theta`.
pub(crate) fn slerp64(a: &[f64], b: &[f64], theta: f64) -> Result<Vec<f64>, EmbeddingError> {
    check_dims(a.len(), b.len())?;
    let cos = (a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (norm64(a) * norm64(b)))
        .clamp(-1.0, 1.0);
    if cos <= -1.0 + ANTIPODAL_MARGIN {
        return Err(EmbeddingError::AntipodalVectors);
    }
    let omega = cos.acos();
    let mut out: Vec<f64> = if omega < SLERP_LERP_THRESHOLD {
        a.iter()
            .zip(b)
            .map(|(x, y)| (1.0 - theta) * x + theta * y)
            .collect()
    } else {
        let s = omega.sin();
        let wa = ((1.0 - theta) * omega).sin() / s;
        let wb = (theta * omega).sin() / s;
        a.iter().zip(b).map(|(x, y)| wa * x + wb * y).collect()
    };
    // Absorbs the residual norm drift of the input rounding.
    normalize64(&mut out)?;
    Ok(out)
}

/// Spherical linear interpolation from `a` (`theta = 0`) to `b` (`theta = 1`).
///
/// Both inputs must be unit vectors. The result keeps `a`'s id and modality.
pub fn slerp(a: &Embedding, b: &Embedding, theta: f64) -> Result<Embedding, EmbeddingError> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(EmbeddingError::InvalidTheta(theta));
    }
    check_dims(a.dim(), b.dim())?;
    a.expect_unit()?;
    b.expect_unit()?;
    let out = slerp64(&a.to_f64(), &b.to_f64(), theta)?;
    Embedding::from_f64(a.id.clone(), a.modality, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(v: &[f32]) -> Embedding {
        Embedding::new("x", Modality::Image, v.to_vec()).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn modality_codes_are_stable() {
        for m in Modality::ALL {
            assert_eq!(Modality::from_code(m.code()), Some(m));
            assert_eq!(m.as_str().parse::<Modality>().unwrap(), m);
        }
        assert_eq!(Modality::Image.code(), 0);
        assert_eq!(Modality::Text.code(), 1);
        assert_eq!(Modality::Audio.code(), 2);
        assert_eq!(Modality::from_code(3), None);
    }

    #[test]
    fn rejects_bad_vectors() {
        assert!(matches!(
            Embedding::new("a", Modality::Audio, vec![1.0]),
            Err(EmbeddingError::TooFewDims { dim: 1, .. })
        ));
        assert!(matches!(
            Embedding::new("a", Modality::Audio, vec![1.0, f32::NAN]),
            Err(EmbeddingError::NonFinite { index: 1, .. })
        ));
        assert!(Embedding::new("a", Modality::Audio, vec![1.0, f32::INFINITY]).is_err());
    }

    #[test]
    fn normalize_examples() {
        let n = normalize(&e(&[3.0, 4.0])).unwrap();
        assert!(close(n.vector()[0] as f64, 0.6, 1e-7));
        assert!(close(n.vector()[1] as f64, 0.8, 1e-7));
        assert_eq!(
            normalize(&e(&[1.0, 0.0, 0.0])).unwrap().vector(),
            &[1.0, 0.0, 0.0]
        );
        assert!(matches!(
            normalize(&e(&[0.0, 0.0])),
            Err(EmbeddingError::ZeroVector(Some(_)))
        ));
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(
            cosine_similarity(&e(&[1.0, 0.0]), &e(&[1.0, 0.0])).unwrap(),
            1.0
        );
        assert_eq!(
            cosine_similarity(&e(&[1.0, 0.0]), &e(&[-1.0, 0.0])).unwrap(),
            -1.0
        );
        assert_eq!(
            cosine_similarity(&e(&[1.0, 0.0]), &e(&[0.0, 1.0])).unwrap(),
            0.0
        );
        assert!(matches!(
            cosine_similarity(&e(&[1.0, 0.0]), &e(&[1.0, 0.0, 0.0])),
            Err(EmbeddingError::DimMismatch { left: 2, right: 3 })
        ));
        assert!(matches!(
            cosine_similarity(&e(&[1.0, 0.0]), &e(&[0.0, 0.0])),
            Err(EmbeddingError::ZeroVector(_))
        ));
    }

    #[test]
    fn dis_cos_examples() {
        let a = e(&[0.3, -0.7, 0.2]);
        let neg = e(&[-0.3, 0.7, -0.2]);
        assert!(close(dis_cos(&a, &a).unwrap(), 0.0, 1e-12));
        assert!(close(dis_cos(&a, &neg).unwrap(), 1.0, 1e-12));
        assert_eq!(dis_cos(&e(&[1.0, 0.0]), &e(&[0.0, 1.0])).unwrap(), 0.5);
    }

    #[test]
    fn euclidean_examples() {
        let a = e(&[0.25, 0.5]);
        assert_eq!(euclidean(&a, &a).unwrap(), 0.0);
        assert_eq!(euclidean(&e(&[0.0, 0.0]), &e(&[3.0, 4.0])).unwrap(), 5.0);
        assert!(close(
            euclidean(&e(&[1.0, 0.0]), &e(&[0.0, 1.0])).unwrap(),
            std::f64::consts::SQRT_2,
            1e-15
        ));
        assert!(euclidean(&e(&[1.0, 0.0]), &e(&[1.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn slerp_examples() {
        let a = e(&[1.0, 0.0]);
        let b = e(&[0.0, 1.0]);
        assert_eq!(slerp(&a, &b, 0.0).unwrap().vector(), a.vector());
        let end = slerp(&a, &b, 1.0).unwrap();
        assert!(close(end.vector()[0] as f64, 0.0, 1e-7));
        assert!(close(end.vector()[1] as f64, 1.0, 1e-7));
        let mid = slerp(&a, &b, 0.5).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(mid.vector()[0] as f64, h, 1e-7));
        assert!(close(mid.vector()[1] as f64, h, 1e-7));
    }

    #[test]
    fn slerp_errors() {
        let a = e(&[1.0, 0.0]);
        assert_eq!(
            slerp(&a, &e(&[-1.0, 0.0]), 0.5),
            Err(EmbeddingError::AntipodalVectors)
        );
        assert!(matches!(
            slerp(&a, &e(&[2.0, 0.0]), 0.5),
            Err(EmbeddingError::NotUnitNorm { .. })
        ));
        assert!(matches!(
            slerp(&a, &e(&[0.0, 1.0, 0.0]), 0.5),
            Err(EmbeddingError::DimMismatch { .. })
        ));
        assert_eq!(
            slerp(&a, &e(&[0.0, 1.0]), 1.5),
            Err(EmbeddingError::InvalidTheta(1.5))
        );
    }

    #[test]
    fn slerp_near_parallel_falls_back_to_lerp() {
        let a = e(&[1.0, 0.0]);
        let out = slerp(&a, &a, 0.3).unwrap();
        assert_eq!(out.vector(), a.vector());
    }
}
