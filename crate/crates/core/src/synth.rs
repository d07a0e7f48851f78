//! Deterministic synthetic multimodal embedding spaces.
//!
//! Each scene gets a random unit anchor. Frames are the anchor rotated by at
//! most `intra_scene_spread` radians. Every caption or audio sibling of a
//! frame is the frame rotated by `gap_angle` toward a fixed per-modality
//! offset direction, then rotated once more by at most `noise` radians.
//!
//! Every random draw comes from a ChaCha stream keyed on
//! `(seed, scene, frame, modality, k)`, so frames can be generated in any
//! order (and in parallel) with identical output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{Embedding, Modality};
use crate::store::{
    audio_id, caption_id, Archive, AssetManifest, AssetRecord, EmbeddingStore, StoreError,
    DEFAULT_DIM,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpaceConfig {
    pub dim: usize,
    pub n_scenes: usize,
    pub frames_per_scene: usize,
    pub texts_per_frame: usize,
    pub audios_per_frame: usize,
    /// Radians, in `[0, pi/2]`.
    pub gap_angle: f64,
    pub intra_scene_spread: f64,
    pub noise: f64,
    /// Gram-Schmidt the scene anchors so that distinct scenes are orthogonal.
    pub orthogonal_anchors: bool,
    pub seed: u64,
}

impl Default for SyntheticSpaceConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            n_scenes: 5,
            frames_per_scene: 4,
            texts_per_frame: 1,
            audios_per_frame: 1,
            gap_angle: 0.3,
            intra_scene_spread: 0.05,
            noise: 0.02,
            orthogonal_anchors: true,
            seed: 0,
        }
    }
}

impl SyntheticSpaceConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.dim < 3 {
            return bad(format!("dim must be at least 3, got {}", self.dim));
        }
        if self.n_scenes < 1 {
            return bad("n_scenes must be at least 1".into());
        }
        if self.orthogonal_anchors && self.n_scenes > self.dim {
            return bad(format!(
                "{} orthogonal anchors do not fit in {} dimensions",
                self.n_scenes, self.dim
            ));
        }
        if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&self.gap_angle) {
            return bad(format!("gap_angle {} outside [0, pi/2]", self.gap_angle));
        }
        for (name, v) in [
            ("intra_scene_spread", self.intra_scene_spread),
            ("noise", self.noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        Ok(())
    }
}

const TAG_ANCHOR: u64 = 1;
const TAG_OFFSET: u64 = 2;
const TAG_FRAME: u64 = 3;
const TAG_SIBLING: u64 = 4;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream(seed: u64, key: &[u64]) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    let mut state = splitmix(seed);
    for &k in key {
        state = splitmix(state ^ k.wrapping_mul(0xd6e8_feb8_6659_fd93));
    }
    for chunk in bytes.chunks_exact_mut(8) {
        state = splitmix(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Rotates unit `x` by `angle` radians within the plane spanned by `x` and
/// `toward`.
fn rotate_toward(x: &[f64], toward: &[f64], angle: f64) -> Vec<f64> {
    if angle == 0.0 {
        return x.to_vec();
    }
    let along = dot(toward, x);
    let mut w: Vec<f64> = toward.iter().zip(x).map(|(t, xi)| t - along * xi).collect();
    let n = dot(&w, &w).sqrt();
    if n < 1e-12 {
        return x.to_vec();
    }
    w.iter_mut().for_each(|v| *v /= n);
    let (s, c) = angle.sin_cos();
    unit(x.iter().zip(&w).map(|(xi, wi)| c * xi + s * wi).collect())
}

pub fn scene_label(scene: usize) -> String {
    format!("scene-{scene:02}")
}

pub fn frame_id(scene: usize, frame: usize) -> String {
    format!("{}-f{frame:03}", scene_label(scene))
}

struct FrameAssets {
    records: Vec<AssetRecord>,
    embeddings: Vec<Embedding>,
}

/// Builds the manifest and a normalized store for `cfg`.
pub fn generate(cfg: &SyntheticSpaceConfig) -> Result<(AssetManifest, EmbeddingStore), SynthError> {
    cfg.validate()?;
    let dim = cfg.dim;

    let mut anchors: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_scenes);
    for s in 0..cfg.n_scenes {
        let mut v = gaussian(&mut stream(cfg.seed, &[TAG_ANCHOR, s as u64]), dim);
        if cfg.orthogonal_anchors {
            for prev in &anchors {
                let p = dot(&v, prev);
                v.iter_mut().zip(prev).for_each(|(x, q)| *x -= p * q);
            }
        }
        anchors.push(unit(v));
    }
    let offsets: Vec<Vec<f64>> = [Modality::Text, Modality::Audio]
        .iter()
        .map(|m| {
            unit(gaussian(
                &mut stream(cfg.seed, &[TAG_OFFSET, m.code() as u64]),
                dim,
            ))
        })
        .collect();

    let frames: Vec<(usize, usize)> = (0..cfg.n_scenes)
        .flat_map(|s| (0..cfg.frames_per_scene).map(move |f| (s, f)))
        .collect();

    let per_frame: Vec<FrameAssets> = frames
        .par_iter()
        .map(|&(s, f)| {
            let mut rng = stream(cfg.seed, &[TAG_FRAME, s as u64, f as u64]);
            let dir = gaussian(&mut rng, dim);
            let angle = cfg.intra_scene_spread * rng.random::<f64>();
            let frame = rotate_toward(&anchors[s], &dir, angle);

            let scene = scene_label(s);
            let fid = frame_id(s, f);
            let mut records = vec![AssetRecord::new(
                fid.clone(),
                Modality::Image,
                scene.clone(),
                format!("synth://{scene}/{fid}.png"),
            )];
            let mut embeddings = vec![Embedding::from_f64(fid.clone(), Modality::Image, &frame)];

            let sibling = |modality: Modality, k: usize| {
                let offset = &offsets[modality.code() as usize - 1];
                let gapped = rotate_toward(&frame, offset, cfg.gap_angle);
                let mut rng = stream(
                    cfg.seed,
                    &[
                        TAG_SIBLING,
                        s as u64,
                        f as u64,
                        modality.code() as u64,
                        k as u64,
                    ],
                );
                let dir = gaussian(&mut rng, dim);
                let angle = cfg.noise * rng.random::<f64>();
                rotate_toward(&gapped, &dir, angle)
            };

            for k in 0..cfg.texts_per_frame {
                let id = caption_id(&fid, k as u32);
                records.push(
                    AssetRecord::new(id.clone(), Modality::Text, scene.clone(), "")
                        .with_caption(format!("synthetic caption {k} of {fid}")),
                );
                embeddings.push(Embedding::from_f64(
                    id,
                    Modality::Text,
                    &sibling(Modality::Text, k),
                ));
            }
            for k in 0..cfg.audios_per_frame {
                let id = audio_id(&fid, k as u32, None);
                records.push(AssetRecord::new(
                    id.clone(),
                    Modality::Audio,
                    scene.clone(),
                    format!("synth://{scene}/{fid}-a{k}.wav"),
                ));
                embeddings.push(Embedding::from_f64(
                    id,
                    Modality::Audio,
                    &sibling(Modality::Audio, k),
                ));
            }
            FrameAssets {
                records,
                embeddings: embeddings
                    .into_iter()
                    .collect::<Result<_, _>>()
                    .expect("generated vectors are finite and have dim >= 3"),
            }
        })
        .collect();

    let mut records = Vec::new();
    let mut embeddings = Vec::new();
    for fa in per_frame {
        records.extend(fa.records);
        embeddings.extend(fa.embeddings);
    }
    let manifest = AssetManifest::from_records(records)?;
    let archive = Archive::new(dim, embeddings)?;
    let store = EmbeddingStore::from_parts(manifest.clone(), archive, true)?;
    Ok((manifest, store))
}
