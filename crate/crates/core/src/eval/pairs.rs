use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::population_stats;
use super::EvalError;
use crate::embedding::{Embedding, Modality};
use crate::metrics::{slerp_audio_target, slerp_distance, SlerpParams};
use crate::store::{parent_frame_id, EmbeddingStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Related,
    Unrelated,
}

/// Distance statistics for one (audio relation, image relation) cell.
///
/// `mean` and `std` are `None` when the cell is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub audio_relation: Relation,
    pub image_relation: Relation,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n: usize,
}

/// A (frame, audio) id pair.
pub type Pair = (String, String);

const CELLS: [(Relation, Relation); 4] = [
    (Relation::Related, Relation::Related),
    (Relation::Related, Relation::Unrelated),
    (Relation::Unrelated, Relation::Related),
    (Relation::Unrelated, Relation::Unrelated),
];

fn cell_index(audio: Relation, image: Relation) -> usize {
    CELLS
        .iter()
        .position(|&c| c == (audio, image))
        .expect("all four cells are listed")
}

fn resolve<'a>(
    store: &'a EmbeddingStore,
    id: &str,
    modality: Modality,
) -> Result<(&'a Embedding, &'a str), EvalError> {
    let e = store
        .get(id)
        .ok_or_else(|| EvalError::UnknownId(id.to_string()))?;
    if e.modality() != modality {
        return Err(EvalError::UnknownId(format!(
            "{id} (not an {modality} asset)"
        )));
    }
    let scene = store
        .scene_of(id)
        .expect("stored ids have manifest records");
    Ok((e, scene))
}

/// For every (reference, target) combination, projects the reference audio
/// toward the target frame and measures how far the target audio lies from
/// that projection. Relations compare scene labels: audio relation is
/// target audio vs reference audio, image relation is target frame vs
/// reference frame.
///
/// Always returns the four cells in the order related/related,
/// related/unrelated, unrelated/related, unrelated/unrelated (audio first).
pub fn pair_stats(
    store: &EmbeddingStore,
    references: &[Pair],
    targets: &[Pair],
    params: &SlerpParams,
) -> Result<Vec<PairStats>, EvalError> {
    let refs = references
        .iter()
        .map(|(f, a)| {
            Ok((
                resolve(store, f, Modality::Image)?,
                resolve(store, a, Modality::Audio)?,
            ))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let tgts = targets
        .iter()
        .map(|(f, a)| {
            Ok((
                resolve(store, f, Modality::Image)?,
                resolve(store, a, Modality::Audio)?,
            ))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;

    let samples: Vec<(usize, f64)> = refs
        .par_iter()
        .map(|&((rf, rf_scene), (ra, ra_scene))| {
            tgts.iter()
                .map(|&((tf, tf_scene), (ta, ta_scene))| {
                    let target = slerp_audio_target(ra, rf, tf, params)?;
                    let d = slerp_distance(ta, &target, params)?;
                    let audio = if ta_scene == ra_scene {
                        Relation::Related
                    } else {
                        Relation::Unrelated
                    };
                    let image = if tf_scene == rf_scene {
                        Relation::Related
                    } else {
                        Relation::Unrelated
                    };
                    Ok((cell_index(audio, image), d))
                })
                .collect::<Result<Vec<_>, EvalError>>()
        })
        .collect::<Result<Vec<_>, EvalError>>()?
        .into_iter()
        .flatten()
        .collect();

    let mut cells: [Vec<f64>; 4] = Default::default();
    for (i, d) in samples {
        cells[i].push(d);
    }
    Ok(CELLS
        .iter()
        .zip(cells)
        .map(|(&(audio_relation, image_relation), values)| {
            let stats = population_stats(&values);
            PairStats {
                audio_relation,
                image_relation,
                mean: stats.map(|s| s.0),
                std: stats.map(|s| s.1),
                n: values.len(),
            }
        })
        .collect())
}

/// One reference pair per scene: the first frame (ingestion order) that has
/// a derived audio, together with its first such audio.
pub fn default_references(store: &EmbeddingStore) -> Vec<Pair> {
    let audios = store.by_modality(Modality::Audio);
    store
        .scenes()
        .filter_map(|scene| {
            let frames = store.by_scene(scene, Modality::Image).ok()?;
            frames.iter().find_map(|f| {
                let mut own: Vec<&str> = audios
                    .iter()
                    .filter(|a| parent_frame_id(a.id()) == Some(f.id()))
                    .map(|a| a.id())
                    .collect();
                own.sort_unstable();
                own.first().map(|a| (f.id().to_string(), a.to_string()))
            })
        })
        .collect()
}

/// Every frame combined with every audio in the store.
pub fn all_frame_audio_pairs(store: &EmbeddingStore) -> Vec<Pair> {
    let audios = store.by_modality(Modality::Audio);
    store
        .by_modality(Modality::Image)
        .iter()
        .flat_map(|f| {
            audios
                .iter()
                .map(move |a| (f.id().to_string(), a.id().to_string()))
        })
        .collect()
}
