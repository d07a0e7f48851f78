//! Asset manifests, embedding archives and the immutable in-memory store.

mod archive;
mod manifest;

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

pub use archive::{Archive, MAGIC};
pub use manifest::{audio_id, caption_id, parent_frame_id, AssetManifest, AssetRecord, SiblingKey};

use crate::embedding::{normalize, Embedding, EmbeddingError, Modality};

/// Embedding width used when nothing else is specified.
pub const DEFAULT_DIM: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    InvalidRecord { line: usize, message: String },
    #[error("archive{}, byte {offset}: {message}", record_suffix(.record))]
    Archive {
        record: Option<usize>,
        offset: u64,
        message: String,
    },
    #[error("embedding '{id}' has dimension {found}, expected {expected}")]
    DimMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("embedding '{0}' has no manifest record")]
    OrphanEmbedding(String),
    #[error("duplicate id '{0}'")]
    DuplicateId(String),
    #[error("line {line}: duplicate id '{id}'")]
    DuplicateIdAt { id: String, line: usize },
    #[error("embedding '{id}' is tagged {archive} but the manifest says {manifest}")]
    ModalityMismatch {
        id: String,
        manifest: Modality,
        archive: Modality,
    },
    #[error("unknown scene '{0}'")]
    UnknownScene(String),
    #[error("unknown id '{0}'")]
    UnknownId(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<StoreError>,
    },
    #[error("i/o error: {0}")]
    Io(String),
}

fn record_suffix(record: &Option<usize>) -> String {
    record.map(|r| format!(" record {r}")).unwrap_or_default()
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::Io(e.to_string())
    }
}

impl StoreError {
    fn at(self, path: &Path) -> Self {
        StoreError::File {
            path: path.to_path_buf(),
            source: Box::new(self),
        }
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<AssetManifest, StoreError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| StoreError::from(e).at(path))?;
    AssetManifest::read(BufReader::new(file)).map_err(|e| e.at(path))
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &AssetManifest) -> Result<(), StoreError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| StoreError::from(e).at(path))?;
    manifest.write(BufWriter::new(file)).map_err(|e| e.at(path))
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<Archive, StoreError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| StoreError::from(e).at(path))?;
    Archive::read(BufReader::new(file)).map_err(|e| e.at(path))
}

pub fn write_archive(path: impl AsRef<Path>, archive: &Archive) -> Result<(), StoreError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| StoreError::from(e).at(path))?;
    archive.write(BufWriter::new(file)).map_err(|e| e.at(path))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ModalityCounts {
    pub image: usize,
    pub text: usize,
    pub audio: usize,
}

/// Immutable, dimension-consistent embedding collection backed by a manifest.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dim: usize,
    manifest: AssetManifest,
    entries: Vec<Embedding>,
    index: HashMap<String, usize>,
    partitions: [Vec<usize>; 3],
    scenes: BTreeMap<String, Vec<usize>>,
}

impl EmbeddingStore {
    /// Reads and cross-validates a manifest and an archive.
    pub fn ingest(
        manifest_path: impl AsRef<Path>,
        archive_path: impl AsRef<Path>,
        normalize_vectors: bool,
    ) -> Result<Self, StoreError> {
        let manifest = read_manifest(&manifest_path)?;
        let archive = read_archive(&archive_path)?;
        Self::from_parts(manifest, archive, normalize_vectors)
            .map_err(|e| e.at(archive_path.as_ref()))
    }

    pub fn from_parts(
        manifest: AssetManifest,
        archive: Archive,
        normalize_vectors: bool,
    ) -> Result<Self, StoreError> {
        let dim = archive.dim;
        let mut entries = Vec::with_capacity(archive.embeddings.len());
        let mut index = HashMap::with_capacity(archive.embeddings.len());
        let mut partitions: [Vec<usize>; 3] = Default::default();
        let mut scenes: BTreeMap<String, Vec<usize>> = manifest
            .records()
            .iter()
            .map(|r| (r.scene.clone(), Vec::new()))
            .collect();

        for e in archive.embeddings {
            if e.dim() != dim {
                return Err(StoreError::DimMismatch {
                    id: e.id().to_string(),
                    expected: dim,
                    found: e.dim(),
                });
            }
            let record = manifest
                .get(e.id())
                .ok_or_else(|| StoreError::OrphanEmbedding(e.id().to_string()))?;
            if record.modality != e.modality() {
                return Err(StoreError::ModalityMismatch {
                    id: e.id().to_string(),
                    manifest: record.modality,
                    archive: e.modality(),
                });
            }
            if index.contains_key(e.id()) {
                return Err(StoreError::DuplicateId(e.id().to_string()));
            }
            let e = if normalize_vectors { normalize(&e)? } else { e };
            let slot = entries.len();
            index.insert(e.id().to_string(), slot);
            partitions[e.modality().code() as usize].push(slot);
            scenes
                .get_mut(&record.scene)
                .expect("scene registered from manifest")
                .push(slot);
            entries.push(e);
        }

        Ok(Self {
            dim,
            manifest,
            entries,
            index,
            partitions,
            scenes,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn manifest(&self) -> &AssetManifest {
        &self.manifest
    }

    /// All embeddings in ingestion order.
    pub fn embeddings(&self) -> &[Embedding] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&Embedding> {
        self.index.get(id).map(|&i| &self.entries[i])
    }

    pub fn require(&self, id: &str) -> Result<&Embedding, StoreError> {
        self.get(id)
            .ok_or_else(|| StoreError::UnknownId(id.to_string()))
    }

    pub fn record(&self, id: &str) -> Option<&AssetRecord> {
        self.manifest.get(id)
    }

    pub fn scene_of(&self, id: &str) -> Option<&str> {
        self.manifest.get(id).map(|r| r.scene.as_str())
    }

    pub fn scenes(&self) -> impl Iterator<Item = &str> {
        self.scenes.keys().map(String::as_str)
    }

    pub fn by_modality(&self, modality: Modality) -> Vec<&Embedding> {
        self.partitions[modality.code() as usize]
            .iter()
            .map(|&i| &self.entries[i])
            .collect()
    }

    pub fn by_scene(&self, scene: &str, modality: Modality) -> Result<Vec<&Embedding>, StoreError> {
        let slots = self
            .scenes
            .get(scene)
            .ok_or_else(|| StoreError::UnknownScene(scene.to_string()))?;
        Ok(slots
            .iter()
            .map(|&i| &self.entries[i])
            .filter(|e| e.modality() == modality)
            .collect())
    }

    pub fn counts(&self) -> ModalityCounts {
        ModalityCounts {
            image: self.partitions[0].len(),
            text: self.partitions[1].len(),
            audio: self.partitions[2].len(),
        }
    }

    /// Caption/audio pairs derived from `frame_id`, matched by sibling key.
    ///
    /// Ordered by (caption index, variant index).
    pub fn sibling_pairs(&self, frame_id: &str) -> Vec<(&Embedding, &Embedding)> {
        let mut captions: BTreeMap<u32, &Embedding> = BTreeMap::new();
        let mut audios: Vec<(u32, Option<u32>, &Embedding)> = Vec::new();
        for e in &self.entries {
            if parent_frame_id(e.id()) != Some(frame_id) {
                continue;
            }
            match (SiblingKey::parse(e.id()), e.modality()) {
                (Some(SiblingKey::Caption(c)), Modality::Text) => {
                    captions.insert(c, e);
                }
                (Some(SiblingKey::Audio { caption, variant }), Modality::Audio) => {
                    audios.push((caption, variant, e))
                }
                _ => {}
            }
        }
        audios.sort_by_key(|(c, v, _)| (*c, *v));
        audios
            .into_iter()
            .filter_map(|(c, _, a)| captions.get(&c).map(|t| (*t, a)))
            .collect()
    }

    /// Re-serializes the stored vectors as an archive.
    pub fn to_archive(&self) -> Archive {
        Archive {
            dim: self.dim,
            embeddings: self.entries.clone(),
        }
    }
}
