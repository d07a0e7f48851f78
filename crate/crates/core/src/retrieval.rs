//! Frame sonorization.
//!
//! Scheme 1 assigns the closest library audio to a frame. Scheme 2 captions
//! the frame, generates audio variants from every caption and keeps the
//! candidates whose embeddings agree best with the frame. The captioner,
//! generator and encoder are external processes described by
//! [`AdapterSpec`]; the [`Captioner`], [`AudioGenerator`] and [`Encoder`]
//! traits let tests substitute in-process mocks.

use std::fs::{self, File};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::embedding::{dis_cos, Embedding, EmbeddingError, Modality};
use crate::metrics::{
    rank_by_inconsistency, rank_candidates, slerp_audio_target, slerp_distance,
    InconsistencyReport, MetricsError, RankedResult, SlerpParams,
};
use crate::store::{
    audio_id, caption_id, Archive, AssetManifest, AssetRecord, EmbeddingStore, StoreError,
};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("store has no audio embeddings")]
    NoAudioAssets,
    #[error("{stage} adapter failed: {message}")]
    AdapterFailure { stage: AdapterKind, message: String },
    #[error("{stage} adapter produced malformed output: {message}")]
    AdapterProtocolError { stage: AdapterKind, message: String },
    #[error("invalid adapter spec: {0}")]
    InvalidAdapter(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<EmbeddingError> for RetrievalError {
    fn from(e: EmbeddingError) -> Self {
        RetrievalError::Metrics(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Retrieval,
    Generative,
}

/// Provenance of one generated candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationLineage {
    pub caption_id: String,
    pub caption: String,
    pub audio_id: String,
    pub audio_uri: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SonorizationPlan {
    pub frame_id: String,
    pub scheme: Scheme,
    pub chosen_audio_id: String,
    pub candidates: RankedResult,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lineage: Vec<GenerationLineage>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inconsistency: Vec<InconsistencyReport>,
}

impl SonorizationPlan {
    fn new(frame_id: &str, scheme: Scheme, candidates: RankedResult) -> Self {
        let chosen_audio_id = candidates
            .best()
            .map(|e| e.candidate_id.clone())
            .expect("rankings are never empty");
        Self {
            frame_id: frame_id.to_string(),
            scheme,
            chosen_audio_id,
            candidates,
            lineage: Vec::new(),
            inconsistency: Vec::new(),
        }
    }
}

/// Ranks every stored audio by `dis_cos` to `frame` and keeps the top `k`.
pub fn sonorize_scheme1(
    frame: &Embedding,
    store: &EmbeddingStore,
    k: usize,
) -> Result<SonorizationPlan, RetrievalError> {
    if frame.modality() != Modality::Image {
        return Err(EmbeddingError::WrongModality {
            id: frame.id().to_string(),
            expected: Modality::Image,
            found: frame.modality(),
        }
        .into());
    }
    let audios = store.by_modality(Modality::Audio);
    if audios.is_empty() {
        return Err(RetrievalError::NoAudioAssets);
    }
    let ranked = rank_candidates(frame.id(), "dis_cos", &audios, k, |a| {
        Ok(dis_cos(frame, a)?)
    })?;
    Ok(SonorizationPlan::new(frame.id(), Scheme::Retrieval, ranked))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    Captioner,
    AudioGenerator,
    Encoder,
}

impl std::fmt::Display for AdapterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AdapterKind::Captioner => "captioner",
            AdapterKind::AudioGenerator => "audio_generator",
            AdapterKind::Encoder => "encoder",
        })
    }
}

fn default_variants() -> usize {
    1
}

fn default_timeout() -> f64 {
    300.0
}

/// External process invocation.
///
/// `command` is split on whitespace; the tokens `{input}`, `{output}` and
/// `{variants}` are substituted before the process is spawned (no shell is
/// involved). Exit status 0 means success.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterSpec {
    pub kind: AdapterKind,
    pub command: String,
    #[serde(default = "default_variants")]
    pub variants: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

impl AdapterSpec {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.variants < 1 {
            return Err(RetrievalError::InvalidAdapter(format!(
                "{} variants must be at least 1",
                self.kind
            )));
        }
        for placeholder in ["{input}", "{output}"] {
            if !self.command.contains(placeholder) {
                return Err(RetrievalError::InvalidAdapter(format!(
                    "{} command lacks the {placeholder} placeholder",
                    self.kind
                )));
            }
        }
        if self.command.split_whitespace().next().is_none() {
            return Err(RetrievalError::InvalidAdapter(format!(
                "{} command is empty",
                self.kind
            )));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(RetrievalError::InvalidAdapter(format!(
                "{} timeout must be positive",
                self.kind
            )));
        }
        Ok(())
    }
}

/// Produces captions for a frame.
pub trait Captioner: Sync {
    fn caption(&self, frame: &AssetRecord, workdir: &Path) -> Result<Vec<String>, RetrievalError>;
}

/// Produces audio files from one caption; returns their uris.
pub trait AudioGenerator: Sync {
    fn generate(
        &self,
        caption: &str,
        caption_index: usize,
        workdir: &Path,
    ) -> Result<Vec<String>, RetrievalError>;
}

/// Embeds every asset listed in a manifest.
pub trait Encoder: Sync {
    fn encode(&self, assets: &AssetManifest, workdir: &Path) -> Result<Archive, RetrievalError>;
}

/// [`AdapterSpec`]-driven process adapter.
#[derive(Debug, Clone)]
pub struct ProcessAdapter {
    spec: AdapterSpec,
}

const STDERR_TAIL: usize = 2000;

impl ProcessAdapter {
    pub fn new(spec: AdapterSpec) -> Result<Self, RetrievalError> {
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &AdapterSpec {
        &self.spec
    }

    fn expect_kind(&self, kind: AdapterKind) -> Result<(), RetrievalError> {
        if self.spec.kind != kind {
            return Err(RetrievalError::InvalidAdapter(format!(
                "a {} adapter was configured where a {kind} is required",
                self.spec.kind
            )));
        }
        Ok(())
    }

    fn failure(&self, message: String) -> RetrievalError {
        RetrievalError::AdapterFailure {
            stage: self.spec.kind,
            message,
        }
    }

    fn protocol(&self, message: String) -> RetrievalError {
        RetrievalError::AdapterProtocolError {
            stage: self.spec.kind,
            message,
        }
    }

    /// Runs the command once; `tag` keeps log files of concurrent calls apart.
    pub fn invoke(
        &self,
        input: &Path,
        output: &Path,
        workdir: &Path,
        tag: &str,
    ) -> Result<(), RetrievalError> {
        let variants = self.spec.variants.to_string();
        let args: Vec<String> = self
            .spec
            .command
            .split_whitespace()
            .map(|tok| {
                tok.replace("{input}", &input.to_string_lossy())
                    .replace("{output}", &output.to_string_lossy())
                    .replace("{variants}", &variants)
            })
            .collect();
        let stderr_path = workdir.join(format!("{}-{tag}.stderr", self.spec.kind));
        let stderr = File::create(&stderr_path)?;
        let mut child = Command::new(&args[0])
            .args(&args[1..])
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(stderr)
            .spawn()
            .map_err(|e| self.failure(format!("cannot spawn '{}': {e}", args[0])))?;
        let timeout = Duration::from_secs_f64(self.spec.timeout_secs);
        let status = match child.wait_timeout(timeout)? {
            Some(status) => status,
            None => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(
                    self.failure(format!("timed out after {:.1} s", self.spec.timeout_secs))
                );
            }
        };
        if !status.success() {
            let mut text = String::new();
            File::open(&stderr_path)?.read_to_string(&mut text)?;
            let start = text.len().saturating_sub(STDERR_TAIL);
            let start = (start..text.len())
                .find(|&i| text.is_char_boundary(i))
                .unwrap_or(text.len());
            return Err(self.failure(format!("exited with {status}: {}", text[start..].trim())));
        }
        Ok(())
    }
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

impl Captioner for ProcessAdapter {
    fn caption(&self, frame: &AssetRecord, workdir: &Path) -> Result<Vec<String>, RetrievalError> {
        self.expect_kind(AdapterKind::Captioner)?;
        let stem = file_stem(&frame.id);
        let output = workdir.join(format!("captions-{stem}.txt"));
        self.invoke(Path::new(&frame.uri), &output, workdir, &stem)?;
        let text = fs::read_to_string(&output)
            .map_err(|e| self.protocol(format!("cannot read {}: {e}", output.display())))?;
        let captions: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        if captions.len() != self.spec.variants {
            return Err(self.protocol(format!(
                "expected {} captions, got {}",
                self.spec.variants,
                captions.len()
            )));
        }
        Ok(captions)
    }
}

impl AudioGenerator for ProcessAdapter {
    fn generate(
        &self,
        caption: &str,
        caption_index: usize,
        workdir: &Path,
    ) -> Result<Vec<String>, RetrievalError> {
        self.expect_kind(AdapterKind::AudioGenerator)?;
        let input = workdir.join(format!("caption-{caption_index}.txt"));
        fs::write(&input, format!("{caption}\n"))?;
        let out_dir = workdir.join(format!("audio-{caption_index}"));
        fs::create_dir_all(&out_dir)?;
        self.invoke(&input, &out_dir, workdir, &caption_index.to_string())?;
        let mut files: Vec<PathBuf> = fs::read_dir(&out_dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        files.retain(|p| p.is_file());
        files.sort();
        if files.len() != self.spec.variants {
            return Err(self.protocol(format!(
                "expected {} audio files in {}, got {}",
                self.spec.variants,
                out_dir.display(),
                files.len()
            )));
        }
        Ok(files
            .into_iter()
            .map(|p| p.to_string_lossy().into_owned())
            .collect())
    }
}

impl Encoder for ProcessAdapter {
    fn encode(&self, assets: &AssetManifest, workdir: &Path) -> Result<Archive, RetrievalError> {
        self.expect_kind(AdapterKind::Encoder)?;
        let input = workdir.join("encode-request.jsonl");
        assets.write(std::io::BufWriter::new(File::create(&input)?))?;
        let output = workdir.join("encode-response.emb");
        self.invoke(&input, &output, workdir, "encode")?;
        let bytes = fs::read(&output)
            .map_err(|e| self.protocol(format!("cannot read {}: {e}", output.display())))?;
        Archive::read(bytes.as_slice()).map_err(|e| self.protocol(e.to_string()))
    }
}

/// How Scheme 2 ranks its generated candidates.
#[derive(Debug, Clone, Default)]
pub enum Scheme2Ranking {
    /// `|inc|` over each (caption, generated audio) pair.
    #[default]
    Inconsistency,
    /// Distance to the audio target projected from a reference pair.
    Slerp {
        reference_frame: Embedding,
        reference_audio: Embedding,
        params: SlerpParams,
    },
}

#[derive(Debug, Clone)]
pub struct Scheme2Options {
    pub workdir: PathBuf,
    pub k: usize,
    /// Upper bound on concurrent generator invocations.
    pub concurrency: usize,
    pub ranking: Scheme2Ranking,
}

impl Scheme2Options {
    pub fn new(workdir: impl Into<PathBuf>) -> Self {
        Self {
            workdir: workdir.into(),
            k: 10,
            concurrency: 1,
            ranking: Scheme2Ranking::Inconsistency,
        }
    }
}

type GenerationResult = Result<Vec<String>, RetrievalError>;

fn generate_all(
    generator: &dyn AudioGenerator,
    captions: &[String],
    workdir: &Path,
    concurrency: usize,
) -> Result<Vec<Vec<String>>, RetrievalError> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<GenerationResult>>> =
        Mutex::new((0..captions.len()).map(|_| None).collect());
    let workers = concurrency.clamp(1, captions.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= captions.len() {
                    break;
                }
                let result = generator.generate(&captions[i], i, workdir);
                slots.lock().expect("worker panicked")[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every caption index is processed"))
        .collect()
}

/// Caption → generate → encode → rank.
pub fn sonorize_scheme2(
    frame_asset: &AssetRecord,
    captioner: &dyn Captioner,
    generator: &dyn AudioGenerator,
    encoder: &dyn Encoder,
    options: &Scheme2Options,
) -> Result<SonorizationPlan, RetrievalError> {
    if frame_asset.modality != Modality::Image {
        return Err(EmbeddingError::WrongModality {
            id: frame_asset.id.clone(),
            expected: Modality::Image,
            found: frame_asset.modality,
        }
        .into());
    }
    if options.k == 0 {
        return Err(MetricsError::InvalidK.into());
    }
    fs::create_dir_all(&options.workdir)?;
    let workdir = options.workdir.as_path();

    let captions = captioner.caption(frame_asset, workdir)?;
    if captions.is_empty() {
        return Err(RetrievalError::AdapterProtocolError {
            stage: AdapterKind::Captioner,
            message: "no captions produced".into(),
        });
    }
    let audio_files = generate_all(generator, &captions, workdir, options.concurrency)?;

    let frame_id = frame_asset.id.as_str();
    let scene = frame_asset.scene.as_str();
    let mut manifest = AssetManifest::new();
    manifest.push(frame_asset.clone())?;
    let mut lineage = Vec::new();
    for (i, (caption, files)) in captions.iter().zip(&audio_files).enumerate() {
        let cid = caption_id(frame_id, i as u32);
        manifest.push(AssetRecord::new(&cid, Modality::Text, scene, "").with_caption(caption))?;
        for (j, uri) in files.iter().enumerate() {
            let aid = audio_id(frame_id, i as u32, Some(j as u32));
            manifest.push(AssetRecord::new(&aid, Modality::Audio, scene, uri))?;
            lineage.push(GenerationLineage {
                caption_id: cid.clone(),
                caption: caption.clone(),
                audio_id: aid,
                audio_uri: uri.clone(),
            });
        }
    }

    let archive = encoder.encode(&manifest, workdir)?;
    let protocol = |message: String| RetrievalError::AdapterProtocolError {
        stage: AdapterKind::Encoder,
        message,
    };
    if archive.embeddings.len() != manifest.len() {
        return Err(protocol(format!(
            "expected {} embeddings, got {}",
            manifest.len(),
            archive.embeddings.len()
        )));
    }
    let store =
        EmbeddingStore::from_parts(manifest, archive, true).map_err(|e| protocol(e.to_string()))?;
    let frame = store
        .get(frame_id)
        .ok_or_else(|| protocol(format!("frame '{frame_id}' was not encoded")))?;

    let mut plan = match &options.ranking {
        Scheme2Ranking::Inconsistency => {
            let pairs = store.sibling_pairs(frame_id);
            let (ranked, reports) = rank_by_inconsistency(frame, &pairs, options.k)?;
            let mut plan = SonorizationPlan::new(frame_id, Scheme::Generative, ranked);
            plan.inconsistency = reports;
            plan
        }
        Scheme2Ranking::Slerp {
            reference_frame,
            reference_audio,
            params,
        } => {
            let target = slerp_audio_target(reference_audio, reference_frame, frame, params)?;
            let audios = store.by_modality(Modality::Audio);
            let ranked = rank_candidates(frame_id, "slerp_distance", &audios, options.k, |a| {
                slerp_distance(a, &target, params)
            })?;
            SonorizationPlan::new(frame_id, Scheme::Generative, ranked)
        }
    };
    plan.lineage = lineage;
    Ok(plan)
}
