use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use sonify_core::metrics::DistanceKind;
use sonify_core::retrieval::{AdapterKind, AdapterSpec};
use sonify_core::synth::SyntheticSpaceConfig;

use crate::CliError;

/// Optional TOML run configuration. Command-line flags override it.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub k: Option<usize>,
    pub theta: Option<f64>,
    pub distance: Option<DistanceKind>,
    pub seed: Option<u64>,
    pub bins: Option<usize>,
    pub synth: Option<SyntheticSpaceConfig>,
    /// Scene label to the audio raters and `slerp-eval` use as reference.
    #[serde(default)]
    pub reference_audio: BTreeMap<String, String>,
    /// Named (frame_id, audio_id) lists for rating sessions.
    #[serde(default)]
    pub pair_sets: BTreeMap<String, Vec<(String, String)>>,
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        toml::from_str(&read_text(path)?)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdapterEntry {
    command: String,
    variants: Option<usize>,
    timeout_secs: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdapterFile {
    captioner: AdapterEntry,
    audio_generator: AdapterEntry,
    encoder: AdapterEntry,
}

pub struct Adapters {
    pub captioner: AdapterSpec,
    pub audio_generator: AdapterSpec,
    pub encoder: AdapterSpec,
}

/// Reads `[captioner]`, `[audio_generator]` and `[encoder]` tables.
pub fn load_adapters(path: &Path) -> Result<Adapters, CliError> {
    let file: AdapterFile = toml::from_str(&read_text(path)?)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let spec = |kind, e: AdapterEntry| {
        let spec = AdapterSpec {
            kind,
            command: e.command,
            variants: e.variants.unwrap_or(1),
            timeout_secs: e.timeout_secs.unwrap_or(300.0),
        };
        spec.validate()
            .map_err(|err| CliError::Validation(format!("{}: {err}", path.display())))?;
        Ok::<_, CliError>(spec)
    };
    Ok(Adapters {
        captioner: spec(AdapterKind::Captioner, file.captioner)?,
        audio_generator: spec(AdapterKind::AudioGenerator, file.audio_generator)?,
        encoder: spec(AdapterKind::Encoder, file.encoder)?,
    })
}
