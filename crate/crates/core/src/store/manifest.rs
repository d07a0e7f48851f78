use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::StoreError;
use crate::embedding::Modality;

/// One catalogued asset: a frame, a caption or an audio file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetRecord {
    pub id: String,
    pub modality: Modality,
    pub scene: String,
    pub uri: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
}

impl AssetRecord {
    pub fn new(
        id: impl Into<String>,
        modality: Modality,
        scene: impl Into<String>,
        uri: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            modality,
            scene: scene.into(),
            uri: uri.into(),
            caption: None,
        }
    }

    pub fn with_caption(mut self, caption: impl Into<String>) -> Self {
        self.caption = Some(caption.into());
        self
    }
}

/// Ordered, id-indexed list of asset records.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssetManifest {
    records: Vec<AssetRecord>,
    index: HashMap<String, usize>,
}

impl AssetManifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<AssetRecord>) -> Result<Self, StoreError> {
        let mut manifest = Self::new();
        for record in records {
            manifest.push(record)?;
        }
        Ok(manifest)
    }

    pub fn push(&mut self, record: AssetRecord) -> Result<(), StoreError> {
        if record.id.is_empty() {
            return Err(StoreError::InvalidRecord {
                line: self.records.len() + 1,
                message: "empty id".into(),
            });
        }
        if record.scene.is_empty() {
            return Err(StoreError::InvalidRecord {
                line: self.records.len() + 1,
                message: format!("record '{}' has an empty scene", record.id),
            });
        }
        if self.index.contains_key(&record.id) {
            return Err(StoreError::DuplicateId(record.id));
        }
        self.index.insert(record.id.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&AssetRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &[AssetRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Parses one JSON object per line. Blank lines are skipped and unknown
    /// keys ignored. Errors carry the 1-based line number.
    pub fn read<R: BufRead>(reader: R) -> Result<Self, StoreError> {
        let mut manifest = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| StoreError::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: AssetRecord =
                serde_json::from_str(&line).map_err(|e| StoreError::Parse {
                    line: lineno,
                    message: e.to_string(),
                })?;
            match manifest.push(record) {
                Err(StoreError::DuplicateId(id)) => {
                    return Err(StoreError::DuplicateIdAt { id, line: lineno })
                }
                Err(StoreError::InvalidRecord { message, .. }) => {
                    return Err(StoreError::InvalidRecord {
                        line: lineno,
                        message,
                    })
                }
                other => other?,
            }
        }
        Ok(manifest)
    }

    pub fn write<W: Write>(&self, mut writer: W) -> Result<(), StoreError> {
        for record in &self.records {
            serde_json::to_writer(&mut writer, record)
                .map_err(|e| StoreError::Io(e.to_string()))?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Parent frame of a derived asset: the part of `id` before `#`.
pub fn parent_frame_id(id: &str) -> Option<&str> {
    id.split_once('#').map(|(parent, _)| parent)
}

/// Sibling suffix after `#`, identifying a derived caption or audio.
///
/// Captions use `t{i}`. Audios use either `a{i}` (paired with caption
/// `t{i}`) or `t{i}a{j}` (variant `j` generated from caption `t{i}`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiblingKey {
    Caption(u32),
    Audio { caption: u32, variant: Option<u32> },
}

impl SiblingKey {
    pub fn parse(id: &str) -> Option<Self> {
        let (_, suffix) = id.split_once('#')?;
        if let Some(rest) = suffix.strip_prefix('t') {
            match rest.split_once('a') {
                Some((c, v)) => Some(SiblingKey::Audio {
                    caption: c.parse().ok()?,
                    variant: Some(v.parse().ok()?),
                }),
                None => Some(SiblingKey::Caption(rest.parse().ok()?)),
            }
        } else if let Some(rest) = suffix.strip_prefix('a') {
            Some(SiblingKey::Audio {
                caption: rest.parse().ok()?,
                variant: None,
            })
        } else {
            None
        }
    }

    /// Caption index this sibling belongs to.
    pub fn caption_index(self) -> u32 {
        match self {
            SiblingKey::Caption(i) => i,
            SiblingKey::Audio { caption, .. } => caption,
        }
    }
}

pub fn caption_id(frame_id: &str, caption: u32) -> String {
    format!("{frame_id}#t{caption}")
}

pub fn audio_id(frame_id: &str, caption: u32, variant: Option<u32>) -> String {
    match variant {
        Some(v) => format!("{frame_id}#t{caption}a{v}"),
        None => format!("{frame_id}#a{caption}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_lines_and_ignores_unknown_keys() {
        let text = concat!(
            r#"{"id":"f1","modality":"image","scene":"cofre","uri":"f1.png","extra":3}"#,
            "\n\n",
            r#"{"id":"f1#t0","modality":"text","scene":"cofre","uri":"","caption":"a chest"}"#,
            "\n"
        );
        let m = AssetManifest::read(text.as_bytes()).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.get("f1#t0").unwrap().caption.as_deref(), Some("a chest"));
    }

    #[test]
    fn errors_name_the_line() {
        let text =
            "{\"id\":\"a\",\"modality\":\"image\",\"scene\":\"s\",\"uri\":\"u\"}\nnot json\n";
        match AssetManifest::read(text.as_bytes()) {
            Err(StoreError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let dup = "{\"id\":\"a\",\"modality\":\"image\",\"scene\":\"s\",\"uri\":\"u\"}\n{\"id\":\"a\",\"modality\":\"audio\",\"scene\":\"s\",\"uri\":\"u\"}\n";
        assert!(matches!(
            AssetManifest::read(dup.as_bytes()),
            Err(StoreError::DuplicateIdAt { line: 2, .. })
        ));
        let bad_modality = "{\"id\":\"a\",\"modality\":\"video\",\"scene\":\"s\",\"uri\":\"u\"}\n";
        assert!(matches!(
            AssetManifest::read(bad_modality.as_bytes()),
            Err(StoreError::Parse { line: 1, .. })
        ));
        let empty_scene = "{\"id\":\"a\",\"modality\":\"image\",\"scene\":\"\",\"uri\":\"u\"}\n";
        assert!(matches!(
            AssetManifest::read(empty_scene.as_bytes()),
            Err(StoreError::InvalidRecord { line: 1, .. })
        ));
    }

    #[test]
    fn sibling_keys() {
        assert_eq!(SiblingKey::parse("f#t3"), Some(SiblingKey::Caption(3)));
        assert_eq!(
            SiblingKey::parse("f#a3"),
            Some(SiblingKey::Audio {
                caption: 3,
                variant: None
            })
        );
        assert_eq!(
            SiblingKey::parse("f#t2a7"),
            Some(SiblingKey::Audio {
                caption: 2,
                variant: Some(7)
            })
        );
        assert_eq!(SiblingKey::parse("f"), None);
        assert_eq!(SiblingKey::parse("f#x1"), None);
        assert_eq!(parent_frame_id("f#t2a7"), Some("f"));
        assert_eq!(audio_id("f", 2, Some(7)), "f#t2a7");
        assert_eq!(caption_id("f", 2), "f#t2");
    }
}
