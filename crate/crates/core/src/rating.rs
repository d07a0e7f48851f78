//! Listening-test sessions backed by an append-only ratings file and a
//! session journal.
//!
//! Every acknowledged rating is appended to the ratings CSV and synced to
//! disk before the session cursor advances. Session creation and cursor
//! moves go to a JSON-lines journal that is replayed on startup.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::Modality;
use crate::eval::{header_row, rating_row, read_ratings, EvalError, Pair, RatingRecord};
use crate::store::AssetManifest;

#[derive(Debug, Error)]
pub enum RatingError {
    #[error("pair list is empty")]
    EmptyPairList,
    #[error("unknown asset '{0}'")]
    UnknownAsset(String),
    #[error("unknown pair set '{0}'")]
    UnknownPairSet(String),
    #[error("unknown session '{0}'")]
    UnknownSession(String),
    #[error("({frame_id}, {audio_id}) is not the current item{}", expected_suffix(.expected))]
    OutOfOrder {
        frame_id: String,
        audio_id: String,
        expected: Option<(String, String)>,
    },
    #[error("mos {0} outside 1..=5")]
    InvalidMos(i64),
    #[error("journal line {line}: {message}")]
    Journal { line: usize, message: String },
    #[error("ratings file: {0}")]
    Ratings(#[from] EvalError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn expected_suffix(expected: &Option<(String, String)>) -> String {
    match expected {
        Some((f, a)) => format!(", expected ({f}, {a})"),
        None => ", session is complete".to_string(),
    }
}

impl RatingError {
    /// Machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            RatingError::EmptyPairList => "empty_pair_list",
            RatingError::UnknownAsset(_) => "unknown_asset",
            RatingError::UnknownPairSet(_) => "unknown_pair_set",
            RatingError::UnknownSession(_) => "unknown_session",
            RatingError::OutOfOrder { .. } => "out_of_order",
            RatingError::InvalidMos(_) => "invalid_mos",
            RatingError::Journal { .. } => "journal_error",
            RatingError::Ratings(_) => "ratings_error",
            RatingError::Io(_) => "io_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionItem {
    pub frame_id: String,
    pub audio_id: String,
    pub frame_uri: String,
    pub audio_uri: String,
    pub reference_audio_uri: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub rater_id: String,
    pub items: Vec<SessionItem>,
    pub cursor: usize,
    pub created: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextItem {
    Item {
        index: usize,
        total: usize,
        item: SessionItem,
    },
    Done {
        total: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub session_id: String,
    pub cursor: usize,
    pub total: usize,
    pub done: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RatingFilter {
    pub rater_id: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum JournalEvent {
    Create { session: Session },
    Advance { session_id: String, cursor: usize },
}

#[derive(Debug, Clone, Default)]
pub struct RatingConfig {
    pub ratings_path: PathBuf,
    pub journal_path: PathBuf,
    /// Scene label to the audio id raters compare against.
    pub reference_audio: BTreeMap<String, String>,
    /// Named pair lists that clients may request instead of sending pairs.
    pub pair_sets: BTreeMap<String, Vec<Pair>>,
}

pub struct RatingService {
    manifest: AssetManifest,
    config: RatingConfig,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    ratings: Mutex<File>,
    journal: Mutex<File>,
}

fn open_append(path: &Path) -> std::io::Result<File> {
    OpenOptions::new().create(true).append(true).open(path)
}

impl RatingService {
    /// Opens (or creates) the ratings file and replays the journal.
    pub fn open(manifest: AssetManifest, config: RatingConfig) -> Result<Self, RatingError> {
        for id in config.reference_audio.values() {
            if manifest.get(id).map(|r| r.modality) != Some(Modality::Audio) {
                return Err(RatingError::UnknownAsset(id.clone()));
            }
        }

        let fresh = std::fs::metadata(&config.ratings_path)
            .map(|m| m.len() == 0)
            .unwrap_or(true);
        let mut ratings = open_append(&config.ratings_path)?;
        if fresh {
            ratings.write_all(&header_row())?;
            ratings.sync_data()?;
        } else {
            read_ratings(File::open(&config.ratings_path)?)?;
        }

        let sessions = Self::replay(&config.journal_path)?;
        let journal = open_append(&config.journal_path)?;
        Ok(Self {
            manifest,
            config,
            sessions: Mutex::new(sessions),
            ratings: Mutex::new(ratings),
            journal: Mutex::new(journal),
        })
    }

    fn replay(path: &Path) -> Result<HashMap<String, Arc<Mutex<Session>>>, RatingError> {
        let mut sessions = HashMap::new();
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(sessions),
            Err(e) => return Err(e.into()),
        };
        let lines: Vec<String> = BufReader::new(file).lines().collect::<Result<_, _>>()?;
        let last = lines.len();
        for (i, line) in lines.into_iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let event: JournalEvent = match serde_json::from_str(&line) {
                Ok(ev) => ev,
                // A torn final line from a crash mid-append is dropped.
                Err(_) if i + 1 == last => break,
                Err(e) => {
                    return Err(RatingError::Journal {
                        line: i + 1,
                        message: e.to_string(),
                    })
                }
            };
            match event {
                JournalEvent::Create { session } => {
                    sessions.insert(session.session_id.clone(), Arc::new(Mutex::new(session)));
                }
                JournalEvent::Advance { session_id, cursor } => {
                    let s = sessions
                        .get(&session_id)
                        .ok_or_else(|| RatingError::Journal {
                            line: i + 1,
                            message: format!("advance for unknown session '{session_id}'"),
                        })?;
                    let mut s = s.lock().expect("session lock poisoned");
                    s.cursor = s.cursor.max(cursor.min(s.items.len()));
                }
            }
        }
        Ok(sessions)
    }

    fn append_journal(&self, event: &JournalEvent) -> Result<(), RatingError> {
        let mut line = serde_json::to_vec(event).expect("journal events serialize");
        line.push(b'\n');
        let mut journal = self.journal.lock().expect("journal lock poisoned");
        journal.write_all(&line)?;
        journal.sync_data()?;
        Ok(())
    }

    pub fn manifest(&self) -> &AssetManifest {
        &self.manifest
    }

    pub fn pair_set(&self, name: &str) -> Result<&[Pair], RatingError> {
        self.config
            .pair_sets
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| RatingError::UnknownPairSet(name.to_string()))
    }

    fn item(&self, frame_id: &str, audio_id: &str) -> Result<SessionItem, RatingError> {
        let frame = self
            .manifest
            .get(frame_id)
            .filter(|r| r.modality == Modality::Image)
            .ok_or_else(|| RatingError::UnknownAsset(frame_id.to_string()))?;
        let audio = self
            .manifest
            .get(audio_id)
            .filter(|r| r.modality == Modality::Audio)
            .ok_or_else(|| RatingError::UnknownAsset(audio_id.to_string()))?;
        let reference_audio_uri = self
            .config
            .reference_audio
            .get(&frame.scene)
            .and_then(|id| self.manifest.get(id))
            .map(|r| r.uri.clone());
        Ok(SessionItem {
            frame_id: frame.id.clone(),
            audio_id: audio.id.clone(),
            frame_uri: frame.uri.clone(),
            audio_uri: audio.uri.clone(),
            reference_audio_uri,
        })
    }

    /// Creates a session whose item order is a seeded shuffle of `pairs`.
    pub fn create_session(
        &self,
        rater_id: &str,
        pairs: &[Pair],
        seed: u64,
    ) -> Result<Session, RatingError> {
        if pairs.is_empty() {
            return Err(RatingError::EmptyPairList);
        }
        let mut items = pairs
            .iter()
            .map(|(f, a)| self.item(f, a))
            .collect::<Result<Vec<_>, _>>()?;
        items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let session = Session {
            session_id: uuid::Uuid::new_v4().simple().to_string(),
            rater_id: rater_id.to_string(),
            items,
            cursor: 0,
            created: Utc::now(),
        };
        self.append_journal(&JournalEvent::Create {
            session: session.clone(),
        })?;
        self.sessions.lock().expect("session map poisoned").insert(
            session.session_id.clone(),
            Arc::new(Mutex::new(session.clone())),
        );
        Ok(session)
    }

    fn session(&self, session_id: &str) -> Result<Arc<Mutex<Session>>, RatingError> {
        self.sessions
            .lock()
            .expect("session map poisoned")
            .get(session_id)
            .cloned()
            .ok_or_else(|| RatingError::UnknownSession(session_id.to_string()))
    }

    pub fn get_session(&self, session_id: &str) -> Result<Session, RatingError> {
        Ok(self
            .session(session_id)?
            .lock()
            .expect("session lock poisoned")
            .clone())
    }

    pub fn next_item(&self, session_id: &str) -> Result<NextItem, RatingError> {
        let s = self.session(session_id)?;
        let s = s.lock().expect("session lock poisoned");
        let total = s.items.len();
        Ok(match s.items.get(s.cursor) {
            Some(item) => NextItem::Item {
                index: s.cursor,
                total,
                item: item.clone(),
            },
            None => NextItem::Done { total },
        })
    }

    /// Records a rating for the current item, then advances the cursor.
    pub fn submit_rating(
        &self,
        session_id: &str,
        frame_id: &str,
        audio_id: &str,
        mos: i64,
    ) -> Result<Ack, RatingError> {
        let s = self.session(session_id)?;
        let mut s = s.lock().expect("session lock poisoned");
        if !(1..=5).contains(&mos) {
            return Err(RatingError::InvalidMos(mos));
        }
        let current = s.items.get(s.cursor);
        let matches = current.is_some_and(|c| c.frame_id == frame_id && c.audio_id == audio_id);
        if !matches {
            return Err(RatingError::OutOfOrder {
                frame_id: frame_id.to_string(),
                audio_id: audio_id.to_string(),
                expected: current.map(|c| (c.frame_id.clone(), c.audio_id.clone())),
            });
        }
        let record = RatingRecord::new(&s.rater_id, frame_id, audio_id, mos as u8, Utc::now())?;
        let row = rating_row(&record)?;
        {
            let mut ratings = self.ratings.lock().expect("ratings lock poisoned");
            ratings.write_all(&row)?;
            ratings.sync_data()?;
        }
        let cursor = s.cursor + 1;
        self.append_journal(&JournalEvent::Advance {
            session_id: session_id.to_string(),
            cursor,
        })?;
        s.cursor = cursor;
        Ok(Ack {
            session_id: session_id.to_string(),
            cursor,
            total: s.items.len(),
            done: cursor == s.items.len(),
        })
    }

    /// Persisted ratings matching `filter`, in append order.
    pub fn export_ratings(&self, filter: &RatingFilter) -> Result<Vec<RatingRecord>, RatingError> {
        // Holding the writer lock keeps a half-written row out of the read.
        let _guard = self.ratings.lock().expect("ratings lock poisoned");
        let all = read_ratings(File::open(&self.config.ratings_path)?)?;
        Ok(all
            .into_iter()
            .filter(|r| filter.rater_id.as_ref().is_none_or(|id| &r.rater_id == id))
            .collect())
    }
}
