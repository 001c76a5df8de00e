//! On-disk session persistence: one append-only event log per session, an
//! optional snapshot next to it, and attachments addressed by SHA-256.
//!
//! ```text
//! <root>/sessions/<id>/events.jsonl
//! <root>/sessions/<id>/snapshot.json
//! <root>/attachments/<sha256>
//! ```

use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consult::{DialogueState, EventKind};
use crate::jsonl::{self, JsonlError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub event: EventKind,
}

/// Materialized session: the fold of events `1..=offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub created_at: DateTime<Utc>,
    pub state: DialogueState,
    /// Sequence number of the last event folded into `state`.
    pub offset: u64,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage unavailable: {0}")]
    Unavailable(String),
    #[error("corrupt event log for {session}: {message}")]
    Corrupt { session: String, message: String },
    #[error("unknown session {0}")]
    UnknownSession(String),
}

impl From<JsonlError> for StoreError {
    fn from(e: JsonlError) -> Self {
        match e {
            JsonlError::Io { .. } => StoreError::Unavailable(e.to_string()),
            JsonlError::Parse { ref path, .. } => StoreError::Corrupt { session: path.clone(), message: e.to_string() },
        }
    }
}

fn unavailable(e: io::Error) -> StoreError {
    StoreError::Unavailable(e.to_string())
}

/// Session ids become directory names, so only a safe alphabet is allowed.
pub fn valid_session_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

/// Folds a log into a state, checking sequence numbers are contiguous from
/// 1 and that the log opens with the creation event.
pub fn fold_events(session_id: &str, events: &[SessionEvent]) -> Result<DialogueState, StoreError> {
    let corrupt = |message: String| StoreError::Corrupt { session: session_id.to_string(), message };
    match events.first() {
        None => return Err(corrupt("event log is empty".into())),
        Some(e) if !matches!(e.event, EventKind::SessionCreated { .. }) => {
            return Err(corrupt(format!("log starts with {} instead of SessionCreated", e.event.name())))
        }
        _ => {}
    }
    let mut state = DialogueState::new(String::new(), None);
    for (i, e) in events.iter().enumerate() {
        let expected = i as u64 + 1;
        if e.seq != expected {
            return Err(corrupt(format!("expected seq {expected}, found {}", e.seq)));
        }
        state.apply(&e.event).map_err(|m| corrupt(format!("seq {}: {m}", e.seq)))?;
    }
    Ok(state)
}

#[derive(Debug, Clone)]
pub struct SessionStore {
    root: PathBuf,
}

impl SessionStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(id)
    }

    pub fn events_path(&self, id: &str) -> PathBuf {
        self.dir(id).join("events.jsonl")
    }

    fn snapshot_path(&self, id: &str) -> PathBuf {
        self.dir(id).join("snapshot.json")
    }

    pub fn exists(&self, id: &str) -> bool {
        valid_session_id(id) && self.events_path(id).is_file()
    }

    /// Creates the session directory and writes its first events. Fails if
    /// the session already exists.
    pub fn create(&self, id: &str, events: &[SessionEvent]) -> Result<(), StoreError> {
        let dir = self.dir(id);
        std::fs::create_dir_all(dir.parent().expect("session dir has parent")).map_err(unavailable)?;
        std::fs::create_dir(&dir).map_err(unavailable)?;
        self.append(id, events)
    }

    /// Appends all of `events` in a single write.
    pub fn append(&self, id: &str, events: &[SessionEvent]) -> Result<(), StoreError> {
        jsonl::append(&self.events_path(id), events)?;
        Ok(())
    }

    pub fn read_events(&self, id: &str) -> Result<Vec<SessionEvent>, StoreError> {
        if !self.exists(id) {
            return Err(StoreError::UnknownSession(id.to_string()));
        }
        jsonl::read_all(&self.events_path(id)).map_err(|e| match e {
            JsonlError::Parse { .. } => StoreError::Corrupt { session: id.to_string(), message: e.to_string() },
            other => other.into(),
        })
    }

    pub fn write_snapshot(&self, record: &SessionRecord) -> Result<(), StoreError> {
        let bytes = serde_json::to_vec_pretty(record).expect("record serializes");
        jsonl::write_atomic(&self.snapshot_path(&record.session_id), &bytes)?;
        Ok(())
    }

    pub fn read_snapshot(&self, id: &str) -> Result<Option<SessionRecord>, StoreError> {
        match std::fs::read(self.snapshot_path(id)) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| StoreError::Corrupt { session: id.to_string(), message: format!("snapshot: {e}") }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(unavailable(e)),
        }
    }

    /// Current record: the snapshot, brought up to date with any events
    /// logged after it.
    pub fn load(&self, id: &str) -> Result<SessionRecord, StoreError> {
        let events = self.read_events(id)?;
        let created_at = events.first().map(|e| e.at).unwrap_or_else(Utc::now);
        let record = match self.read_snapshot(id)? {
            Some(mut rec) if rec.offset as usize <= events.len() => {
                for e in &events[rec.offset as usize..] {
                    rec.state
                        .apply(&e.event)
                        .map_err(|m| StoreError::Corrupt { session: id.to_string(), message: m })?;
                    rec.offset = e.seq;
                }
                rec
            }
            _ => SessionRecord {
                session_id: id.to_string(),
                created_at,
                state: fold_events(id, &events)?,
                offset: events.len() as u64,
            },
        };
        Ok(record)
    }

    pub fn list(&self) -> Result<Vec<String>, StoreError> {
        let dir = self.root.join("sessions");
        let entries = match std::fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(unavailable(e)),
        };
        let mut ids: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|id| self.exists(id))
            .collect();
        ids.sort();
        Ok(ids)
    }

    pub fn put_attachment(&self, sha256: &str, bytes: &[u8]) -> Result<(), StoreError> {
        let path = self.root.join("attachments").join(sha256);
        if !path.exists() {
            jsonl::write_atomic(&path, bytes)?;
        }
        Ok(())
    }

    pub fn attachment(&self, sha256: &str) -> Option<Vec<u8>> {
        if !sha256.bytes().all(|b| b.is_ascii_hexdigit()) {
            return None;
        }
        std::fs::read(self.root.join("attachments").join(sha256)).ok()
    }
}
