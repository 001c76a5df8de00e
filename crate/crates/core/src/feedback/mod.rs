//! Expert feedback records and the versioned instruction store they drive.
//!
//! Practitioners leave critical or positive feedback on individual turns.
//! A human publisher turns that feedback into a new instruction version
//! for a scenario, links the records that motivated it, replays recorded
//! sessions under old and new versions with [`replay_regression`], and
//! activates the new version explicitly. Nothing is retrained; only
//! instruction text changes.

mod replay;
mod versions;

use std::path::PathBuf;

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, JsonlError};

pub use replay::{replay_regression, PinnedInstructions, RecordedSession, ReplayDiff, TurnDiff};
pub use versions::{InstructionVersion, NewVersion, VersionEvent, VersionGraph, VersionStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    Critical,
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuthorRole {
    Practitioner,
    Reviewer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub record_id: String,
    pub session_id: String,
    pub turn: u32,
    pub polarity: Polarity,
    pub body: String,
    pub author_role: AuthorRole,
    pub created_at: DateTime<Utc>,
}

/// Fields supplied by the caller of [`FeedbackStore::record`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewFeedback {
    pub session_id: String,
    pub turn: u32,
    pub polarity: Polarity,
    pub body: String,
    pub author_role: AuthorRole,
}

#[derive(Debug, Error)]
pub enum FeedbackError {
    #[error("unknown session '{0}'")]
    UnknownSession(String),
    #[error("session '{session}' has no turn {turn}")]
    UnknownTurn { session: String, turn: u32 },
    #[error("unknown parent version '{0}'")]
    UnknownParent(String),
    #[error("unknown feedback record '{0}'")]
    UnknownFeedback(String),
    #[error("unknown instruction version '{0}'")]
    UnknownVersion(String),
    #[error("active version changed: expected {expected:?}, found {actual}")]
    StaleActive { expected: Option<String>, actual: String },
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("no scripted reply for request {0}")]
    MissingScript(String),
    #[error("replay failed: {0}")]
    Replay(String),
    #[error(transparent)]
    Storage(#[from] JsonlError),
}

/// Append-only feedback store, optionally backed by a JSON-lines file.
#[derive(Debug, Default)]
pub struct FeedbackStore {
    path: Option<PathBuf>,
    records: RwLock<Vec<FeedbackRecord>>,
}

impl FeedbackStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: impl Into<PathBuf>) -> Result<Self, FeedbackError> {
        let path = path.into();
        let records = jsonl::read_all(&path)?;
        Ok(Self { path: Some(path), records: RwLock::new(records) })
    }

    /// Stores a new record. `session_turns` is the number of user turns in
    /// the session, or `None` when the session does not exist.
    pub fn record(&self, new: NewFeedback, session_turns: Option<u32>) -> Result<FeedbackRecord, FeedbackError> {
        if new.body.trim().is_empty() {
            return Err(FeedbackError::Validation("feedback body is empty".into()));
        }
        let turns = session_turns.ok_or_else(|| FeedbackError::UnknownSession(new.session_id.clone()))?;
        if new.turn == 0 || new.turn > turns {
            return Err(FeedbackError::UnknownTurn { session: new.session_id, turn: new.turn });
        }
        let mut records = self.records.write();
        let record = FeedbackRecord {
            record_id: format!("fb-{:06}", records.len() + 1),
            session_id: new.session_id,
            turn: new.turn,
            polarity: new.polarity,
            body: new.body,
            author_role: new.author_role,
            created_at: Utc::now(),
        };
        if let Some(p) = &self.path {
            jsonl::append(p, std::slice::from_ref(&record))?;
        }
        records.push(record.clone());
        Ok(record)
    }

    pub fn get(&self, record_id: &str) -> Option<FeedbackRecord> {
        self.records.read().iter().find(|r| r.record_id == record_id).cloned()
    }

    pub fn contains(&self, record_id: &str) -> bool {
        self.records.read().iter().any(|r| r.record_id == record_id)
    }

    pub fn all(&self) -> Vec<FeedbackRecord> {
        self.records.read().clone()
    }

    pub fn len(&self) -> usize {
        self.records.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
