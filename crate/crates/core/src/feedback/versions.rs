use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use super::{FeedbackError, FeedbackStore};
use crate::jsonl;
use crate::scenario::{InstructionSource, ScenarioId, StaticInstructions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionVersion {
    pub version_id: String,
    pub parent_version: Option<String>,
    pub scenario: ScenarioId,
    pub instruction_text: String,
    pub changelog: String,
    pub linked_feedback: Vec<String>,
    pub active: bool,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewVersion {
    pub scenario: ScenarioId,
    pub instruction_text: String,
    pub changelog: String,
    #[serde(default)]
    pub linked_feedback: Vec<String>,
    pub parent: Option<String>,
}

/// One line of the version log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event")]
pub enum VersionEvent {
    Published { version: InstructionVersion },
    Activated { scenario: ScenarioId, version_id: String },
}

/// Export form of the whole store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionGraph {
    /// In publication order.
    pub versions: Vec<InstructionVersion>,
    pub active: BTreeMap<ScenarioId, String>,
}

#[derive(Debug, Default)]
struct Inner {
    versions: Vec<InstructionVersion>,
    active: BTreeMap<ScenarioId, String>,
}

impl Inner {
    fn index(&self, id: &str) -> Option<usize> {
        self.versions.iter().position(|v| v.version_id == id)
    }

    /// Folds one log event. Re-publishing an existing id is ignored so a
    /// log replayed over a snapshot that already contains it stays sound.
    fn apply(&mut self, e: &VersionEvent) -> Result<(), FeedbackError> {
        match e {
            VersionEvent::Published { version } => {
                if self.index(&version.version_id).is_none() {
                    let mut v = version.clone();
                    v.active = false;
                    self.versions.push(v);
                }
            }
            VersionEvent::Activated { scenario, version_id } => {
                let i = self.index(version_id).ok_or_else(|| FeedbackError::UnknownVersion(version_id.clone()))?;
                if let Some(prev) = self.active.get(scenario).and_then(|p| self.index(p)) {
                    self.versions[prev].active = false;
                }
                self.versions[i].active = true;
                self.active.insert(*scenario, version_id.clone());
            }
        }
        Ok(())
    }
}

/// Versioned instruction texts with exactly one active version per
/// scenario. Writes are serialized; activation is a compare-and-swap on
/// the active version.
#[derive(Debug)]
pub struct VersionStore {
    log_path: Option<PathBuf>,
    inner: RwLock<Inner>,
}

fn snapshot_path(log: &Path) -> PathBuf {
    log.with_extension("snapshot.json")
}

impl VersionStore {
    /// In-memory store seeded with `seed` as the active first version of
    /// every scenario.
    pub fn in_memory(seed: &StaticInstructions) -> Self {
        let store = Self { log_path: None, inner: RwLock::new(Inner::default()) };
        store.seed(seed).expect("in-memory seeding cannot fail");
        store
    }

    /// Opens the log at `path` (and its snapshot, if any), seeding any
    /// scenario that has no active version yet.
    pub fn open(path: impl Into<PathBuf>, seed: &StaticInstructions) -> Result<Self, FeedbackError> {
        let path = path.into();
        let mut inner = Inner::default();
        let snap = snapshot_path(&path);
        if snap.exists() {
            let bytes = std::fs::read(&snap).map_err(|e| FeedbackError::Storage(jsonl::JsonlError::Io {
                path: snap.display().to_string(),
                source: e,
            }))?;
            let graph: VersionGraph = serde_json::from_slice(&bytes)
                .map_err(|e| FeedbackError::Validation(format!("{}: {e}", snap.display())))?;
            inner.versions = graph.versions;
            inner.active = graph.active;
        }
        for e in jsonl::read_all::<VersionEvent>(&path)? {
            inner.apply(&e)?;
        }
        let store = Self { log_path: Some(path), inner: RwLock::new(inner) };
        store.seed(seed)?;
        Ok(store)
    }

    fn seed(&self, seed: &StaticInstructions) -> Result<(), FeedbackError> {
        let mut inner = self.inner.write();
        let mut events = Vec::new();
        for s in ScenarioId::ALL {
            if inner.active.contains_key(&s) {
                continue;
            }
            let version = InstructionVersion {
                version_id: next_id(&inner, s),
                parent_version: None,
                scenario: s,
                instruction_text: seed.0.get(&s).cloned().unwrap_or_default(),
                changelog: "initial instruction".into(),
                linked_feedback: Vec::new(),
                active: false,
                created_at: Utc::now(),
            };
            let id = version.version_id.clone();
            events.push(VersionEvent::Published { version });
            events.push(VersionEvent::Activated { scenario: s, version_id: id });
            for e in &events[events.len() - 2..] {
                inner.apply(e)?;
            }
        }
        self.persist(&events)
    }

    fn persist(&self, events: &[VersionEvent]) -> Result<(), FeedbackError> {
        if let Some(p) = &self.log_path {
            jsonl::append(p, events)?;
        }
        Ok(())
    }

    /// Publishes an inactive version.
    pub fn publish(&self, new: NewVersion, feedback: &FeedbackStore) -> Result<InstructionVersion, FeedbackError> {
        if new.instruction_text.trim().is_empty() {
            return Err(FeedbackError::Validation("instruction text is empty".into()));
        }
        if let Some(missing) = new.linked_feedback.iter().find(|id| !feedback.contains(id)) {
            return Err(FeedbackError::UnknownFeedback(missing.clone()));
        }
        let mut inner = self.inner.write();
        if let Some(parent) = &new.parent {
            let i = inner.index(parent).ok_or_else(|| FeedbackError::UnknownParent(parent.clone()))?;
            if inner.versions[i].scenario != new.scenario {
                return Err(FeedbackError::Validation(format!(
                    "parent {parent} belongs to {}, not {}",
                    inner.versions[i].scenario, new.scenario
                )));
            }
        }
        let version = InstructionVersion {
            version_id: next_id(&inner, new.scenario),
            parent_version: new.parent,
            scenario: new.scenario,
            instruction_text: new.instruction_text,
            changelog: new.changelog,
            linked_feedback: new.linked_feedback,
            active: false,
            created_at: Utc::now(),
        };
        let event = VersionEvent::Published { version: version.clone() };
        self.persist(std::slice::from_ref(&event))?;
        inner.apply(&event)?;
        Ok(version)
    }

    /// Makes `version_id` the active version of its scenario. With
    /// `expected` set, fails with [`FeedbackError::StaleActive`] unless that
    /// is still the active version.
    pub fn activate(&self, version_id: &str, expected: Option<&str>) -> Result<InstructionVersion, FeedbackError> {
        let mut inner = self.inner.write();
        let i = inner.index(version_id).ok_or_else(|| FeedbackError::UnknownVersion(version_id.into()))?;
        let scenario = inner.versions[i].scenario;
        let actual = inner.active.get(&scenario).cloned().unwrap_or_default();
        if let Some(exp) = expected {
            if exp != actual {
                return Err(FeedbackError::StaleActive { expected: Some(exp.to_string()), actual });
            }
        }
        let event = VersionEvent::Activated { scenario, version_id: version_id.to_string() };
        self.persist(std::slice::from_ref(&event))?;
        inner.apply(&event)?;
        Ok(inner.versions[i].clone())
    }

    pub fn get(&self, version_id: &str) -> Option<InstructionVersion> {
        let inner = self.inner.read();
        inner.index(version_id).map(|i| inner.versions[i].clone())
    }

    pub fn active(&self, scenario: ScenarioId) -> InstructionVersion {
        let inner = self.inner.read();
        let id = &inner.active[&scenario];
        inner.versions[inner.index(id).expect("active version exists")].clone()
    }

    pub fn graph(&self) -> VersionGraph {
        let inner = self.inner.read();
        VersionGraph { versions: inner.versions.clone(), active: inner.active.clone() }
    }

    /// Writes a snapshot of the whole store and empties the log.
    pub fn compact(&self) -> Result<(), FeedbackError> {
        let Some(path) = &self.log_path else { return Ok(()) };
        let inner = self.inner.write();
        let graph = VersionGraph { versions: inner.versions.clone(), active: inner.active.clone() };
        let bytes = serde_json::to_vec_pretty(&graph).expect("graph serializes");
        jsonl::write_atomic(&snapshot_path(path), &bytes)?;
        jsonl::write_atomic(path, b"")?;
        Ok(())
    }
}

fn next_id(inner: &Inner, scenario: ScenarioId) -> String {
    let n = inner.versions.iter().filter(|v| v.scenario == scenario).count() + 1;
    format!("{}-v{n}", scenario.as_str())
}

impl InstructionSource for VersionStore {
    fn active_instruction(&self, scenario: ScenarioId) -> (String, String) {
        let v = self.active(scenario);
        (v.version_id, v.instruction_text)
    }
}
