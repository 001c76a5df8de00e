//! Session lifecycle, feedback, instruction versions and evaluation runs
//! behind one synchronous facade. [`http`] exposes it over HTTP.

pub mod http;
mod store;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

pub use store::{fold_events, valid_session_id, SessionEvent, SessionRecord, SessionStore, StoreError};

use crate::config::{AppConfig, ConfigError};
use crate::consult::{
    ConsultDeps, ConsultEngine, ConsultError, CotStage, DialogueState, EventKind, InquiryQuestion, SessionMode,
    TerminationReason, TranscriptTurn, UserInput,
};
use crate::eval::{parse_benchmark, EvalError, EvalItem, EvalReport, EvalRunner};
use crate::feedback::{
    FeedbackError, FeedbackRecord, FeedbackStore, InstructionVersion, NewFeedback, NewVersion, VersionGraph,
    VersionStore,
};
use crate::gateway::Gateway;
use crate::scenario::{ScenarioId, StaticInstructions};
use crate::tools::DEFAULT_MAX_IMAGE_BYTES;

/// Closed set of machine-readable error codes returned by the API.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    InvalidRequest,
    UnknownSession,
    SessionBusy,
    StorageUnavailable,
    GatewayUnavailable,
    CorruptLog,
    ImageTooLarge,
    UnknownTurn,
    UnknownVersion,
    UnknownFeedback,
    StaleActive,
    UnknownRun,
    EvalAborted,
    MissingScript,
    Internal,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 15] = [
        ErrorCode::InvalidRequest,
        ErrorCode::UnknownSession,
        ErrorCode::SessionBusy,
        ErrorCode::StorageUnavailable,
        ErrorCode::GatewayUnavailable,
        ErrorCode::CorruptLog,
        ErrorCode::ImageTooLarge,
        ErrorCode::UnknownTurn,
        ErrorCode::UnknownVersion,
        ErrorCode::UnknownFeedback,
        ErrorCode::StaleActive,
        ErrorCode::UnknownRun,
        ErrorCode::EvalAborted,
        ErrorCode::MissingScript,
        ErrorCode::Internal,
    ];

    pub fn retryable(self) -> bool {
        matches!(
            self,
            ErrorCode::SessionBusy | ErrorCode::StorageUnavailable | ErrorCode::GatewayUnavailable | ErrorCode::EvalAborted
        )
    }

    pub fn http_status(self) -> u16 {
        match self {
            ErrorCode::InvalidRequest => 400,
            ErrorCode::UnknownSession
            | ErrorCode::UnknownTurn
            | ErrorCode::UnknownVersion
            | ErrorCode::UnknownFeedback
            | ErrorCode::UnknownRun => 404,
            ErrorCode::SessionBusy | ErrorCode::StaleActive => 409,
            ErrorCode::ImageTooLarge => 413,
            ErrorCode::GatewayUnavailable | ErrorCode::EvalAborted => 502,
            ErrorCode::StorageUnavailable => 503,
            ErrorCode::CorruptLog | ErrorCode::MissingScript | ErrorCode::Internal => 500,
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("code serializes");
        f.write_str(v.as_str().unwrap_or("internal"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    pub retryable: bool,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into(), retryable: code.retryable() }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::InvalidRequest, message)
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let code = match e {
            StoreError::Unavailable(_) => ErrorCode::StorageUnavailable,
            StoreError::Corrupt { .. } => ErrorCode::CorruptLog,
            StoreError::UnknownSession(_) => ErrorCode::UnknownSession,
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<ConsultError> for ApiError {
    fn from(e: ConsultError) -> Self {
        let code = match e {
            ConsultError::GatewayUnavailable(_) => ErrorCode::GatewayUnavailable,
            ConsultError::MissingScript(_) => ErrorCode::MissingScript,
            ConsultError::EmptyMessage => ErrorCode::InvalidRequest,
            _ => ErrorCode::Internal,
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<FeedbackError> for ApiError {
    fn from(e: FeedbackError) -> Self {
        let code = match e {
            FeedbackError::UnknownSession(_) => ErrorCode::UnknownSession,
            FeedbackError::UnknownTurn { .. } => ErrorCode::UnknownTurn,
            FeedbackError::UnknownParent(_) | FeedbackError::UnknownVersion(_) => ErrorCode::UnknownVersion,
            FeedbackError::UnknownFeedback(_) => ErrorCode::UnknownFeedback,
            FeedbackError::StaleActive { .. } => ErrorCode::StaleActive,
            FeedbackError::Validation(_) => ErrorCode::InvalidRequest,
            FeedbackError::MissingScript(_) => ErrorCode::MissingScript,
            FeedbackError::Replay(_) => ErrorCode::Internal,
            FeedbackError::Storage(_) => ErrorCode::StorageUnavailable,
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<EvalError> for ApiError {
    fn from(e: EvalError) -> Self {
        let code = match e {
            EvalError::Schema { .. } | EvalError::ItemMismatch(_) => ErrorCode::InvalidRequest,
            EvalError::Aborted { .. } => ErrorCode::EvalAborted,
            EvalError::UnknownRun(_) => ErrorCode::UnknownRun,
            EvalError::Io(_) => ErrorCode::StorageUnavailable,
        };
        ApiError::new(code, e.to_string())
    }
}

/// Session summary for the console: badges, coverage meter and transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub created_at: DateTime<Utc>,
    /// `None` while the first turn has not been routed.
    pub scenario: Option<ScenarioId>,
    pub stage: CotStage,
    pub mode: SessionMode,
    pub known_elements: u32,
    pub total_elements: u32,
    pub coverage: f64,
    pub coverage_history: Vec<f64>,
    pub inquiry_rounds: u32,
    pub termination: Option<TerminationReason>,
    pub pending_questions: Vec<InquiryQuestion>,
    pub transcript: Vec<TranscriptTurn>,
    pub feedback_ids: Vec<String>,
}

/// Answer to one posted message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageResponse {
    pub session_id: String,
    pub turn: u32,
    pub reply: String,
    pub scenario: Option<ScenarioId>,
    pub stage: CotStage,
    pub mode: SessionMode,
    pub coverage: f64,
    pub coverage_history: Vec<f64>,
    /// Inquiry questions asked in this reply, for quick-reply chips.
    pub questions: Vec<InquiryQuestion>,
    /// Repairs applied by safety enforcement.
    pub applied_fixes: Vec<String>,
}

fn to_f64(x: crate::consult::Fraction) -> f64 {
    *x.numer() as f64 / *x.denom() as f64
}

fn view(record: &SessionRecord, deps: &ConsultDeps) -> SessionView {
    let s = &record.state;
    SessionView {
        session_id: record.session_id.clone(),
        created_at: record.created_at,
        scenario: s.scenario,
        stage: s.stage,
        mode: s.mode.clone(),
        known_elements: s.ledger.known_count() as u32,
        total_elements: crate::consult::DiagnosticElement::ALL.len() as u32,
        coverage: to_f64(s.coverage()),
        coverage_history: s.coverage_history.iter().map(|c| to_f64(*c)).collect(),
        inquiry_rounds: s.inquiry_rounds,
        termination: s.termination,
        pending_questions: s.pending_questions.iter().filter_map(|q| deps.pool.get(*q).cloned()).collect(),
        transcript: s.transcript.clone(),
        feedback_ids: s.feedback_ids.clone(),
    }
}

/// Evaluation request: inline items or a benchmark file on the server.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EvalRequest {
    pub model_label: String,
    #[serde(default)]
    pub items: Option<Vec<EvalItem>>,
    #[serde(default)]
    pub bench_path: Option<PathBuf>,
    #[serde(default)]
    pub parallel: Option<usize>,
    #[serde(default)]
    pub resume: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRunSummary {
    pub run_id: String,
    pub report: EvalReport,
}

/// Removes the session from the busy set when dropped.
struct Lease<'a> {
    busy: &'a Mutex<HashSet<String>>,
    id: String,
}

impl Drop for Lease<'_> {
    fn drop(&mut self) {
        self.busy.lock().remove(&self.id);
    }
}

pub struct Service {
    store: SessionStore,
    engine: ConsultEngine,
    feedback: FeedbackStore,
    versions: Arc<VersionStore>,
    sessions: RwLock<HashMap<String, Arc<SessionRecord>>>,
    busy: Mutex<HashSet<String>>,
    eval_gateway: Gateway,
    eval_dir: PathBuf,
    eval_categories: Option<Vec<String>>,
    eval_parallel: usize,
    snapshot_every: u32,
    max_image_bytes: usize,
}

impl Service {
    /// Opens (or creates) the stores under `data_dir`. The instruction
    /// source of `deps` is replaced by the persisted version store.
    pub fn open(data_dir: &Path, mut deps: ConsultDeps) -> Result<Self, ApiError> {
        let storage = |e: FeedbackError| ApiError::new(ErrorCode::StorageUnavailable, e.to_string());
        let feedback = FeedbackStore::open(data_dir.join("feedback.jsonl")).map_err(storage)?;
        let versions =
            Arc::new(VersionStore::open(data_dir.join("instructions.jsonl"), &StaticInstructions::defaults()).map_err(storage)?);
        deps.policies = deps.policies.with_source(versions.clone());
        let max_image_bytes = deps.tools.tongue_client().map_or(DEFAULT_MAX_IMAGE_BYTES, |c| c.max_bytes());
        Ok(Self {
            store: SessionStore::new(data_dir),
            eval_gateway: deps.gateway.clone(),
            engine: ConsultEngine::new(deps),
            feedback,
            versions,
            sessions: RwLock::new(HashMap::new()),
            busy: Mutex::new(HashSet::new()),
            eval_dir: data_dir.join("eval"),
            eval_categories: None,
            eval_parallel: 1,
            snapshot_every: 1,
            max_image_bytes,
        })
    }

    pub fn from_config(cfg: &AppConfig) -> Result<Self, ConfigError> {
        let gateway = cfg.gateway()?;
        let deps = cfg.consult_deps(gateway, Arc::new(StaticInstructions::defaults()))?;
        let mut svc = Self::open(&cfg.storage.data_dir, deps).map_err(|e| ConfigError::Invalid(e.message))?;
        svc.eval_categories = cfg.eval.categories.clone();
        svc.eval_parallel = cfg.eval.parallel.unwrap_or(1).max(1);
        svc.snapshot_every = cfg.storage.snapshot_every.max(1);
        Ok(svc)
    }

    pub fn with_snapshot_every(mut self, n: u32) -> Self {
        self.snapshot_every = n.max(1);
        self
    }

    pub fn deps(&self) -> &ConsultDeps {
        self.engine.deps()
    }

    pub fn store(&self) -> &SessionStore {
        &self.store
    }

    fn lease(&self, id: &str) -> Result<Lease<'_>, ApiError> {
        if !self.busy.lock().insert(id.to_string()) {
            return Err(ApiError::new(ErrorCode::SessionBusy, format!("session {id} has a step in flight")));
        }
        Ok(Lease { busy: &self.busy, id: id.to_string() })
    }

    fn record(&self, id: &str) -> Result<Arc<SessionRecord>, ApiError> {
        if let Some(r) = self.sessions.read().get(id) {
            return Ok(r.clone());
        }
        if !valid_session_id(id) {
            return Err(ApiError::new(ErrorCode::UnknownSession, format!("unknown session {id}")));
        }
        let rec = Arc::new(self.store.load(id)?);
        self.sessions.write().insert(id.to_string(), rec.clone());
        Ok(rec)
    }

    /// Appends events after `record.offset` and returns the updated record.
    fn commit(&self, record: &SessionRecord, state: DialogueState, events: Vec<EventKind>) -> Result<Arc<SessionRecord>, ApiError> {
        let now = Utc::now();
        let logged: Vec<SessionEvent> = events
            .into_iter()
            .enumerate()
            .map(|(i, event)| SessionEvent { seq: record.offset + 1 + i as u64, at: now, event })
            .collect();
        self.store.append(&record.session_id, &logged)?;
        let next = Arc::new(SessionRecord {
            session_id: record.session_id.clone(),
            created_at: record.created_at,
            state,
            offset: record.offset + logged.len() as u64,
        });
        if next.state.user_turns.is_multiple_of(self.snapshot_every) {
            // The log is authoritative; a failed snapshot only costs replay time.
            if let Err(e) = self.store.write_snapshot(&next) {
                tracing::warn!(session = %next.session_id, error = %e, "snapshot write failed");
            }
        }
        self.sessions.write().insert(next.session_id.clone(), next.clone());
        Ok(next)
    }

    pub fn create_session(&self, scenario_hint: Option<ScenarioId>) -> Result<SessionView, ApiError> {
        let id = uuid::Uuid::new_v4().to_string();
        let event = EventKind::SessionCreated { session_id: id.clone(), scenario_hint };
        let mut state = DialogueState::new(String::new(), None);
        state.apply(&event).map_err(|m| ApiError::new(ErrorCode::Internal, m))?;
        let record = SessionRecord { session_id: id.clone(), created_at: Utc::now(), state, offset: 1 };
        self.store.create(&id, &[SessionEvent { seq: 1, at: record.created_at, event }])?;
        if let Err(e) = self.store.write_snapshot(&record) {
            tracing::warn!(session = %id, error = %e, "snapshot write failed");
        }
        let record = Arc::new(record);
        self.sessions.write().insert(id, record.clone());
        Ok(view(&record, self.deps()))
    }

    /// Runs one consultation step. At most one step per session runs at a
    /// time; a concurrent call fails with `session_busy`.
    pub fn post_message(&self, session_id: &str, text: &str, image: Option<Vec<u8>>) -> Result<MessageResponse, ApiError> {
        if let Some(img) = &image {
            if img.len() > self.max_image_bytes {
                return Err(ApiError::new(
                    ErrorCode::ImageTooLarge,
                    format!("image is {} bytes; the limit is {}", img.len(), self.max_image_bytes),
                ));
            }
        }
        let record = self.record(session_id)?;
        let _lease = self.lease(session_id)?;
        // Latest committed record, read under the lease.
        let record = self.sessions.read().get(session_id).cloned().unwrap_or(record);
        if let Some(img) = &image {
            self.store.put_attachment(&crate::gateway::hex(&sha2_digest(img)), img)?;
        }
        let input = UserInput { text: text.to_string(), image };
        let outcome = self.engine.step(&record.state, &input)?;
        let next = self.commit(&record, outcome.state, outcome.events)?;
        let s = &next.state;
        Ok(MessageResponse {
            session_id: next.session_id.clone(),
            turn: s.user_turns,
            reply: outcome.reply.text,
            scenario: s.scenario,
            stage: s.stage,
            mode: s.mode.clone(),
            coverage: to_f64(s.coverage()),
            coverage_history: s.coverage_history.iter().map(|c| to_f64(*c)).collect(),
            questions: outcome.questions,
            applied_fixes: outcome.reply.applied_fixes.iter().map(|f| format!("{f:?}")).collect(),
        })
    }

    pub fn get_session(&self, session_id: &str) -> Result<SessionView, ApiError> {
        Ok(view(&*self.record(session_id)?, self.deps()))
    }

    pub fn events(&self, session_id: &str) -> Result<Vec<SessionEvent>, ApiError> {
        if !valid_session_id(session_id) {
            return Err(ApiError::new(ErrorCode::UnknownSession, format!("unknown session {session_id}")));
        }
        Ok(self.store.read_events(session_id)?)
    }

    /// Rebuilds the state from the event log alone.
    pub fn replay(&self, session_id: &str) -> Result<DialogueState, ApiError> {
        Ok(fold_events(session_id, &self.events(session_id)?)?)
    }

    /// Stored snapshot, without folding later events in.
    pub fn snapshot(&self, session_id: &str) -> Result<Option<SessionRecord>, ApiError> {
        Ok(self.store.read_snapshot(session_id)?)
    }

    pub fn session_ids(&self) -> Result<Vec<String>, ApiError> {
        Ok(self.store.list()?)
    }

    pub fn attachment(&self, sha256: &str) -> Option<Vec<u8>> {
        self.store.attachment(sha256)
    }

    /// Stores feedback on an assistant turn and links it into the session log.
    pub fn record_feedback(&self, new: NewFeedback) -> Result<FeedbackRecord, ApiError> {
        let record = match self.record(&new.session_id) {
            Ok(r) => Some(r),
            Err(e) if e.code == ErrorCode::UnknownSession => None,
            Err(e) => return Err(e),
        };
        let _lease = match &record {
            Some(_) => Some(self.lease(&new.session_id)?),
            None => None,
        };
        let record = record.and_then(|_| self.sessions.read().get(&new.session_id).cloned());
        let fb = self.feedback.record(new, record.as_ref().map(|r| r.state.user_turns))?;
        let record = record.expect("feedback store rejects unknown sessions");
        let event = EventKind::FeedbackLinked { feedback_id: fb.record_id.clone(), turn: fb.turn };
        let mut state = record.state.clone();
        state.apply(&event).map_err(|m| ApiError::new(ErrorCode::Internal, m))?;
        self.commit(&record, state, vec![event])?;
        Ok(fb)
    }

    pub fn feedback(&self) -> Vec<FeedbackRecord> {
        self.feedback.all()
    }

    pub fn versions(&self) -> VersionGraph {
        self.versions.graph()
    }

    pub fn publish_version(&self, new: NewVersion) -> Result<InstructionVersion, ApiError> {
        Ok(self.versions.publish(new, &self.feedback)?)
    }

    pub fn activate_version(&self, version_id: &str, expected_active: Option<&str>) -> Result<InstructionVersion, ApiError> {
        Ok(self.versions.activate(version_id, expected_active)?)
    }

    pub fn version_store(&self) -> &VersionStore {
        &self.versions
    }

    /// Runs a benchmark to completion and scores it.
    pub fn run_eval(&self, req: EvalRequest) -> Result<EvalRunSummary, ApiError> {
        if req.model_label.trim().is_empty() {
            return Err(ApiError::invalid("model_label is required"));
        }
        let cats = self.eval_categories.as_deref();
        let items = match (&req.items, &req.bench_path) {
            (Some(items), None) => {
                let mut text = String::new();
                for i in items {
                    text.push_str(&serde_json::to_string(i).expect("item serializes"));
                    text.push('\n');
                }
                parse_benchmark(&text, "request", cats)?
            }
            (None, Some(path)) => crate::eval::load_benchmark(path, cats)?,
            _ => return Err(ApiError::invalid("give exactly one of items or bench_path")),
        };
        let runner = EvalRunner::new(self.eval_gateway.clone()).with_parallel(req.parallel.unwrap_or(self.eval_parallel));
        let run = runner.run(&items, &req.model_label, &self.eval_dir, req.resume.as_deref())?;
        let report = crate::eval::score(&run, &items)?;
        Ok(EvalRunSummary { run_id: run.run_id, report })
    }

    pub fn eval_report(&self, run_id: &str) -> Result<EvalReport, ApiError> {
        if !valid_session_id(run_id) {
            return Err(ApiError::new(ErrorCode::UnknownRun, format!("unknown run {run_id}")));
        }
        Ok(EvalRunner::score_dir(&self.eval_dir.join(run_id))?)
    }
}

fn sha2_digest(bytes: &[u8]) -> Vec<u8> {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).to_vec()
}
