use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::fanout::{Fanout, MessageClass};
use super::protocol::{InteractionResult, RankedSandbox, ServerMessage};
use super::provenance::{EntryKind, Provenance, ProvenanceEntry};
use super::{SessionConfig, SessionError};
use crate::corpus::{ingest_corpus, Corpus};
use crate::delta::{diff, DeltaTree};
use crate::engine::{
    BudgetLevel, Dimensions, Engine, EngineError, LeafMove, SandboxStatus, SandboxSummary, SpeculationRequest,
    StrategyWeights, Trigger, TriggerMode, USER_MOVE,
};
use crate::ihtm::{ModelState, NodeId};
use crate::interact::{classify_event, propose_speculations, InteractionEvent, InteractionType, Level, PatternState};
use crate::quality::{evaluate, should_trigger, QualityHistory, QualityVector, RankedCandidate};

/// What one `step` call did.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub inserted: usize,
    /// Stopped early because a batch awaits resolution.
    pub paused: bool,
    pub batches: Vec<String>,
    pub entries: Vec<ProvenanceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptReport {
    pub sandbox_id: String,
    pub digest: String,
    /// The sandbox had already been accepted; nothing changed.
    pub repeated: bool,
    pub rejected: Vec<String>,
    pub cancelled: Vec<String>,
}

/// Full view of a session for clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub session_id: String,
    pub digest: String,
    pub insert_cursor: usize,
    pub buffer_size: usize,
    pub corpus_size: usize,
    /// Canonical tree serialization.
    pub tree: Value,
    pub quality: QualityVector,
    pub paused: bool,
    pub weights: StrategyWeights,
    pub sandboxes: Vec<SandboxSummary>,
    pub provenance_len: usize,
}

pub struct Session {
    pub(super) session_id: String,
    pub(super) config: SessionConfig,
    pub(super) corpus: Arc<Corpus>,
    pub(super) main: ModelState,
    pub(super) quality: QualityVector,
    pub(super) history: QualityHistory,
    pub(super) engine: Engine,
    pub(super) pattern: PatternState,
    pub(super) provenance: Provenance,
    pub(super) last_trigger_cursor: Option<usize>,
    /// Batches whose results are not yet in the log.
    unlogged: BTreeSet<String>,
    pub(super) fanout: Fanout,
    pub(super) out_seq: u64,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("session_id", &self.session_id)
            .field("digest", &self.main.digest())
            .field("cursor", &self.main.insert_cursor())
            .finish_non_exhaustive()
    }
}

impl Session {
    /// Ingest the corpus at `path` and start a session on it.
    pub fn create(path: &Path, config: SessionConfig) -> Result<Self, SessionError> {
        let corpus = ingest_corpus(path, &config.tokenizer)?;
        let source = std::fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf());
        Self::from_corpus(corpus, &source.to_string_lossy(), config)
    }

    /// Start a session on an ingested corpus; `source` is recorded in the
    /// log so replay can find the corpus again.
    pub fn from_corpus(corpus: Corpus, source: &str, mut config: SessionConfig) -> Result<Self, SessionError> {
        config.speculation.k = Some(corpus.len());
        config.speculation.validate().map_err(SessionError::Config)?;
        let fingerprint = corpus.fingerprint();
        let engine = Engine::new(
            config.speculation.clone(),
            config.strategies.clone(),
            Arc::clone(&corpus.stats),
            config.seed,
        )?;
        let main = ModelState::new(&corpus);
        let quality = evaluate(&main, &corpus.stats);
        let mut history = QualityHistory::new(config.speculation.window.max(1) + 1);
        history.push(0, quality.clone()).expect("empty history accepts any cursor");
        let session_id = {
            let mut h = Sha256::new();
            h.update(fingerprint.as_bytes());
            h.update(config.seed.to_le_bytes());
            format!("s-{}", &hex::encode(h.finalize())[..12])
        };
        let mut session = Self {
            session_id,
            pattern: PatternState::new(config.interaction.capacity, config.interaction.threshold),
            config,
            corpus: Arc::new(corpus),
            main,
            quality,
            history,
            engine,
            provenance: Provenance::new(),
            last_trigger_cursor: None,
            unlogged: BTreeSet::new(),
            fanout: Fanout::new(),
            out_seq: 0,
        };
        let spec = &session.config.speculation;
        let config_payload = json!({
            "config": session.config,
            "k": spec.k,
            "n": spec.n,
            "b": spec.b,
            "seed": session.config.seed,
        });
        session.log(EntryKind::Config, config_payload)?;
        let ingest = json!({
            "source": source,
            "documents": session.corpus.len(),
            "fingerprint": fingerprint,
            "skipped": session.corpus.warnings,
        });
        session.log(EntryKind::Ingest, ingest)?;
        Ok(session)
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn set_session_id(&mut self, id: impl Into<String>) {
        self.session_id = id.into();
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn corpus(&self) -> &Arc<Corpus> {
        &self.corpus
    }

    pub fn main(&self) -> &ModelState {
        &self.main
    }

    pub fn quality(&self) -> &QualityVector {
        &self.quality
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn engine_mut(&mut self) -> &mut Engine {
        &mut self.engine
    }

    pub fn pattern(&self) -> &PatternState {
        &self.pattern
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn fanout(&self) -> &Fanout {
        &self.fanout
    }

    /// Mirror the provenance log to a JSONL file from now on (and write
    /// what is already there).
    pub fn log_to(&mut self, path: &Path) -> Result<(), SessionError> {
        self.provenance.attach_file(path)
    }

    pub(super) fn log(&mut self, kind: EntryKind, payload: Value) -> Result<(), SessionError> {
        self.provenance.append(kind, payload, self.main.digest())?;
        Ok(())
    }

    pub fn set_pause_on_speculation(&mut self, pause: bool) {
        self.config.speculation.pause_on_speculation = pause;
    }

    /// Whether insertion is held back for an open batch.
    pub fn is_paused(&self) -> bool {
        self.config.speculation.pause_on_speculation && self.has_open_batch()
    }

    /// Some batch is still computing or has a ready sandbox.
    pub fn has_open_batch(&self) -> bool {
        self.engine.batches().any(|b| {
            b.sandbox_ids.iter().any(|id| {
                matches!(
                    self.engine.sandbox(id).map(|s| s.status),
                    Some(SandboxStatus::Pending | SandboxStatus::Running | SandboxStatus::Ready)
                )
            })
        })
    }

    pub(super) fn replace_main(&mut self, state: ModelState) {
        self.main = state;
        self.quality = evaluate(&self.main, &self.corpus.stats);
        self.history = QualityHistory::new(self.history_capacity());
        self.history
            .push(self.main.insert_cursor(), self.quality.clone())
            .expect("fresh history accepts any cursor");
    }

    fn history_capacity(&self) -> usize {
        self.config.speculation.window.max(1) + 1
    }

    /// Insert the next buffered document and update quality. Returns the
    /// inserted document id.
    pub(super) fn insert_one(&mut self) -> Result<Option<String>, SessionError> {
        let params = self.config.speculation.model_params();
        let Some(doc_id) = self.main.insert_next(&params)? else {
            return Ok(None);
        };
        self.quality = evaluate(&self.main, &self.corpus.stats);
        if self.history.push(self.main.insert_cursor(), self.quality.clone()).is_err() {
            self.history = QualityHistory::new(self.history_capacity());
            self.history
                .push(self.main.insert_cursor(), self.quality.clone())
                .expect("fresh history accepts any cursor");
        }
        Ok(Some(doc_id))
    }

    /// Insert up to `count` buffered documents, speculating as configured.
    /// Returns early when a batch opens, so the caller can wait for it before
    /// further inserts make it stale.
    pub fn step(&mut self, count: usize) -> Result<StepReport, SessionError> {
        let start = self.provenance.len();
        let mut report = StepReport::default();
        self.sync()?;
        let mode = self.config.speculation.trigger;
        let b = self.config.speculation.b;
        while report.inserted < count {
            if self.is_paused() {
                report.paused = true;
                break;
            }
            if self.main.buffer().is_empty() {
                break;
            }
            let cursor = self.main.insert_cursor();
            if mode == TriggerMode::EveryBuffer && cursor.is_multiple_of(b) && self.last_trigger_cursor != Some(cursor) {
                self.last_trigger_cursor = Some(cursor);
                let request = SpeculationRequest {
                    trigger: Trigger::Buffer,
                    budget: self.config.speculation.trigger_budget,
                    dimensions: self.engine.automatic_dimensions(cursor),
                    reason: Some(format!("scheduled at cursor {cursor}")),
                };
                report.batches.push(self.open_batch(request, None)?);
                report.paused = self.is_paused();
                break;
            }
            let Some(doc_id) = self.insert_one()? else { break };
            report.inserted += 1;
            let cursor = self.main.insert_cursor();
            self.log(
                EntryKind::Insert,
                json!({ "doc_id": doc_id, "cursor": cursor, "score": self.quality.score() }),
            )?;
            self.engine.invalidate(self.main.digest());
            if mode == TriggerMode::Metric && self.last_trigger_cursor != Some(cursor) {
                let decision = should_trigger(
                    &self.history,
                    self.config.speculation.tau_trigger,
                    self.config.speculation.window,
                );
                if decision.fire {
                    self.last_trigger_cursor = Some(cursor);
                    self.history.rebase();
                    let request = SpeculationRequest {
                        trigger: Trigger::MetricDecline,
                        budget: self.config.speculation.trigger_budget,
                        dimensions: self.engine.automatic_dimensions(cursor),
                        reason: decision.reason.clone(),
                    };
                    report.batches.push(self.open_batch(request, Some(decision.drop))?);
                    report.paused = self.is_paused();
                    break;
                }
            }
        }
        self.sync()?;
        report.entries = self.provenance.since(start).to_vec();
        self.publish_snapshot_if_watched();
        Ok(report)
    }

    /// Open a batch on the main state and log it. A batch identical to a
    /// live one is not logged again.
    pub(super) fn open_batch(&mut self, request: SpeculationRequest, drop: Option<f64>) -> Result<String, SessionError> {
        let trigger = request.trigger;
        let budget = request.budget;
        let reason = request.reason.clone();
        let known: BTreeSet<String> = self.engine.batches().map(|b| b.batch_id.clone()).collect();
        let batch_id = self.engine.speculate(&self.main, request)?;
        if known.contains(&batch_id) {
            return Ok(batch_id);
        }
        let mut payload = json!({
            "batch_id": batch_id,
            "trigger": trigger,
            "budget": budget,
            "cursor": self.main.insert_cursor(),
            "reason": reason,
        });
        if let Some(d) = drop {
            payload["drop"] = json!(d);
        }
        self.log(EntryKind::Trigger, payload)?;
        let created: Vec<Value> = self
            .engine
            .batch_sandboxes(&batch_id)
            .into_iter()
            .map(|s| {
                json!({
                    "sandbox_id": s.sandbox_id,
                    "batch_id": s.batch_id,
                    "dimensions": s.dimensions,
                })
            })
            .collect();
        for p in created {
            self.log(EntryKind::SandboxCreated, p)?;
        }
        self.unlogged.insert(batch_id.clone());
        Ok(batch_id)
    }

    /// Collect finished sandboxes: log results of settled batches and push
    /// them to subscribers.
    pub fn sync(&mut self) -> Result<Vec<String>, SessionError> {
        let settled = self.engine.poll();
        self.record_settled(settled)
    }

    /// Block until `batch_id` settles (or `timeout` passes), then log.
    pub fn wait_batch(&mut self, batch_id: &str, timeout: Option<Duration>) -> Result<Vec<String>, SessionError> {
        let settled = self.engine.wait_batch(batch_id, timeout)?;
        self.record_settled(settled)
    }

    fn record_settled(&mut self, settled: Vec<String>) -> Result<Vec<String>, SessionError> {
        for batch_id in &settled {
            if !self.unlogged.remove(batch_id) {
                continue;
            }
            let ranked = self.engine.rank_batch(batch_id)?;
            let rank_of = |id: &str| ranked.iter().find(|r| r.sandbox_id == id).map(|r| r.rank);
            let mut entries = Vec::new();
            for sb in self.engine.batch_sandboxes(batch_id) {
                match sb.status {
                    SandboxStatus::Ready => entries.push((
                        EntryKind::SandboxReady,
                        json!({
                            "sandbox_id": sb.sandbox_id,
                            "batch_id": sb.batch_id,
                            "result_digest": sb.result_digest,
                            "quality": sb.quality,
                            "applied": sb.applied,
                            "rank": rank_of(&sb.sandbox_id),
                        }),
                    )),
                    SandboxStatus::TimedOut => entries.push((
                        EntryKind::SandboxTimedOut,
                        json!({
                            "sandbox_id": sb.sandbox_id,
                            "batch_id": sb.batch_id,
                            "reason": sb.reason,
                        }),
                    )),
                    _ => {}
                }
            }
            for (kind, payload) in entries {
                self.log(kind, payload)?;
            }
            if self.fanout.has_subscribers() {
                let push = self.sandbox_ready_message(batch_id, &ranked)?;
                self.publish(push, MessageClass::Event);
            }
        }
        Ok(settled)
    }

    /// Ranked summaries of a batch with deltas for the top candidates.
    pub fn sandbox_ready_message(
        &self,
        batch_id: &str,
        ranked: &[RankedCandidate],
    ) -> Result<ServerMessage, SessionError> {
        let mut out = Vec::with_capacity(ranked.len());
        for (i, r) in ranked.iter().enumerate() {
            let summary = self
                .engine
                .sandbox(&r.sandbox_id)
                .map(|s| s.summary())
                .ok_or_else(|| EngineError::UnknownSandbox(r.sandbox_id.clone()))?;
            let delta = if i < self.config.speculation.present_top {
                Some(self.delta(&r.sandbox_id)?)
            } else {
                None
            };
            out.push(RankedSandbox {
                ranking: r.clone(),
                summary,
                delta,
            });
        }
        Ok(ServerMessage::SandboxReady {
            batch_id: batch_id.to_string(),
            ranked: out,
        })
    }

    pub fn rank_batch(&self, batch_id: &str) -> Result<Vec<RankedCandidate>, SessionError> {
        Ok(self.engine.rank_batch(batch_id)?)
    }

    /// Merged tree between the sandbox's origin (the main state) and its
    /// result.
    pub fn delta(&self, sandbox_id: &str) -> Result<DeltaTree, SessionError> {
        let sb = self
            .engine
            .sandbox(sandbox_id)
            .ok_or_else(|| EngineError::UnknownSandbox(sandbox_id.to_string()))?;
        let result = sb.result.as_ref().ok_or_else(|| SessionError::NoResult(sandbox_id.to_string()))?;
        if sb.origin_digest != self.main.digest() {
            return Err(EngineError::StaleSandbox(sandbox_id.to_string()).into());
        }
        Ok(diff(&self.main, result, self.config.speculation.tau_match))
    }

    /// Replace the main state with a ready sandbox's result.
    pub fn accept(&mut self, sandbox_id: &str) -> Result<AcceptReport, SessionError> {
        self.sync()?;
        let Some(acc) = self.engine.accept(sandbox_id, &self.main)? else {
            return Ok(AcceptReport {
                sandbox_id: sandbox_id.to_string(),
                digest: self.main.digest().to_string(),
                repeated: true,
                rejected: Vec::new(),
                cancelled: Vec::new(),
            });
        };
        let sb = self.engine.sandbox(sandbox_id).expect("accepted sandbox exists");
        let payload = json!({
            "sandbox_id": sandbox_id,
            "batch_id": sb.batch_id,
            "origin_digest": sb.origin_digest,
            "result_digest": acc.state.digest(),
            "schema": acc.schema,
            "dimensions": sb.dimensions,
            "rejected": acc.rejected,
            "cancelled": acc.cancelled,
            "weights": self.engine.weights(),
        });
        self.replace_main((*acc.state).clone());
        self.log(EntryKind::Accept, payload)?;
        self.publish_snapshot_if_watched();
        Ok(AcceptReport {
            sandbox_id: sandbox_id.to_string(),
            digest: self.main.digest().to_string(),
            repeated: false,
            rejected: acc.rejected,
            cancelled: acc.cancelled,
        })
    }

    /// Reject a ready sandbox. Returns `false` if it was already rejected.
    pub fn reject(&mut self, sandbox_id: &str) -> Result<bool, SessionError> {
        self.sync()?;
        if !self.engine.reject(sandbox_id)? {
            return Ok(false);
        }
        let sb = self.engine.sandbox(sandbox_id).expect("rejected sandbox exists");
        let payload = json!({
            "sandbox_id": sandbox_id,
            "batch_id": sb.batch_id,
            "schema": sb.dimensions.schema(),
            "weights": self.engine.weights(),
        });
        self.log(EntryKind::Reject, payload)?;
        Ok(true)
    }

    /// Open a batch on request. Without dimensions, uses the automatic set.
    pub fn speculate(&mut self, dimensions: Vec<Dimensions>, budget: Option<BudgetLevel>) -> Result<String, SessionError> {
        let dimensions = if dimensions.is_empty() {
            self.engine.automatic_dimensions(self.main.insert_cursor())
        } else {
            dimensions
        };
        let request = SpeculationRequest {
            trigger: Trigger::Manual,
            budget: budget.unwrap_or(BudgetLevel::Metric),
            dimensions,
            reason: Some("requested".to_string()),
        };
        self.open_batch(request, None)
    }

    /// Classify an interaction, carry out a completed move, and open the
    /// speculation it calls for.
    pub fn interaction(&mut self, mut event: InteractionEvent) -> Result<InteractionResult, SessionError> {
        self.sync()?;
        if event.kind == InteractionType::DragDrop && event.payload.source_topic.is_none() {
            if let Some(doc) = &event.payload.doc_id {
                event.payload.source_topic = self.main.parent_of_doc(doc).map(|p| p.to_string());
            }
        }
        let level = classify_event(&event, &self.pattern)?;
        let mv = if event.kind == InteractionType::DragDrop {
            Some(self.validate_move(&event)?)
        } else {
            if let (Some(Level::L1), Some(doc)) = (level, &event.payload.doc_id) {
                if !self.main.contains_document(doc) {
                    return Err(crate::interact::InteractError::UnknownDocument(doc.clone()).into());
                }
            }
            None
        };
        self.log(EntryKind::Interaction, json!({ "event": event, "level": level }))?;
        let mut moved = None;
        if let Some(mv) = mv {
            if self.main.parent_of_doc(&mv.doc_id).map(|p| p.as_str()) != Some(mv.target.as_str()) {
                moved = Some(self.apply_user_move(mv)?);
            }
        }
        self.pattern.observe(&event, &self.main);
        let mut result = InteractionResult {
            event_id: event.event_id.clone(),
            level,
            drop_targets: Vec::new(),
            batch_id: None,
            moved_by: moved,
            digest: String::new(),
        };
        if let Some(level) = level {
            let proposal = propose_speculations(level, &event, &self.main)?;
            result.drop_targets = proposal.drop_targets;
            if let Some(request) = proposal.request {
                result.batch_id = Some(self.open_batch(request, None)?);
            }
        }
        result.digest = self.main.digest().to_string();
        Ok(result)
    }

    fn validate_move(&self, event: &InteractionEvent) -> Result<LeafMove, SessionError> {
        use crate::interact::InteractError;
        let doc = event.payload.doc_id.clone().unwrap_or_default();
        let target = event.payload.target_topic.clone().unwrap_or_default();
        if !self.main.contains_document(&doc) {
            return Err(InteractError::UnknownDocument(doc).into());
        }
        if !self.main.node(&target).is_some_and(|n| !n.is_leaf()) {
            return Err(InteractError::UnknownTopic(target).into());
        }
        Ok(LeafMove { doc_id: doc, target })
    }

    /// A user's move runs as a single-move sandbox that is accepted at once,
    /// so the log records it like any other accepted change.
    fn apply_user_move(&mut self, mv: LeafMove) -> Result<String, SessionError> {
        let request = SpeculationRequest {
            trigger: Trigger::Manual,
            budget: BudgetLevel::L2,
            dimensions: vec![Dimensions::moves(USER_MOVE, vec![mv])],
            reason: Some("user move".to_string()),
        };
        let batch = self.open_batch(request, None)?;
        self.wait_batch(&batch, None)?;
        let sandbox_id = self.engine.batch(&batch).expect("just opened").sandbox_ids[0].clone();
        self.accept(&sandbox_id)?;
        Ok(sandbox_id)
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            session_id: self.session_id.clone(),
            digest: self.main.digest().to_string(),
            insert_cursor: self.main.insert_cursor(),
            buffer_size: self.main.buffer().len(),
            corpus_size: self.corpus.len(),
            tree: serde_json::from_str(&self.main.canonical_json()).expect("canonical JSON parses"),
            quality: self.quality.clone(),
            paused: self.is_paused(),
            weights: self.engine.weights().clone(),
            sandboxes: self.engine.sandboxes().map(|s| s.summary()).collect(),
            provenance_len: self.provenance.len(),
        }
    }

    pub(super) fn next_out_seq(&mut self) -> u64 {
        let s = self.out_seq;
        self.out_seq += 1;
        s
    }

    pub(super) fn publish(&mut self, msg: ServerMessage, class: MessageClass) {
        let seq = self.next_out_seq();
        self.fanout.publish(seq, &msg, class);
    }

    fn publish_snapshot_if_watched(&mut self) {
        if self.fanout.has_subscribers() {
            let snap = ServerMessage::Snapshot {
                request_seq: None,
                snapshot: Box::new(self.snapshot()),
            };
            self.publish(snap, MessageClass::Snapshot);
        }
    }

    /// Move a leaf via the engine; convenience for scripts and tests.
    pub fn move_document(&mut self, doc_id: &str, target: &NodeId) -> Result<String, SessionError> {
        self.apply_user_move(LeafMove {
            doc_id: doc_id.to_string(),
            target: target.to_string(),
        })
    }
}
