//! Speculative execution: sandboxes, the worker pool that runs them under
//! runtime budgets, ranking, accept/reject and acceptance learning.
//!
//! The [`Engine`] is owned by one session loop. Workers receive an `Arc` of
//! the origin state, clone it, and send their results back over a channel;
//! they never touch engine bookkeeping.

mod accounting;
mod config;
mod pool;
mod run;
mod sandbox;
mod weights;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cancel::{CancelToken, Interrupted};
use crate::corpus::CorpusStats;
use crate::ihtm::ModelState;
use crate::quality::{
    consensus_rank, evaluate, normalize_candidates, Candidate, QualityVector, RankedCandidate, RankingError,
};
use crate::strategies::{Strategy, StrategyError, StrategyRegistry};

pub use accounting::{search_space_accounting, SearchSpace};
pub use config::{BudgetLevel, Budgets, SpeculationConfig, TriggerMode};
pub use run::{execute, forecast, registry_with_faults, Delayed, Forecast, RunError, SandboxRun};
pub use sandbox::{
    Dimensions, LeafMove, Sandbox, SandboxStatus, SandboxSummary, Trigger, AUTO_COMPLETE, NEXT_MOVE, USER_MOVE,
};
pub use weights::{update_strategy_weight, update_strategy_weights, StrategyWeights, NEUTRAL_WEIGHT};

use pool::{Job, Pool, WorkerMsg};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("unknown sandbox {0}")]
    UnknownSandbox(String),
    #[error("unknown batch {0}")]
    UnknownBatch(String),
    #[error("stale sandbox {0}: its origin is no longer the main state")]
    StaleSandbox(String),
    #[error("sandbox {id} is {status}, not ready")]
    NotReady { id: String, status: &'static str },
    #[error("sandbox {id} was already {status}")]
    AlreadyResolved { id: String, status: &'static str },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("speculation request has no dimensions")]
    EmptyRequest,
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Ranking(#[from] RankingError),
}

/// A set of sandboxes opened together from one origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeculationRequest {
    pub trigger: Trigger,
    pub budget: BudgetLevel,
    pub dimensions: Vec<Dimensions>,
    /// Free-form cause, e.g. the declining metric.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Batch {
    pub batch_id: String,
    pub trigger: Trigger,
    pub budget: BudgetLevel,
    pub origin_digest: String,
    pub origin_cursor: usize,
    pub origin_quality: QualityVector,
    pub sandbox_ids: Vec<String>,
    pub reason: Option<String>,
}

/// Result of accepting a sandbox.
#[derive(Debug, Clone)]
pub struct Accepted {
    pub sandbox_id: String,
    pub state: Arc<ModelState>,
    pub schema: String,
    pub model_overrides: BTreeMap<String, f64>,
    /// Siblings moved from ready to rejected.
    pub rejected: Vec<String>,
    /// Sandboxes cancelled because the main state changed.
    pub cancelled: Vec<String>,
}

/// Seed for dimension `index` of a batch opened at `cursor`.
pub fn derive_seed(base: u64, cursor: usize, index: usize) -> u64 {
    // splitmix64 finalizer over a simple combination.
    let mut z = base
        ^ (cursor as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (index as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub struct Engine {
    config: SpeculationConfig,
    registry: Arc<StrategyRegistry>,
    strategy_params: BTreeMap<String, BTreeMap<String, f64>>,
    stats: Arc<CorpusStats>,
    seed: u64,
    weights: StrategyWeights,
    sandboxes: BTreeMap<String, Sandbox>,
    batches: BTreeMap<String, Batch>,
    tokens: HashMap<String, CancelToken>,
    reported: BTreeSet<String>,
    next_sandbox: u64,
    next_batch: u64,
    pool: Pool,
    results: Receiver<WorkerMsg>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("sandboxes", &self.sandboxes.len())
            .field("batches", &self.batches.len())
            .field("weights", &self.weights)
            .finish_non_exhaustive()
    }
}

impl Engine {
    pub fn new(
        config: SpeculationConfig,
        strategy_params: BTreeMap<String, BTreeMap<String, f64>>,
        stats: Arc<CorpusStats>,
        seed: u64,
    ) -> Result<Self, EngineError> {
        config.validate().map_err(EngineError::Config)?;
        let registry = registry_with_faults(&config.fault_injection_ms)?;
        if config.n > registry.len() {
            return Err(EngineError::Config(format!(
                "n = {} exceeds the {} registered strategies",
                config.n,
                registry.len()
            )));
        }
        for (id, params) in &strategy_params {
            registry.resolve_params(id, params)?;
        }
        let (pool, results) = Pool::start(config.max_workers);
        Ok(Self {
            config,
            registry: Arc::new(registry),
            strategy_params,
            stats,
            seed,
            weights: StrategyWeights::new(),
            sandboxes: BTreeMap::new(),
            batches: BTreeMap::new(),
            tokens: HashMap::new(),
            reported: BTreeSet::new(),
            next_sandbox: 0,
            next_batch: 0,
            pool,
            results,
        })
    }

    pub fn config(&self) -> &SpeculationConfig {
        &self.config
    }

    pub fn registry(&self) -> &StrategyRegistry {
        &self.registry
    }

    /// Add a strategy beyond the built-in catalog.
    pub fn register_strategy(&mut self, strategy: Arc<dyn Strategy>) -> Result<(), EngineError> {
        Arc::make_mut(&mut self.registry).register(strategy)?;
        Ok(())
    }

    pub fn weights(&self) -> &StrategyWeights {
        &self.weights
    }

    /// Replace the learned weights, e.g. when restoring a session.
    pub fn restore_weights(&mut self, weights: StrategyWeights) {
        self.weights = weights;
    }

    pub fn stats(&self) -> &Arc<CorpusStats> {
        &self.stats
    }

    pub fn sandbox(&self, id: &str) -> Option<&Sandbox> {
        self.sandboxes.get(id)
    }

    pub fn sandboxes(&self) -> impl Iterator<Item = &Sandbox> {
        self.sandboxes.values()
    }

    pub fn batch(&self, id: &str) -> Option<&Batch> {
        self.batches.get(id)
    }

    pub fn batches(&self) -> impl Iterator<Item = &Batch> {
        self.batches.values()
    }

    pub fn batch_sandboxes(&self, batch_id: &str) -> Vec<&Sandbox> {
        self.batches
            .get(batch_id)
            .map(|b| b.sandbox_ids.iter().map(|id| &self.sandboxes[id]).collect())
            .unwrap_or_default()
    }

    /// Counts by status over every sandbox opened so far.
    pub fn status_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut counts = BTreeMap::new();
        for s in self.sandboxes.values() {
            *counts.entry(s.status.as_str()).or_insert(0) += 1;
        }
        counts
    }

    /// One dimension per strategy (first `n` of the catalog), each
    /// forecasting `b` inserts.
    pub fn automatic_dimensions(&self, cursor: usize) -> Vec<Dimensions> {
        self.registry
            .ids()
            .into_iter()
            .take(self.config.n)
            .enumerate()
            .map(|(i, id)| {
                let mut d = Dimensions::strategy(&id, derive_seed(self.seed, cursor, i), self.config.b);
                if let Some(p) = self.strategy_params.get(&id) {
                    d.params = p.clone();
                }
                d
            })
            .collect()
    }

    /// An unsettled or unresolved batch for the same origin, trigger and
    /// dimensions.
    fn coalesce(&self, origin_digest: &str, request: &SpeculationRequest) -> Option<String> {
        self.batches
            .values()
            .filter(|b| b.origin_digest == origin_digest && b.trigger == request.trigger)
            .filter(|b| {
                b.sandbox_ids.len() == request.dimensions.len()
                    && b.sandbox_ids
                        .iter()
                        .zip(&request.dimensions)
                        .all(|(id, d)| &self.sandboxes[id].dimensions == d)
            })
            .find(|b| {
                b.sandbox_ids.iter().any(|id| {
                    matches!(
                        self.sandboxes[id].status,
                        SandboxStatus::Pending | SandboxStatus::Running | SandboxStatus::Ready
                    )
                })
            })
            .map(|b| b.batch_id.clone())
    }

    /// Open and schedule a batch. Returns the batch id; an identical live
    /// batch is returned instead of opening a duplicate.
    pub fn speculate(&mut self, origin: &ModelState, request: SpeculationRequest) -> Result<String, EngineError> {
        if request.dimensions.is_empty() {
            return Err(EngineError::EmptyRequest);
        }
        for d in &request.dimensions {
            if self.registry.get(&d.strategy_id).is_some() {
                self.registry.resolve_params(&d.strategy_id, &d.params)?;
            } else if ![USER_MOVE, NEXT_MOVE, AUTO_COMPLETE].contains(&d.strategy_id.as_str()) {
                return Err(StrategyError::UnknownStrategy(d.strategy_id.clone()).into());
            }
        }
        let origin_digest = origin.digest().to_string();
        if let Some(existing) = self.coalesce(&origin_digest, &request) {
            return Ok(existing);
        }
        let batch_id = format!("b{:04}", self.next_batch);
        self.next_batch += 1;
        let origin_arc = Arc::new(origin.clone());
        let budget = self.config.budgets.get(request.budget);
        let model = self.config.model_params();
        let mut ids = Vec::with_capacity(request.dimensions.len());
        for dims in request.dimensions {
            let sandbox_id = format!("s{:04}", self.next_sandbox);
            self.next_sandbox += 1;
            let token = CancelToken::new();
            self.tokens.insert(sandbox_id.clone(), token.clone());
            self.pool.submit(Job {
                sandbox_id: sandbox_id.clone(),
                origin: Arc::clone(&origin_arc),
                dims: dims.clone(),
                budget,
                cancel: token,
                registry: Arc::clone(&self.registry),
                stats: Arc::clone(&self.stats),
                model,
            });
            self.sandboxes.insert(
                sandbox_id.clone(),
                Sandbox {
                    sandbox_id: sandbox_id.clone(),
                    batch_id: batch_id.clone(),
                    origin_digest: origin_digest.clone(),
                    trigger: request.trigger,
                    budget: request.budget,
                    dimensions: dims,
                    status: SandboxStatus::Pending,
                    result: None,
                    result_digest: None,
                    quality: None,
                    runtime_ms: None,
                    created_at_cursor: origin.insert_cursor(),
                    applied: None,
                    forecast_inserted: None,
                    warning: None,
                    reason: None,
                },
            );
            ids.push(sandbox_id);
        }
        self.batches.insert(
            batch_id.clone(),
            Batch {
                batch_id: batch_id.clone(),
                trigger: request.trigger,
                budget: request.budget,
                origin_digest,
                origin_cursor: origin.insert_cursor(),
                origin_quality: evaluate(origin, &self.stats),
                sandbox_ids: ids,
                reason: request.reason,
            },
        );
        Ok(batch_id)
    }

    fn transition(&mut self, id: &str, next: SandboxStatus) -> bool {
        let sb = self.sandboxes.get_mut(id).expect("known sandbox");
        if !sb.status.can_become(next) {
            return false;
        }
        sb.status = next;
        if !next.has_result() {
            sb.result = None;
            sb.result_digest = None;
            sb.quality = None;
        }
        true
    }

    fn handle(&mut self, msg: WorkerMsg) {
        match msg {
            WorkerMsg::Started { sandbox_id } => {
                self.transition(&sandbox_id, SandboxStatus::Running);
            }
            WorkerMsg::Finished {
                sandbox_id,
                outcome,
                runtime,
            } => {
                let Some(sb) = self.sandboxes.get(&sandbox_id) else { return };
                if sb.status.is_settled() {
                    return;
                }
                let budget = self.config.budgets.get(sb.budget);
                let runtime_ms = runtime.as_secs_f64() * 1000.0;
                let (status, reason) = match outcome {
                    Ok(run) if runtime <= budget => {
                        let sb = self.sandboxes.get_mut(&sandbox_id).expect("known");
                        sb.result_digest = Some(run.state.digest().to_string());
                        sb.result = Some(Arc::new(run.state));
                        sb.quality = Some(run.quality);
                        sb.applied = Some(run.applied);
                        sb.forecast_inserted = Some(run.inserted);
                        sb.warning = run.warning;
                        (SandboxStatus::Ready, None)
                    }
                    Ok(_) | Err(RunError::Interrupted(Interrupted::DeadlineExceeded)) => (
                        SandboxStatus::TimedOut,
                        Some(format!("exceeded the {} ms {} budget", budget.as_millis(), sb.budget.as_str())),
                    ),
                    Err(RunError::Interrupted(Interrupted::Cancelled)) => {
                        (SandboxStatus::Cancelled, Some("cancelled".to_string()))
                    }
                    Err(e) => (SandboxStatus::Cancelled, Some(e.to_string())),
                };
                // A sandbox that never reported Started (cancelled while
                // queued) cannot reach here; workers always send Started first.
                if self.sandboxes[&sandbox_id].status == SandboxStatus::Pending {
                    self.transition(&sandbox_id, SandboxStatus::Running);
                }
                self.transition(&sandbox_id, status);
                let sb = self.sandboxes.get_mut(&sandbox_id).expect("known");
                sb.runtime_ms = Some(runtime_ms);
                sb.reason = reason;
                self.tokens.remove(&sandbox_id);
            }
        }
    }

    fn newly_settled(&mut self) -> Vec<String> {
        let done: Vec<String> = self
            .batches
            .values()
            .filter(|b| !self.reported.contains(&b.batch_id))
            .filter(|b| b.sandbox_ids.iter().all(|id| self.sandboxes[id].status.is_settled()))
            .map(|b| b.batch_id.clone())
            .collect();
        self.reported.extend(done.iter().cloned());
        done
    }

    /// Process worker output without blocking. Returns batches that became
    /// settled (no sandbox pending or running), each reported once.
    pub fn poll(&mut self) -> Vec<String> {
        while let Ok(msg) = self.results.try_recv() {
            self.handle(msg);
        }
        self.newly_settled()
    }

    pub fn is_settled(&self, batch_id: &str) -> bool {
        self.batches
            .get(batch_id)
            .is_some_and(|b| b.sandbox_ids.iter().all(|id| self.sandboxes[id].status.is_settled()))
    }

    /// Block until `batch_id` is settled or `timeout` passes. Returns all
    /// batches that became settled meanwhile, like [`poll`](Self::poll).
    pub fn wait_batch(&mut self, batch_id: &str, timeout: Option<Duration>) -> Result<Vec<String>, EngineError> {
        if !self.batches.contains_key(batch_id) {
            return Err(EngineError::UnknownBatch(batch_id.to_string()));
        }
        let end = timeout.map(|t| Instant::now() + t);
        while !self.is_settled(batch_id) {
            let wait = match end {
                Some(e) => e.saturating_duration_since(Instant::now()),
                None => Duration::from_secs(3600),
            };
            match self.results.recv_timeout(wait) {
                Ok(msg) => self.handle(msg),
                Err(RecvTimeoutError::Timeout) if end.is_some() => break,
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break,
            }
        }
        while let Ok(msg) = self.results.try_recv() {
            self.handle(msg);
        }
        Ok(self.newly_settled())
    }

    /// Consensus ranking of the sandboxes of a batch that hold results.
    /// Timed-out and cancelled sandboxes never appear.
    pub fn rank_batch(&self, batch_id: &str) -> Result<Vec<RankedCandidate>, EngineError> {
        let batch = self
            .batches
            .get(batch_id)
            .ok_or_else(|| EngineError::UnknownBatch(batch_id.to_string()))?;
        let eligible: Vec<&Sandbox> = batch
            .sandbox_ids
            .iter()
            .map(|id| &self.sandboxes[id])
            .filter(|s| s.status.has_result())
            .collect();
        let qualities: Vec<&QualityVector> = eligible.iter().map(|s| s.quality.as_ref().expect("has result")).collect();
        let normalized = normalize_candidates(&batch.origin_quality, &qualities);
        let candidates: Vec<Candidate> = eligible
            .iter()
            .zip(normalized)
            .map(|(s, normalized)| Candidate {
                sandbox_id: s.sandbox_id.clone(),
                normalized,
                strategy_weight: self.weights.get(s.dimensions.schema()),
            })
            .collect();
        Ok(consensus_rank(&candidates, self.config.consensus, &self.config.metric_weights)?)
    }

    fn lookup(&self, id: &str) -> Result<&Sandbox, EngineError> {
        self.sandboxes
            .get(id)
            .ok_or_else(|| EngineError::UnknownSandbox(id.to_string()))
    }

    /// Accept a ready sandbox whose origin is `main`. Siblings that are ready
    /// become rejected; everything else unresolved is cancelled. Accepting
    /// the same sandbox twice returns `None`.
    pub fn accept(&mut self, id: &str, main: &ModelState) -> Result<Option<Accepted>, EngineError> {
        let sb = self.lookup(id)?;
        if sb.status == SandboxStatus::Accepted {
            return Ok(None);
        }
        if sb.origin_digest != main.digest() {
            return Err(EngineError::StaleSandbox(id.to_string()));
        }
        match sb.status {
            SandboxStatus::Ready => {}
            SandboxStatus::Rejected => {
                return Err(EngineError::AlreadyResolved {
                    id: id.to_string(),
                    status: "rejected",
                })
            }
            other => {
                return Err(EngineError::NotReady {
                    id: id.to_string(),
                    status: other.as_str(),
                })
            }
        }
        let batch_id = sb.batch_id.clone();
        let schema = sb.dimensions.schema().to_string();
        let model_overrides = sb.dimensions.model_overrides.clone();
        let state = Arc::clone(sb.result.as_ref().expect("ready sandboxes hold a result"));
        self.transition(id, SandboxStatus::Accepted);
        self.weights.record(&schema, true, self.config.alpha);

        let mut rejected = Vec::new();
        let siblings = self.batches[&batch_id].sandbox_ids.clone();
        for sib in siblings.iter().filter(|s| s.as_str() != id) {
            if self.sandboxes[sib].status == SandboxStatus::Ready {
                self.transition(sib, SandboxStatus::Rejected);
                let schema = self.sandboxes[sib].dimensions.schema().to_string();
                self.weights.record(&schema, false, self.config.alpha);
                rejected.push(sib.clone());
            }
        }
        let mut cancelled = self.cancel_where(|s| siblings.contains(&s.sandbox_id));
        cancelled.extend(self.invalidate(state.digest()));
        Ok(Some(Accepted {
            sandbox_id: id.to_string(),
            state,
            schema,
            model_overrides,
            rejected,
            cancelled,
        }))
    }

    /// Reject a ready sandbox. Rejecting twice is a no-op returning `false`.
    pub fn reject(&mut self, id: &str) -> Result<bool, EngineError> {
        let sb = self.lookup(id)?;
        match sb.status {
            SandboxStatus::Rejected => Ok(false),
            SandboxStatus::Ready => {
                let schema = sb.dimensions.schema().to_string();
                self.transition(id, SandboxStatus::Rejected);
                self.weights.record(&schema, false, self.config.alpha);
                Ok(true)
            }
            SandboxStatus::Accepted => Err(EngineError::AlreadyResolved {
                id: id.to_string(),
                status: "accepted",
            }),
            other => Err(EngineError::NotReady {
                id: id.to_string(),
                status: other.as_str(),
            }),
        }
    }

    fn cancel_where(&mut self, pred: impl Fn(&Sandbox) -> bool) -> Vec<String> {
        let ids: Vec<String> = self
            .sandboxes
            .values()
            .filter(|s| matches!(s.status, SandboxStatus::Pending | SandboxStatus::Running | SandboxStatus::Ready))
            .filter(|s| pred(s))
            .map(|s| s.sandbox_id.clone())
            .collect();
        for id in &ids {
            if let Some(token) = self.tokens.remove(id) {
                token.cancel();
            }
            self.transition(id, SandboxStatus::Cancelled);
            self.sandboxes.get_mut(id).expect("known").reason = Some("main state changed".to_string());
        }
        ids
    }

    /// Cancel every unresolved sandbox whose origin is not `main_digest`.
    pub fn invalidate(&mut self, main_digest: &str) -> Vec<String> {
        self.cancel_where(|s| s.origin_digest != main_digest)
    }

    /// Cancel every unresolved sandbox.
    pub fn cancel_all(&mut self) -> Vec<String> {
        self.cancel_where(|_| true)
    }

    /// Batches with at least one ready sandbox.
    pub fn awaiting_resolution(&self) -> Vec<String> {
        self.batches
            .values()
            .filter(|b| b.sandbox_ids.iter().any(|id| self.sandboxes[id].status == SandboxStatus::Ready))
            .map(|b| b.batch_id.clone())
            .collect()
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        for token in self.tokens.values() {
            token.cancel();
        }
    }
}
