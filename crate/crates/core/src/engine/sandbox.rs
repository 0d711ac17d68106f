use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::BudgetLevel;
use crate::ihtm::ModelState;
use crate::quality::QualityVector;

/// What caused a batch of sandboxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Trigger {
    #[serde(rename = "metric_decline")]
    MetricDecline,
    /// Fixed schedule: once per buffer of `b` documents.
    #[serde(rename = "buffer")]
    Buffer,
    L1,
    L2,
    L3,
    #[serde(rename = "manual")]
    Manual,
}

impl Trigger {
    pub fn as_str(self) -> &'static str {
        match self {
            Trigger::MetricDecline => "metric_decline",
            Trigger::Buffer => "buffer",
            Trigger::L1 => "L1",
            Trigger::L2 => "L2",
            Trigger::L3 => "L3",
            Trigger::Manual => "manual",
        }
    }

    pub fn default_budget(self) -> BudgetLevel {
        match self {
            Trigger::L1 => BudgetLevel::L1,
            Trigger::L2 => BudgetLevel::L2,
            Trigger::L3 => BudgetLevel::L3,
            Trigger::MetricDecline | Trigger::Buffer | Trigger::Manual => BudgetLevel::Metric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SandboxStatus {
    Pending,
    Running,
    Ready,
    TimedOut,
    Cancelled,
    Accepted,
    Rejected,
}

impl SandboxStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SandboxStatus::Pending => "pending",
            SandboxStatus::Running => "running",
            SandboxStatus::Ready => "ready",
            SandboxStatus::TimedOut => "timed_out",
            SandboxStatus::Cancelled => "cancelled",
            SandboxStatus::Accepted => "accepted",
            SandboxStatus::Rejected => "rejected",
        }
    }

    /// Lifecycle edges. Pending and ready sandboxes may also be cancelled
    /// when the main state moves away from their origin.
    pub fn can_become(self, next: SandboxStatus) -> bool {
        use SandboxStatus::*;
        matches!(
            (self, next),
            (Pending, Running)
                | (Pending, Cancelled)
                | (Running, Ready)
                | (Running, TimedOut)
                | (Running, Cancelled)
                | (Ready, Accepted)
                | (Ready, Rejected)
                | (Ready, Cancelled)
        )
    }

    /// No more worker output is expected.
    pub fn is_settled(self) -> bool {
        !matches!(self, SandboxStatus::Pending | SandboxStatus::Running)
    }

    /// Result and quality are present.
    pub fn has_result(self) -> bool {
        matches!(self, SandboxStatus::Ready | SandboxStatus::Accepted | SandboxStatus::Rejected)
    }
}

/// One leaf move applied inside a sandbox before its strategy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafMove {
    pub doc_id: String,
    /// Topic (or root) receiving the leaf.
    pub target: String,
}

/// Schema ids of sandboxes that only replay moves.
pub const USER_MOVE: &str = "user_move";
pub const NEXT_MOVE: &str = "next_move";
pub const AUTO_COMPLETE: &str = "auto_complete";

/// The point of the speculation space a sandbox computes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimensions {
    /// Strategy to apply, or one of the move-only schemas.
    pub strategy_id: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    pub seed: u64,
    /// Buffered documents to insert after the strategy.
    pub temporal_horizon: usize,
    /// Model parameter overrides (`theta_new`, `max_depth`).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub model_overrides: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub moves: Vec<LeafMove>,
}

impl Dimensions {
    pub fn strategy(strategy_id: &str, seed: u64, temporal_horizon: usize) -> Self {
        Self {
            strategy_id: strategy_id.to_string(),
            params: BTreeMap::new(),
            seed,
            temporal_horizon,
            model_overrides: BTreeMap::new(),
            moves: Vec::new(),
        }
    }

    pub fn moves(schema: &str, moves: Vec<LeafMove>) -> Self {
        Self {
            moves,
            ..Self::strategy(schema, 0, 0)
        }
    }

    /// Key for acceptance learning.
    pub fn schema(&self) -> &str {
        &self.strategy_id
    }
}

/// An isolated computation started from a copy of the main state.
#[derive(Debug, Clone, Serialize)]
pub struct Sandbox {
    pub sandbox_id: String,
    pub batch_id: String,
    pub origin_digest: String,
    pub trigger: Trigger,
    pub budget: BudgetLevel,
    pub dimensions: Dimensions,
    pub status: SandboxStatus,
    #[serde(skip)]
    pub result: Option<Arc<ModelState>>,
    pub result_digest: Option<String>,
    pub quality: Option<QualityVector>,
    pub runtime_ms: Option<f64>,
    pub created_at_cursor: usize,
    /// Whether the strategy changed anything.
    pub applied: Option<bool>,
    /// Documents the forecast actually inserted.
    pub forecast_inserted: Option<usize>,
    /// Non-fatal notes, e.g. a forecast cut short by the buffer.
    pub warning: Option<String>,
    /// Why the sandbox was cancelled or timed out.
    pub reason: Option<String>,
}

impl Sandbox {
    pub fn summary(&self) -> SandboxSummary {
        SandboxSummary {
            sandbox_id: self.sandbox_id.clone(),
            batch_id: self.batch_id.clone(),
            origin_digest: self.origin_digest.clone(),
            trigger: self.trigger,
            budget: self.budget,
            dimensions: self.dimensions.clone(),
            status: self.status,
            result_digest: self.result_digest.clone(),
            quality: self.quality.clone(),
            runtime_ms: self.runtime_ms,
            created_at_cursor: self.created_at_cursor,
            applied: self.applied,
            warning: self.warning.clone(),
            reason: self.reason.clone(),
        }
    }
}

/// Wire form of a sandbox (no result tree).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxSummary {
    pub sandbox_id: String,
    pub batch_id: String,
    pub origin_digest: String,
    pub trigger: Trigger,
    pub budget: BudgetLevel,
    pub dimensions: Dimensions,
    pub status: SandboxStatus,
    pub result_digest: Option<String>,
    pub quality: Option<QualityVector>,
    pub runtime_ms: Option<f64>,
    pub created_at_cursor: usize,
    pub applied: Option<bool>,
    pub warning: Option<String>,
    pub reason: Option<String>,
}
