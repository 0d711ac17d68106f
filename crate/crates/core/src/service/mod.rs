//! Sessions: one main state, its engine, the provenance log, and the wire
//! protocol clients use to drive them.

mod control;
mod fanout;
mod protocol;
mod provenance;
mod replay;
mod session;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, TokenizerOptions};
use crate::engine::{EngineError, SpeculationConfig};
use crate::interact::{InteractError, PATTERN_CAPACITY, REPETITION_THRESHOLD};
use crate::ihtm::ModelError;

pub use control::{SessionHandle, SessionLoop};
pub use fanout::{Fanout, MessageClass, Subscriber};
pub use protocol::{
    parse_client, ClientMessage, Envelope, ErrorCode, InteractionResult, ProtocolError, RankedSandbox, ServerMessage,
};
pub use provenance::{normalize_timestamps, read_log, to_jsonl, EntryKind, Provenance, ProvenanceEntry};
pub use replay::{replay, replay_file, ReplayOptions};
pub use session::{AcceptReport, Session, Snapshot, StepReport};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Interaction(#[from] InteractError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed provenance log: {0}")]
    MalformedLog(String),
    #[error("no entries")]
    NoEntries,
    #[error("divergence at seq {seq}: {detail}")]
    Divergence { seq: u64, detail: String },
    #[error("sandbox {0} has no result to compare")]
    NoResult(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InteractionConfig {
    /// Completed moves remembered for pattern detection.
    pub capacity: usize,
    /// Consecutive identical moves that form a pattern.
    pub threshold: usize,
}

impl Default for InteractionConfig {
    fn default() -> Self {
        Self {
            capacity: PATTERN_CAPACITY,
            threshold: REPETITION_THRESHOLD,
        }
    }
}

/// Everything a session needs besides the corpus. Loaded from TOML:
///
/// ```toml
/// seed = 7
/// [speculation]
/// n = 7
/// b = 10
/// trigger = "every-buffer"
/// [strategies.merge_similar_siblings]
/// tau_merge = 0.6
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub seed: u64,
    pub speculation: SpeculationConfig,
    /// Strategy id → parameter overrides.
    pub strategies: BTreeMap<String, BTreeMap<String, f64>>,
    pub tokenizer: TokenizerOptions,
    pub interaction: InteractionConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            speculation: SpeculationConfig::default(),
            strategies: BTreeMap::new(),
            tokenizer: TokenizerOptions::default(),
            interaction: InteractionConfig::default(),
        }
    }
}

impl SessionConfig {
    pub fn from_toml(text: &str) -> Result<Self, SessionError> {
        let config: Self = toml::from_str(text).map_err(|e| SessionError::Config(e.to_string()))?;
        config.speculation.validate().map_err(SessionError::Config)?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, SessionError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}

#[cfg(test)]
mod tests;
