//! Speculative execution for steering an incremental hierarchical topic model.
//!
//! The crate is organised the way data flows through a session:
//!
//! - [`corpus`] ingests documents and builds TF-IDF vectors.
//! - [`ihtm`] holds the topic tree ([`ModelState`]) and one-at-a-time insertion.
//! - [`strategies`] is the catalog of tree optimizations run inside sandboxes.
//! - [`quality`] evaluates states, decides when to speculate and ranks results.
//! - [`engine`] opens sandboxes, schedules them on workers under runtime budgets,
//!   and applies accept/reject decisions.
//! - [`delta`] merges two trees and annotates what changed.
//! - [`interact`] maps user interactions to speculation requests.
//! - [`service`] owns sessions, the wire protocol and the provenance log.
//! - [`headless`] drives sessions without a user for runs and benchmarks.

pub mod cancel;
pub mod corpus;
pub mod delta;
pub mod engine;
pub mod headless;
pub mod ihtm;
pub mod interact;
pub mod quality;
pub mod service;
pub mod strategies;

pub use cancel::{CancelToken, Interrupted};
pub use corpus::{ingest_corpus, vectorize, Corpus, CorpusStats, Document, SparseVector};
pub use delta::{diff, ChangeKind, DeltaTree};
pub use engine::{Sandbox, SandboxStatus, SpeculationConfig, StrategyWeights, Trigger};
pub use ihtm::{ModelParams, ModelState, NodeId, NodeKind, TopicNode};
pub use quality::{consensus_rank, evaluate, ConsensusMethod, QualityVector};
pub use service::{Session, SessionConfig};
pub use strategies::{apply_strategy, list_strategies, StrategyDescriptor};
