//! Wire protocol. Every message is `{"type": ..., "seq": n, "payload": {...}}`;
//! see `docs/protocol.md` for the payload of each type.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use super::provenance::ProvenanceEntry;
use super::session::{AcceptReport, Session, Snapshot, StepReport};
use super::SessionError;
use crate::delta::DeltaTree;
use crate::engine::{BudgetLevel, Dimensions, EngineError, SandboxSummary};
use crate::interact::{DropTarget, InteractionEvent, Level};
use crate::quality::RankedCandidate;

/// A message body with its sequence number.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope<T> {
    pub seq: u64,
    pub body: T,
}

impl<T: Serialize> Serialize for Envelope<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut v = serde_json::to_value(&self.body).map_err(serde::ser::Error::custom)?;
        let obj = v
            .as_object_mut()
            .ok_or_else(|| serde::ser::Error::custom("message body must be an object"))?;
        obj.entry("payload").or_insert_with(|| Value::Object(Map::new()));
        obj.insert("seq".into(), Value::from(self.seq));
        v.serialize(s)
    }
}

impl<'de, T: DeserializeOwned> Deserialize<'de> for Envelope<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let mut v = Value::deserialize(d)?;
        let obj = v
            .as_object_mut()
            .ok_or_else(|| serde::de::Error::custom("message must be a JSON object"))?;
        let seq = obj
            .remove("seq")
            .and_then(|s| s.as_u64())
            .ok_or_else(|| serde::de::Error::custom("missing or invalid seq"))?;
        obj.entry("payload").or_insert_with(|| Value::Object(Map::new()));
        let body = T::deserialize(v).map_err(serde::de::Error::custom)?;
        Ok(Self { seq, body })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Step {
        count: usize,
    },
    Accept {
        sandbox_id: String,
    },
    Reject {
        sandbox_id: String,
    },
    Interaction(InteractionEvent),
    GetSnapshot {},
    GetDelta {
        sandbox_id: String,
    },
    GetProvenance {
        #[serde(default)]
        since: usize,
    },
    Subscribe {},
    /// Open a batch now. Empty `dimensions` means the automatic set.
    Speculate {
        #[serde(default)]
        dimensions: Vec<Dimensions>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        budget: Option<BudgetLevel>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    InvalidJson,
    Schema,
    UnknownSandbox,
    UnknownBatch,
    StaleSandbox,
    NotReady,
    AlreadyResolved,
    InvalidInteraction,
    InvalidRequest,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolError {
    pub code: ErrorCode,
    pub message: String,
}

impl From<&SessionError> for ProtocolError {
    fn from(e: &SessionError) -> Self {
        let code = match e {
            SessionError::Engine(EngineError::UnknownSandbox(_)) => ErrorCode::UnknownSandbox,
            SessionError::Engine(EngineError::UnknownBatch(_)) => ErrorCode::UnknownBatch,
            SessionError::Engine(EngineError::StaleSandbox(_)) => ErrorCode::StaleSandbox,
            SessionError::Engine(EngineError::NotReady { .. }) | SessionError::NoResult(_) => ErrorCode::NotReady,
            SessionError::Engine(EngineError::AlreadyResolved { .. }) => ErrorCode::AlreadyResolved,
            SessionError::Engine(_) | SessionError::Config(_) => ErrorCode::InvalidRequest,
            SessionError::Interaction(_) => ErrorCode::InvalidInteraction,
            _ => ErrorCode::Internal,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// One entry of a `sandbox_ready` push.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSandbox {
    pub ranking: RankedCandidate,
    pub summary: SandboxSummary,
    /// Present for the top candidates only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<DeltaTree>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionResult {
    pub event_id: String,
    pub level: Option<Level>,
    #[serde(default)]
    pub drop_targets: Vec<DropTarget>,
    /// Batch opened for the proposal, if any.
    #[serde(default)]
    pub batch_id: Option<String>,
    /// Sandbox that carried out the user's move, if the event moved a leaf.
    #[serde(default)]
    pub moved_by: Option<String>,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ServerMessage {
    StepResult {
        request_seq: u64,
        report: StepReport,
    },
    Accepted {
        request_seq: u64,
        report: AcceptReport,
    },
    Rejected {
        request_seq: u64,
        sandbox_id: String,
        changed: bool,
    },
    Interaction {
        request_seq: u64,
        result: InteractionResult,
    },
    Snapshot {
        request_seq: Option<u64>,
        snapshot: Box<Snapshot>,
    },
    Delta {
        request_seq: u64,
        sandbox_id: String,
        delta: DeltaTree,
    },
    Provenance {
        request_seq: u64,
        entries: Vec<ProvenanceEntry>,
    },
    Subscribed {
        request_seq: u64,
    },
    SpeculationStarted {
        request_seq: u64,
        batch_id: String,
    },
    SandboxReady {
        batch_id: String,
        ranked: Vec<RankedSandbox>,
    },
    Error {
        request_seq: Option<u64>,
        code: ErrorCode,
        message: String,
    },
}

/// Parse a client message, telling bad JSON apart from schema violations.
/// On a schema violation the `seq` is returned when it could be read.
pub fn parse_client(text: &str) -> Result<Envelope<ClientMessage>, (Option<u64>, ProtocolError)> {
    let v: Value = serde_json::from_str(text).map_err(|e| {
        (
            None,
            ProtocolError {
                code: ErrorCode::InvalidJson,
                message: e.to_string(),
            },
        )
    })?;
    let seq = v.get("seq").and_then(Value::as_u64);
    serde_json::from_value(v).map_err(|e| {
        (
            seq,
            ProtocolError {
                code: ErrorCode::Schema,
                message: e.to_string(),
            },
        )
    })
}

impl Session {
    /// Handle one client message. Returns the direct responses; pushes to
    /// subscribers go through the fan-out. A message that fails validation
    /// leaves the session untouched.
    pub fn handle_message(&mut self, text: &str) -> Vec<Envelope<ServerMessage>> {
        let msg = match parse_client(text) {
            Ok(m) => m,
            Err((request_seq, e)) => return vec![self.error(request_seq, e)],
        };
        let rs = msg.seq;
        let out = match msg.body {
            ClientMessage::Step { count } => self.step(count).map(|report| ServerMessage::StepResult {
                request_seq: rs,
                report,
            }),
            ClientMessage::Accept { sandbox_id } => self.accept(&sandbox_id).map(|report| ServerMessage::Accepted {
                request_seq: rs,
                report,
            }),
            ClientMessage::Reject { sandbox_id } => self.reject(&sandbox_id).map(|changed| ServerMessage::Rejected {
                request_seq: rs,
                sandbox_id,
                changed,
            }),
            ClientMessage::Interaction(event) => self.interaction(event).map(|result| ServerMessage::Interaction {
                request_seq: rs,
                result,
            }),
            ClientMessage::GetSnapshot {} => self.sync().map(|_| ServerMessage::Snapshot {
                request_seq: Some(rs),
                snapshot: Box::new(self.snapshot()),
            }),
            ClientMessage::GetDelta { sandbox_id } => self
                .sync()
                .and_then(|_| self.delta(&sandbox_id))
                .map(|delta| ServerMessage::Delta {
                    request_seq: rs,
                    sandbox_id,
                    delta,
                }),
            ClientMessage::GetProvenance { since } => Ok(ServerMessage::Provenance {
                request_seq: rs,
                entries: self.provenance.since(since).to_vec(),
            }),
            ClientMessage::Subscribe {} => Ok(ServerMessage::Subscribed { request_seq: rs }),
            ClientMessage::Speculate { dimensions, budget } => {
                self.speculate(dimensions, budget)
                    .map(|batch_id| ServerMessage::SpeculationStarted {
                        request_seq: rs,
                        batch_id,
                    })
            }
        };
        match out {
            Ok(body) => {
                let seq = self.next_out_seq();
                vec![Envelope { seq, body }]
            }
            Err(e) => vec![self.error(Some(rs), ProtocolError::from(&e))],
        }
    }

    fn error(&mut self, request_seq: Option<u64>, e: ProtocolError) -> Envelope<ServerMessage> {
        Envelope {
            seq: self.next_out_seq(),
            body: ServerMessage::Error {
                request_seq,
                code: e.code,
                message: e.message,
            },
        }
    }
}
