//! Rebuild a session from its provenance log and verify the digest chain.
//!
//! Inserts and accepts are re-executed; accepted sandboxes are recomputed
//! from their logged dimensions without a deadline, so the outcome does not
//! depend on machine speed. Other entries only restore bookkeeping. Sandboxes
//! that were open when the log ends are not restored.

use std::path::{Path, PathBuf};

use serde_json::Value;

use super::provenance::{read_log, EntryKind, ProvenanceEntry};
use super::session::Session;
use super::{SessionConfig, SessionError};
use crate::cancel::CancelToken;
use crate::corpus::ingest_corpus;
use crate::engine::{execute, Dimensions, StrategyWeights};
use crate::interact::InteractionEvent;

#[derive(Debug, Clone, Default)]
pub struct ReplayOptions {
    /// Read the corpus from here instead of the logged source path.
    pub corpus: Option<PathBuf>,
}

fn field<'a>(e: &'a ProvenanceEntry, name: &str) -> Result<&'a Value, SessionError> {
    e.payload.get(name).ok_or_else(|| SessionError::Divergence {
        seq: e.seq,
        detail: format!("payload has no {name}"),
    })
}

fn parse<T: serde::de::DeserializeOwned>(e: &ProvenanceEntry, name: &str) -> Result<T, SessionError> {
    serde_json::from_value(field(e, name)?.clone()).map_err(|err| SessionError::Divergence {
        seq: e.seq,
        detail: format!("bad {name}: {err}"),
    })
}

fn check(session: &Session, e: &ProvenanceEntry) -> Result<(), SessionError> {
    if session.main.digest() != e.digest_after {
        return Err(SessionError::Divergence {
            seq: e.seq,
            detail: format!("digest {} but log says {}", session.main.digest(), e.digest_after),
        });
    }
    Ok(())
}

pub fn replay_file(path: &Path, options: &ReplayOptions) -> Result<Session, SessionError> {
    replay(&read_log(path)?, options)
}

/// Re-execute `entries` and return the session they describe. The returned
/// session's log holds the same entries.
pub fn replay(entries: &[ProvenanceEntry], options: &ReplayOptions) -> Result<Session, SessionError> {
    if entries.is_empty() {
        return Err(SessionError::NoEntries);
    }
    for (i, e) in entries.iter().enumerate() {
        if e.seq != i as u64 {
            return Err(SessionError::Divergence {
                seq: e.seq,
                detail: format!("expected seq {i}"),
            });
        }
    }
    let head = &entries[0];
    if head.kind != EntryKind::Config {
        return Err(SessionError::Divergence {
            seq: 0,
            detail: "log does not start with a config entry".into(),
        });
    }
    let config: SessionConfig = parse(head, "config")?;
    let ingest = entries.get(1).filter(|e| e.kind == EntryKind::Ingest).ok_or(SessionError::Divergence {
        seq: 1,
        detail: "missing ingest entry".into(),
    })?;
    let source: String = parse(ingest, "source")?;
    let path = options.corpus.clone().unwrap_or_else(|| PathBuf::from(&source));
    let corpus = ingest_corpus(&path, &config.tokenizer)?;
    let fingerprint: String = parse(ingest, "fingerprint")?;
    if corpus.fingerprint() != fingerprint {
        return Err(SessionError::Divergence {
            seq: 1,
            detail: format!("corpus at {} differs from the logged one", path.display()),
        });
    }
    let mut session = Session::from_corpus(corpus, &source, config)?;
    session.provenance = Default::default();
    for e in entries {
        apply(&mut session, e)?;
        check(&session, e)?;
        session.provenance.push_verbatim(e.clone());
    }
    Ok(session)
}

fn apply(session: &mut Session, e: &ProvenanceEntry) -> Result<(), SessionError> {
    match e.kind {
        EntryKind::Insert => {
            let expected: String = parse(e, "doc_id")?;
            let got = session.insert_one()?;
            if got.as_deref() != Some(expected.as_str()) {
                return Err(SessionError::Divergence {
                    seq: e.seq,
                    detail: format!("inserted {got:?}, log says {expected}"),
                });
            }
        }
        EntryKind::Accept => {
            let dims: Dimensions = parse(e, "dimensions")?;
            let origin: String = parse(e, "origin_digest")?;
            if origin != session.main.digest() {
                return Err(SessionError::Divergence {
                    seq: e.seq,
                    detail: "accepted sandbox started from a different state".into(),
                });
            }
            let run = execute(
                &session.main,
                &dims,
                session.engine.registry(),
                &session.corpus.stats,
                session.config.speculation.model_params(),
                &CancelToken::new(),
            )
            .map_err(|err| SessionError::Divergence {
                seq: e.seq,
                detail: format!("recomputing the sandbox failed: {err}"),
            })?;
            session.replace_main(run.state);
            session.engine.restore_weights(parse::<StrategyWeights>(e, "weights")?);
        }
        EntryKind::Reject => {
            session.engine.restore_weights(parse::<StrategyWeights>(e, "weights")?);
        }
        EntryKind::Interaction => {
            let event: InteractionEvent = parse(e, "event")?;
            session.pattern.observe(&event, &session.main);
        }
        EntryKind::Trigger => {
            let trigger: String = parse(e, "trigger")?;
            let cursor: usize = parse(e, "cursor")?;
            if trigger == "buffer" || trigger == "metric_decline" {
                session.last_trigger_cursor = Some(cursor);
            }
            if trigger == "metric_decline" {
                session.history.rebase();
            }
        }
        EntryKind::Config
        | EntryKind::Ingest
        | EntryKind::SandboxCreated
        | EntryKind::SandboxReady
        | EntryKind::SandboxTimedOut => {}
    }
    Ok(())
}
