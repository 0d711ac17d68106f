//! Append-only provenance log, one JSON object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::SessionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Ingest,
    Insert,
    Trigger,
    SandboxCreated,
    SandboxReady,
    SandboxTimedOut,
    Accept,
    Reject,
    Interaction,
    Config,
}

impl EntryKind {
    /// Kinds whose replay changes the main state.
    pub fn mutates(self) -> bool {
        matches!(self, EntryKind::Insert | EntryKind::Accept)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub seq: u64,
    pub kind: EntryKind,
    pub payload: Value,
    /// Main-state digest once this entry has taken effect.
    pub digest_after: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// The in-memory log plus an optional JSONL mirror on disk.
#[derive(Debug, Default)]
pub struct Provenance {
    entries: Vec<ProvenanceEntry>,
    sink: Option<BufWriter<File>>,
}

impl Provenance {
    pub fn new() -> Self {
        Self::default()
    }

    /// Mirror every entry, including those already recorded, to `path`.
    pub fn attach_file(&mut self, path: &Path) -> Result<(), SessionError> {
        let mut sink = BufWriter::new(File::create(path)?);
        for e in &self.entries {
            write_line(&mut sink, e)?;
        }
        sink.flush()?;
        self.sink = Some(sink);
        Ok(())
    }

    pub fn append(&mut self, kind: EntryKind, payload: Value, digest_after: &str) -> Result<&ProvenanceEntry, SessionError> {
        let entry = ProvenanceEntry {
            seq: self.entries.len() as u64,
            kind,
            payload,
            digest_after: digest_after.to_string(),
            timestamp: now_ms(),
        };
        if let Some(sink) = &mut self.sink {
            write_line(sink, &entry)?;
            sink.flush()?;
        }
        self.entries.push(entry);
        Ok(self.entries.last().expect("just pushed"))
    }

    /// Re-append an entry read from a log, keeping its seq and timestamp.
    pub(super) fn push_verbatim(&mut self, entry: ProvenanceEntry) {
        debug_assert_eq!(entry.seq, self.entries.len() as u64);
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[ProvenanceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn since(&self, seq: usize) -> &[ProvenanceEntry] {
        &self.entries[seq.min(self.entries.len())..]
    }

    pub fn to_jsonl(&self) -> String {
        to_jsonl(&self.entries)
    }
}

fn write_line(w: &mut impl Write, e: &ProvenanceEntry) -> Result<(), SessionError> {
    serde_json::to_writer(&mut *w, e)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn to_jsonl(entries: &[ProvenanceEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).expect("entries serialize"));
        out.push('\n');
    }
    out
}

/// Parse a JSONL log. Blank lines are skipped; anything else malformed is
/// an error naming the line.
pub fn read_log(path: &Path) -> Result<Vec<ProvenanceEntry>, SessionError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line)
            .map_err(|e| SessionError::MalformedLog(format!("line {}: {e}", i + 1)))?;
        out.push(entry);
    }
    Ok(out)
}

/// The same log with every timestamp set to zero, for comparing runs.
pub fn normalize_timestamps(entries: &[ProvenanceEntry]) -> Vec<ProvenanceEntry> {
    entries
        .iter()
        .cloned()
        .map(|e| ProvenanceEntry { timestamp: 0, ..e })
        .collect()
}
