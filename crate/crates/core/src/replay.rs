//! Session logs: recording client requests and re-executing them headlessly
//! against mock adapters.
//!
//! A log is JSON lines. The first line is the header `{"format":"deckflow-log/1"}`;
//! every other line is one request envelope plus its timestamp and,
//! optionally, the ack the server sent. Ids minted during the recorded run
//! differ from the ones minted on replay, so acks are matched structurally
//! against the replayed acks to translate later references.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::adapters::AdapterSet;
use crate::assets::{AssetStore, MemoryAssetStore};
use crate::canvas::{doc_hash, Document};
use crate::ids::{CardId, DocId};
use crate::protocol::{ClientRequest, Envelope};
use crate::runtime::Coordinator;
use crate::session::{Reply, SessionError};

pub const LOG_FORMAT: &str = "deckflow-log/1";

/// Document id used when a log has no entries.
pub const EMPTY_LOG_DOC: &str = "untitled";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogEntry {
    pub ts: u64,
    #[serde(default)]
    pub msg_id: Value,
    pub kind: String,
    pub doc_id: DocId,
    #[serde(default)]
    pub body: Value,
    /// The response envelope's body (`kind` is "ack" or "error").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ack: Option<Value>,
}

impl LogEntry {
    pub fn envelope(&self) -> Envelope {
        Envelope {
            msg_id: self.msg_id.clone(),
            kind: self.kind.clone(),
            doc_id: Some(self.doc_id.clone()),
            rev: None,
            body: self.body.clone(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayError {
    #[error("log format error at line {line}: {message}")]
    LogFormat { line: usize, message: String },
    #[error("entry at line {line} diverged: recorded success, replay failed with {error}")]
    Diverged { line: usize, error: String },
}

fn format_error(line: usize, message: impl Into<String>) -> ReplayError {
    ReplayError::LogFormat {
        line,
        message: message.into(),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
}

pub fn header_line() -> String {
    json!({ "format": LOG_FORMAT }).to_string()
}

/// Parse a log into (line number, entry) pairs. All entries must name the
/// same document.
pub fn parse_log(text: &str) -> Result<Vec<(usize, LogEntry)>, ReplayError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let Some((n, first)) = lines.next() else {
        return Err(format_error(1, "missing header"));
    };
    let header: Header = serde_json::from_str(first).map_err(|e| format_error(n, e.to_string()))?;
    if header.format != LOG_FORMAT {
        return Err(format_error(n, format!("unsupported format {:?}", header.format)));
    }
    let mut out: Vec<(usize, LogEntry)> = Vec::new();
    for (n, line) in lines {
        let e: LogEntry = serde_json::from_str(line).map_err(|e| format_error(n, e.to_string()))?;
        if let Some((_, prev)) = out.last() {
            if prev.doc_id != e.doc_id {
                return Err(format_error(n, "log mixes documents"));
            }
            if e.ts < prev.ts {
                return Err(format_error(n, "timestamps go backwards"));
            }
        }
        out.push((n, e));
    }
    Ok(out)
}

/// Record old→new id pairs wherever both acks hold an id at the same path.
fn learn_ids(old: &Value, new: &Value, map: &mut BTreeMap<String, String>) {
    match (old, new) {
        (Value::String(a), Value::String(b)) => {
            if a != b && a.parse::<CardId>().is_ok() && b.parse::<CardId>().is_ok() {
                map.insert(a.clone(), b.clone());
            }
        }
        (Value::Array(a), Value::Array(b)) => {
            for (x, y) in a.iter().zip(b) {
                learn_ids(x, y, map);
            }
        }
        (Value::Object(a), Value::Object(b)) => {
            for (k, x) in a {
                if let Some(y) = b.get(k) {
                    learn_ids(x, y, map);
                }
            }
        }
        _ => {}
    }
}

fn translate(v: &Value, map: &BTreeMap<String, String>) -> Value {
    match v {
        Value::String(s) => Value::String(map.get(s).cloned().unwrap_or_else(|| s.clone())),
        Value::Array(a) => Value::Array(a.iter().map(|x| translate(x, map)).collect()),
        Value::Object(o) => Value::Object(o.iter().map(|(k, x)| (k.clone(), translate(x, map))).collect()),
        other => other.clone(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayOutcome {
    pub document: Document,
    pub hash: String,
    pub requests: usize,
    pub errors: usize,
}

/// Re-execute a log with the given adapters (normally the walkthrough
/// mocks) and an in-memory asset store.
pub fn replay_with(text: &str, adapters: AdapterSet) -> Result<ReplayOutcome, ReplayError> {
    replay_into(text, adapters, Arc::new(MemoryAssetStore::default()))
}

pub fn replay_into(text: &str, adapters: AdapterSet, assets: Arc<dyn AssetStore>) -> Result<ReplayOutcome, ReplayError> {
    let entries = parse_log(text)?;
    let mut coord = Coordinator::deterministic(adapters, assets);
    coord.add_inline_worker();
    let doc_id = entries
        .first()
        .map(|(_, e)| e.doc_id.clone())
        .unwrap_or_else(|| DocId::new(EMPTY_LOG_DOC));
    if !doc_id.is_valid() {
        return Err(format_error(entries[0].0, format!("invalid doc_id {doc_id}")));
    }
    let first_ts = entries.first().map_or(0, |(_, e)| e.ts);
    coord.open(&doc_id, first_ts);
    let mut map = BTreeMap::new();
    let mut errors = 0;
    for (line, e) in &entries {
        let mut env = e.envelope();
        env.body = translate(&env.body, &map);
        let req = ClientRequest::from_envelope(&env).map_err(|m| format_error(*line, m))?;
        match coord.request(&doc_id, &req, e.ts) {
            Ok(reply) => {
                if let Some(old) = &e.ack {
                    learn_ids(old, &reply.ack, &mut map);
                }
            }
            Err(err) => {
                errors += 1;
                if e.ack.as_ref().is_some_and(|a| a.get("code").is_none()) {
                    return Err(ReplayError::Diverged {
                        line: *line,
                        error: err.to_string(),
                    });
                }
            }
        }
        coord.drain();
    }
    let document = coord.document(&doc_id).expect("opened").clone();
    Ok(ReplayOutcome {
        hash: doc_hash(&document),
        document,
        requests: entries.len(),
        errors,
    })
}

pub fn replay(text: &str) -> Result<ReplayOutcome, ReplayError> {
    replay_with(text, AdapterSet::walkthrough())
}

/// Writes a log while driving a deterministic [`Coordinator`] with an
/// inline worker.
pub struct Recorder {
    pub coord: Coordinator,
    doc_id: DocId,
    lines: Vec<String>,
    next_msg: u64,
}

impl Recorder {
    /// The document is created at the first request's timestamp, as it is
    /// on replay.
    pub fn new(doc_id: DocId, adapters: AdapterSet) -> Self {
        let mut coord = Coordinator::deterministic(adapters, Arc::new(MemoryAssetStore::default()));
        coord.add_inline_worker();
        Self {
            coord,
            doc_id,
            lines: vec![header_line()],
            next_msg: 1,
        }
    }

    pub fn doc_id(&self) -> &DocId {
        &self.doc_id
    }

    /// `None` until the first request.
    pub fn document(&self) -> Option<&Document> {
        self.coord.document(&self.doc_id)
    }

    /// Run one request, drain inline work and log both.
    pub fn send(&mut self, ts: u64, req: ClientRequest) -> Result<Reply, SessionError> {
        let env = req.to_envelope(json!(self.next_msg), &self.doc_id);
        self.next_msg += 1;
        let result = self.coord.request(&self.doc_id, &req, ts);
        let ack = match &result {
            Ok(r) => r.ack.clone(),
            Err(e) => json!({ "code": e.code(), "message": e.to_string() }),
        };
        self.coord.drain();
        let entry = LogEntry {
            ts,
            msg_id: env.msg_id,
            kind: env.kind,
            doc_id: self.doc_id.clone(),
            body: env.body,
            ack: Some(ack),
        };
        self.lines.push(serde_json::to_string(&entry).expect("entry serializes"));
        result
    }

    pub fn log(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }
}
