//! Wire messages for clients and workers. Every message is a JSON
//! [`Envelope`]; `kind` names the message and `body` carries its fields.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::assets::AssetRef;
use crate::canvas::{ActionCard, Cluster, DataCard, DocFile, Document, Modality, Position};
use crate::hub::{JobType, NewJob};
use crate::ids::{CardId, DocId, JobId, SlotId, WorkerId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub msg_id: Value,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<DocId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rev: Option<u64>,
    #[serde(default)]
    pub body: Value,
}

impl Envelope {
    pub fn new(kind: &str, body: Value) -> Self {
        Self {
            msg_id: Value::Null,
            kind: kind.to_string(),
            doc_id: None,
            rev: None,
            body,
        }
    }

    pub fn reply_to(msg_id: &Value, kind: &str, doc_id: Option<&DocId>, body: Value) -> Self {
        Self {
            msg_id: msg_id.clone(),
            kind: kind.to_string(),
            doc_id: doc_id.cloned(),
            rev: None,
            body,
        }
    }

    pub fn ack(msg_id: &Value, doc_id: Option<&DocId>, body: Value) -> Self {
        Self::reply_to(msg_id, "ack", doc_id, body)
    }

    pub fn error(msg_id: &Value, doc_id: Option<&DocId>, code: &str, message: &str) -> Self {
        Self::reply_to(
            msg_id,
            "error",
            doc_id,
            json!({ "code": code, "message": message }),
        )
    }

    pub fn snapshot(doc: &Document) -> Self {
        Self {
            msg_id: Value::Null,
            kind: "snapshot".into(),
            doc_id: Some(doc.doc_id.clone()),
            rev: Some(doc.rev),
            body: serde_json::to_value(DocFile::from(doc)).expect("document serializes"),
        }
    }

    pub fn server_status(status: &str, message: &str) -> Self {
        Self::new("server_status", json!({ "status": status, "message": message }))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("envelope serializes")
    }
}

/// What `create_card` makes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CreateKind {
    Text,
    Image,
    Audio,
    Action,
}

fn default_target() -> Modality {
    Modality::Image
}

/// Client requests, keyed by envelope `kind`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientRequest {
    Join {},
    CreateCard {
        kind: CreateKind,
        position: Position,
        #[serde(default)]
        text: Option<String>,
        #[serde(default)]
        asset: Option<AssetRef>,
        #[serde(default)]
        annotation: Option<String>,
        #[serde(default)]
        target_modality: Option<Modality>,
        #[serde(default)]
        labels: Vec<String>,
    },
    UpdateText {
        card_id: CardId,
        text: String,
    },
    SetAnnotation {
        card_id: CardId,
        annotation: Option<String>,
    },
    Move {
        ids: Vec<CardId>,
        dx: f64,
        dy: f64,
    },
    Resize {
        card_id: CardId,
        width: f64,
        height: f64,
    },
    Connect {
        source: CardId,
        action: CardId,
        slot_id: SlotId,
    },
    Disconnect {
        action: CardId,
        slot_id: SlotId,
    },
    AddSlot {
        action: CardId,
        label: String,
    },
    RemoveSlot {
        action: CardId,
        slot_id: SlotId,
    },
    RenameSlot {
        action: CardId,
        slot_id: SlotId,
        label: String,
    },
    SetModality {
        action: CardId,
        target_modality: Modality,
    },
    FormCluster {
        members: Vec<CardId>,
        #[serde(default)]
        label: Option<String>,
    },
    SetClusterLabel {
        cluster: CardId,
        label: Option<String>,
    },
    ClusterAdd {
        cluster: CardId,
        card_id: CardId,
    },
    ClusterRemove {
        cluster: CardId,
        card_id: CardId,
    },
    TriggerAction {
        action: CardId,
    },
    /// Decompose a text card's content, or free text placed at `position`.
    Decompose {
        #[serde(default)]
        card_id: Option<CardId>,
        #[serde(default)]
        text: Option<String>,
        #[serde(default)]
        position: Option<Position>,
        #[serde(default = "default_target")]
        target_modality: Modality,
    },
    InterpretCluster {
        cluster: CardId,
    },
    Duplicate {
        ids: Vec<CardId>,
    },
    Delete {
        ids: Vec<CardId>,
    },
    Copy {
        ids: Vec<CardId>,
    },
    Paste {
        clipboard: String,
        position: Position,
    },
    Info {
        card_id: CardId,
    },
}

impl ClientRequest {
    /// Decode a client envelope's `kind` and `body`.
    pub fn from_envelope(env: &Envelope) -> Result<Self, String> {
        let body = if env.body.is_null() { json!({}) } else { env.body.clone() };
        serde_json::from_value(json!({ "kind": env.kind, "body": body })).map_err(|e| e.to_string())
    }

    pub fn to_envelope(&self, msg_id: Value, doc_id: &DocId) -> Envelope {
        let v = serde_json::to_value(self).expect("request serializes");
        Envelope {
            msg_id,
            kind: v["kind"].as_str().expect("tagged").to_string(),
            doc_id: Some(doc_id.clone()),
            rev: None,
            body: v.get("body").cloned().unwrap_or_else(|| json!({})),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ClientRequest::Join {} => "join",
            ClientRequest::CreateCard { .. } => "create_card",
            ClientRequest::UpdateText { .. } => "update_text",
            ClientRequest::SetAnnotation { .. } => "set_annotation",
            ClientRequest::Move { .. } => "move",
            ClientRequest::Resize { .. } => "resize",
            ClientRequest::Connect { .. } => "connect",
            ClientRequest::Disconnect { .. } => "disconnect",
            ClientRequest::AddSlot { .. } => "add_slot",
            ClientRequest::RemoveSlot { .. } => "remove_slot",
            ClientRequest::RenameSlot { .. } => "rename_slot",
            ClientRequest::SetModality { .. } => "set_modality",
            ClientRequest::FormCluster { .. } => "form_cluster",
            ClientRequest::SetClusterLabel { .. } => "set_cluster_label",
            ClientRequest::ClusterAdd { .. } => "cluster_add",
            ClientRequest::ClusterRemove { .. } => "cluster_remove",
            ClientRequest::TriggerAction { .. } => "trigger_action",
            ClientRequest::Decompose { .. } => "decompose",
            ClientRequest::InterpretCluster { .. } => "interpret_cluster",
            ClientRequest::Duplicate { .. } => "duplicate",
            ClientRequest::Delete { .. } => "delete",
            ClientRequest::Copy { .. } => "copy",
            ClientRequest::Paste { .. } => "paste",
            ClientRequest::Info { .. } => "info",
        }
    }
}

/// Entities touched by one revision.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Changes {
    pub data_cards: Vec<DataCard>,
    pub action_cards: Vec<ActionCard>,
    pub clusters: Vec<Cluster>,
    pub removed: Vec<CardId>,
}

impl Changes {
    pub fn is_empty(&self) -> bool {
        self.data_cards.is_empty()
            && self.action_cards.is_empty()
            && self.clusters.is_empty()
            && self.removed.is_empty()
    }

    /// Apply to a client-side replica.
    pub fn apply_to(&self, doc: &mut Document, rev: u64) {
        for id in &self.removed {
            doc.data_cards.remove(id);
            doc.action_cards.remove(id);
            doc.clusters.remove(id);
        }
        for d in &self.data_cards {
            doc.data_cards.insert(d.id, d.clone());
        }
        for a in &self.action_cards {
            doc.action_cards.insert(a.id, a.clone());
        }
        for c in &self.clusters {
            doc.clusters.insert(c.id, c.clone());
        }
        doc.rev = rev;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventBody {
    pub op: String,
    pub changes: Changes,
}

pub fn event(doc_id: &DocId, rev: u64, op: &str, changes: Changes) -> Envelope {
    Envelope {
        msg_id: Value::Null,
        kind: "event".into(),
        doc_id: Some(doc_id.clone()),
        rev: Some(rev),
        body: serde_json::to_value(EventBody {
            op: op.to_string(),
            changes,
        })
        .expect("event serializes"),
    }
}

// ---- worker protocol ----------------------------------------------------

/// Messages a worker sends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body", rename_all = "snake_case")]
pub enum WorkerRequest {
    Register {
        capabilities: Vec<JobType>,
        #[serde(default)]
        models_loaded: Vec<String>,
    },
    Heartbeat {
        #[serde(default)]
        models_loaded: Vec<String>,
    },
    JobStatus {
        job_id: JobId,
        seq: u64,
        message: String,
    },
    JobResult {
        job_id: JobId,
        seq: u64,
        #[serde(flatten)]
        outcome: JobOutcome,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobOutcome {
    Asset(AssetRef),
    Text { text: String, truncated: bool },
    Error(String),
}

impl WorkerRequest {
    pub fn from_envelope(env: &Envelope) -> Result<Self, String> {
        let body = if env.body.is_null() { json!({}) } else { env.body.clone() };
        serde_json::from_value(json!({ "kind": env.kind, "body": body })).map_err(|e| e.to_string())
    }

    pub fn to_envelope(&self, msg_id: Value) -> Envelope {
        let v = serde_json::to_value(self).expect("request serializes");
        Envelope {
            msg_id,
            kind: v["kind"].as_str().expect("tagged").to_string(),
            doc_id: None,
            rev: None,
            body: v.get("body").cloned().unwrap_or_else(|| json!({})),
        }
    }
}

/// Messages the server sends to a worker besides acks and errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body", rename_all = "snake_case")]
pub enum WorkerCommand {
    JobAssign { job: NewJob, attempt: u32 },
    Cancel { job_id: JobId },
    Registered { worker_id: WorkerId },
}

impl WorkerCommand {
    pub fn to_envelope(&self) -> Envelope {
        let v = serde_json::to_value(self).expect("command serializes");
        Envelope::new(
            v["kind"].as_str().expect("tagged"),
            v.get("body").cloned().unwrap_or_else(|| json!({})),
        )
    }

    pub fn from_envelope(env: &Envelope) -> Result<Self, String> {
        serde_json::from_value(json!({ "kind": env.kind, "body": env.body })).map_err(|e| e.to_string())
    }
}
