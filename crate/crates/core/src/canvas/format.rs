use serde::{Deserialize, Serialize};

use super::{ActionCard, CanvasError, Cluster, DataCard, Document};
use crate::assets::sha256_hex;
use crate::ids::DocId;

pub const DOC_FORMAT: &str = "deckflow-doc/1";

/// On-disk shape of a document. Collections are arrays sorted by id, which
/// makes the compact JSON encoding canonical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocFile {
    pub format: String,
    pub doc_id: DocId,
    pub rev: u64,
    pub data_cards: Vec<DataCard>,
    pub action_cards: Vec<ActionCard>,
    pub clusters: Vec<Cluster>,
    pub created_at: u64,
    pub modified_at: u64,
}

impl From<&Document> for DocFile {
    fn from(doc: &Document) -> Self {
        DocFile {
            format: DOC_FORMAT.to_string(),
            doc_id: doc.doc_id.clone(),
            rev: doc.rev,
            data_cards: doc.data_cards.values().cloned().collect(),
            action_cards: doc.action_cards.values().cloned().collect(),
            clusters: doc.clusters.values().cloned().collect(),
            created_at: doc.created_at,
            modified_at: doc.modified_at,
        }
    }
}

impl TryFrom<DocFile> for Document {
    type Error = CanvasError;

    fn try_from(f: DocFile) -> Result<Self, CanvasError> {
        if f.format != DOC_FORMAT {
            return Err(CanvasError::MalformedDocument(format!(
                "unsupported format {:?}",
                f.format
            )));
        }
        let mut doc = Document::new(f.doc_id, f.created_at);
        doc.rev = f.rev;
        doc.modified_at = f.modified_at;
        let n = f.data_cards.len() + f.action_cards.len() + f.clusters.len();
        doc.data_cards = f.data_cards.into_iter().map(|d| (d.id, d)).collect();
        doc.action_cards = f.action_cards.into_iter().map(|a| (a.id, a)).collect();
        doc.clusters = f.clusters.into_iter().map(|c| (c.id, c)).collect();
        if doc.entity_count() != n {
            return Err(CanvasError::MalformedDocument("duplicate entity id".into()));
        }
        if let Some(v) = doc.integrity_violations().into_iter().next() {
            return Err(CanvasError::MalformedDocument(v));
        }
        Ok(doc)
    }
}

impl Document {
    pub fn to_json(&self) -> String {
        String::from_utf8(canonical_bytes(self)).expect("json is utf-8")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&DocFile::from(self)).expect("document serializes")
    }

    pub fn from_json(text: &str) -> Result<Document, CanvasError> {
        let file: DocFile = serde_json::from_str(text).map_err(|e| {
            CanvasError::MalformedDocument(format!("line {} column {}: {e}", e.line(), e.column()))
        })?;
        Document::try_from(file)
    }
}

/// Compact canonical encoding: id-sorted arrays, serde_json's shortest
/// round-trip float formatting, struct field order fixed by declaration.
pub fn canonical_bytes(doc: &Document) -> Vec<u8> {
    serde_json::to_vec(&DocFile::from(doc)).expect("document serializes")
}

/// Lowercase hex SHA-256 of the canonical encoding.
pub fn doc_hash(doc: &Document) -> String {
    sha256_hex(&canonical_bytes(doc))
}
