use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assets::AssetRef;
use crate::ids::{CardId, DocId, SlotId};
use crate::lifecycle::{GenState, Provenance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
    Audio,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
            Modality::Audio => "audio",
        }
    }

    pub fn default_size(self) -> Size {
        match self {
            Modality::Text => Size::new(256.0, 160.0),
            Modality::Image => Size::new(256.0, 256.0),
            Modality::Audio => Size::new(256.0, 96.0),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const ORIGIN: Position = Position { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn offset(self, dx: f64, dy: f64) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Size {
    pub width: f64,
    pub height: f64,
}

impl Size {
    pub fn new(width: f64, height: f64) -> Self {
        Self { width, height }
    }

    pub fn is_valid(&self) -> bool {
        self.width.is_finite() && self.height.is_finite() && self.width > 0.0 && self.height > 0.0
    }
}

/// Text for text cards, an asset reference for image and audio cards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CardContent {
    Text(String),
    Asset(AssetRef),
}

impl CardContent {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            CardContent::Text(s) => Some(s),
            CardContent::Asset(_) => None,
        }
    }

    pub fn as_asset(&self) -> Option<&AssetRef> {
        match self {
            CardContent::Asset(a) => Some(a),
            CardContent::Text(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataCard {
    pub id: CardId,
    pub kind: Modality,
    pub position: Position,
    pub size: Size,
    /// `None` only for media cards that have not been generated yet.
    pub content: Option<CardContent>,
    pub annotation: Option<String>,
    /// Original name of an uploaded file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_name: Option<String>,
    pub gen_state: GenState,
    pub provenance: Option<Provenance>,
    pub truncated: bool,
    pub created_at: u64,
}

impl DataCard {
    pub fn text(&self) -> Option<&str> {
        self.content.as_ref().and_then(CardContent::as_text)
    }

    pub fn asset(&self) -> Option<&AssetRef> {
        self.content.as_ref().and_then(CardContent::as_asset)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub slot_id: SlotId,
    pub label: String,
    /// A data card or a cluster.
    pub connection: Option<CardId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionCard {
    pub id: CardId,
    pub position: Position,
    pub target_modality: Modality,
    pub slots: Vec<Slot>,
    pub trigger_count: u64,
    pub next_slot_id: u32,
    pub created_at: u64,
}

impl ActionCard {
    pub fn slot(&self, slot_id: SlotId) -> Option<&Slot> {
        self.slots.iter().find(|s| s.slot_id == slot_id)
    }

    pub fn slot_mut(&mut self, slot_id: SlotId) -> Option<&mut Slot> {
        self.slots.iter_mut().find(|s| s.slot_id == slot_id)
    }

    pub fn slot_by_label(&self, label: &str) -> Option<&Slot> {
        self.slots.iter().find(|s| s.label == label)
    }
}

pub const ACTION_WIDTH: f64 = 280.0;
pub const ACTION_SLOT_PITCH: f64 = 40.0;
pub const GRID_GAP: f64 = 24.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: CardId,
    pub position: Position,
    pub label: Option<String>,
    pub members: Vec<CardId>,
    pub cached_interpretation: Option<String>,
    /// The request that produced `cached_interpretation`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cached_prompt: Option<String>,
    pub created_at: u64,
}

impl Cluster {
    pub fn invalidate(&mut self) {
        self.cached_interpretation = None;
        self.cached_prompt = None;
    }
}

/// The canvas graph. Plain data; all mutation goes through [`super::Canvas`].
#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub doc_id: DocId,
    pub rev: u64,
    pub data_cards: BTreeMap<CardId, DataCard>,
    pub action_cards: BTreeMap<CardId, ActionCard>,
    pub clusters: BTreeMap<CardId, Cluster>,
    pub created_at: u64,
    pub modified_at: u64,
}

/// What an id resolves to inside a document.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntityKind {
    Data,
    Action,
    Cluster,
}

impl Document {
    pub fn new(doc_id: DocId, now_ms: u64) -> Self {
        Self {
            doc_id,
            rev: 0,
            data_cards: BTreeMap::new(),
            action_cards: BTreeMap::new(),
            clusters: BTreeMap::new(),
            created_at: now_ms,
            modified_at: now_ms,
        }
    }

    pub fn entity_kind(&self, id: CardId) -> Option<EntityKind> {
        if self.data_cards.contains_key(&id) {
            Some(EntityKind::Data)
        } else if self.action_cards.contains_key(&id) {
            Some(EntityKind::Action)
        } else if self.clusters.contains_key(&id) {
            Some(EntityKind::Cluster)
        } else {
            None
        }
    }

    pub fn contains(&self, id: CardId) -> bool {
        self.entity_kind(id).is_some()
    }

    pub fn is_empty(&self) -> bool {
        self.data_cards.is_empty() && self.action_cards.is_empty() && self.clusters.is_empty()
    }

    pub fn entity_count(&self) -> usize {
        self.data_cards.len() + self.action_cards.len() + self.clusters.len()
    }

    pub fn cluster_of(&self, card: CardId) -> Option<CardId> {
        self.clusters
            .values()
            .find(|c| c.members.contains(&card))
            .map(|c| c.id)
    }

    pub fn max_id(&self) -> Option<CardId> {
        [
            self.data_cards.keys().next_back(),
            self.action_cards.keys().next_back(),
            self.clusters.keys().next_back(),
        ]
        .into_iter()
        .flatten()
        .max()
        .copied()
    }

    /// Every violated structural invariant, as human-readable strings.
    pub fn integrity_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for a in self.action_cards.values() {
            let mut seen = std::collections::BTreeSet::new();
            for s in &a.slots {
                if !seen.insert(s.slot_id) {
                    out.push(format!("action {} has duplicate slot {}", a.id, s.slot_id));
                }
                if let Some(c) = s.connection {
                    let ok = self.data_cards.contains_key(&c) || self.clusters.contains_key(&c);
                    if !ok {
                        out.push(format!("action {} slot {} dangles to {c}", a.id, s.slot_id));
                    }
                }
            }
        }
        let mut owner = BTreeMap::new();
        for cl in self.clusters.values() {
            for m in &cl.members {
                if !self.data_cards.contains_key(m) {
                    out.push(format!("cluster {} member {m} is not a live data card", cl.id));
                }
                if let Some(prev) = owner.insert(*m, cl.id) {
                    out.push(format!("card {m} in clusters {prev} and {}", cl.id));
                }
            }
            if cl.label.as_deref() == Some("") {
                out.push(format!("cluster {} has an empty label", cl.id));
            }
        }
        for d in self.data_cards.values() {
            if !d.size.is_valid() {
                out.push(format!("card {} has invalid size", d.id));
            }
            if d.kind == crate::canvas::Modality::Text && d.text().is_none() {
                out.push(format!("text card {} lacks text content", d.id));
            }
        }
        out
    }
}
