//! The document graph and every structural mutation on it.
//!
//! [`Canvas`] is the single writer for one [`Document`]. Each public
//! operation is atomic: it either commits exactly one revision or leaves the
//! document untouched. Operations that change nothing (disconnecting an empty
//! slot, deleting an empty selection) commit nothing.

mod clipboard;
mod format;
mod model;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

pub use clipboard::{ClipAsset, Clipboard, CLIP_FORMAT};
pub use format::{canonical_bytes, doc_hash, DocFile, DOC_FORMAT};
pub use model::*;

use crate::assets::{AssetError, AssetRef};
use crate::ids::{CardId, DocId, IdGen, SlotId};
use crate::lifecycle::{GenState, LifecycleError, LifecycleState, Provenance};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CanvasError {
    #[error("content does not match a {0} card")]
    ContentTypeMismatch(&'static str),
    #[error("position or offset is not finite")]
    NonFinitePosition,
    #[error("size must be finite and positive")]
    InvalidSize,
    #[error("no such endpoint {0}")]
    MissingEndpoint(CardId),
    #[error("a slot may not reference its own action card")]
    SelfConnection,
    #[error("{0} is an action card and has no output socket")]
    NotASource(CardId),
    #[error("action {action} has no slot {slot}")]
    MissingSlot { action: CardId, slot: SlotId },
    #[error("no such action card {0}")]
    MissingAction(CardId),
    #[error("no such card {0}")]
    MissingCard(CardId),
    #[error("no such cluster {0}")]
    MissingCluster(CardId),
    #[error("card {card} already belongs to cluster {cluster}")]
    AlreadyClustered { card: CardId, cluster: CardId },
    #[error("{0} is not a data card and cannot be clustered")]
    NonDataMember(CardId),
    #[error("selection is empty")]
    EmptySelection,
    #[error("malformed clipboard at line {line}, column {column}: {message}")]
    MalformedClipboard {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("media content of {0} is immutable")]
    MediaImmutable(CardId),
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
    #[error(transparent)]
    Asset(#[from] AssetError),
}

/// Initial content for a user-created card.
#[derive(Clone, Debug, PartialEq)]
pub enum NewContent {
    Text(String),
    Asset(AssetRef),
}

/// Ids touched by one committed revision.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Commit {
    pub rev: u64,
    pub upserted: BTreeSet<CardId>,
    pub removed: BTreeSet<CardId>,
}

#[derive(Clone, Debug, Default)]
struct ChangeSet {
    upserted: BTreeSet<CardId>,
    removed: BTreeSet<CardId>,
}

impl ChangeSet {
    fn is_empty(&self) -> bool {
        self.upserted.is_empty() && self.removed.is_empty()
    }
}

/// Result of [`Canvas::delete`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DeleteReport {
    pub rev: u64,
    /// Data cards that no longer exist; their jobs must be cancelled.
    pub removed_data_cards: Vec<CardId>,
    pub removed_total: usize,
}

pub const DUPLICATE_OFFSET: f64 = 24.0;
const CLUSTER_PADDING: f64 = 16.0;

#[derive(Clone, Debug)]
pub struct Canvas {
    doc: Document,
    ids: IdGen,
    changes: ChangeSet,
    commits: Vec<Commit>,
    depth: u32,
}

impl Canvas {
    pub fn new(doc_id: DocId, ids: IdGen) -> Self {
        let now = ids.now_ms();
        Self::from_document(Document::new(doc_id, now), ids)
    }

    pub fn from_document(doc: Document, mut ids: IdGen) -> Self {
        if let Some(max) = doc.max_id() {
            ids.observe(max.ulid());
        }
        Self {
            doc,
            ids,
            changes: ChangeSet::default(),
            commits: Vec::new(),
            depth: 0,
        }
    }

    pub fn doc(&self) -> &Document {
        &self.doc
    }

    pub fn into_document(self) -> Document {
        self.doc
    }

    pub fn ids_mut(&mut self) -> &mut IdGen {
        &mut self.ids
    }

    pub fn now(&self) -> u64 {
        self.ids.now_ms()
    }

    /// Committed revisions since the last call, oldest first.
    pub fn take_commits(&mut self) -> Vec<Commit> {
        std::mem::take(&mut self.commits)
    }

    /// Run `f` atomically. Nested calls join the outermost transaction, which
    /// commits a single revision if anything changed.
    pub fn transaction<T>(
        &mut self,
        f: impl FnOnce(&mut Self) -> Result<T, CanvasError>,
    ) -> Result<T, CanvasError> {
        if self.depth > 0 {
            return f(self);
        }
        let saved_doc = self.doc.clone();
        let saved_changes = self.changes.clone();
        self.depth += 1;
        let result = f(self);
        self.depth -= 1;
        match result {
            Ok(v) => {
                if !self.changes.is_empty() {
                    let changes = std::mem::take(&mut self.changes);
                    self.doc.rev += 1;
                    self.doc.modified_at = self.now();
                    self.commits.push(Commit {
                        rev: self.doc.rev,
                        upserted: changes.upserted,
                        removed: changes.removed,
                    });
                }
                Ok(v)
            }
            Err(e) => {
                self.doc = saved_doc;
                self.changes = saved_changes;
                Err(e)
            }
        }
    }

    pub(crate) fn touch(&mut self, id: CardId) {
        self.changes.removed.remove(&id);
        self.changes.upserted.insert(id);
    }

    fn mark_removed(&mut self, id: CardId) {
        self.changes.upserted.remove(&id);
        self.changes.removed.insert(id);
    }

    pub(crate) fn data_card_mut(&mut self, id: CardId) -> Result<&mut DataCard, CanvasError> {
        if !self.doc.data_cards.contains_key(&id) {
            return Err(CanvasError::MissingCard(id));
        }
        self.touch(id);
        Ok(self.doc.data_cards.get_mut(&id).expect("checked"))
    }

    fn action_mut(&mut self, id: CardId) -> Result<&mut ActionCard, CanvasError> {
        if !self.doc.action_cards.contains_key(&id) {
            return Err(CanvasError::MissingAction(id));
        }
        self.touch(id);
        Ok(self.doc.action_cards.get_mut(&id).expect("checked"))
    }

    pub(crate) fn cluster_mut(&mut self, id: CardId) -> Result<&mut Cluster, CanvasError> {
        if !self.doc.clusters.contains_key(&id) {
            return Err(CanvasError::MissingCluster(id));
        }
        self.touch(id);
        Ok(self.doc.clusters.get_mut(&id).expect("checked"))
    }

    fn invalidate_cluster_of(&mut self, card: CardId) {
        if let Some(cl) = self.doc.cluster_of(card) {
            if self.doc.clusters[&cl].cached_interpretation.is_some() {
                self.touch(cl);
                self.doc.clusters.get_mut(&cl).expect("live").invalidate();
            }
        }
    }

    // ---- creation -------------------------------------------------------

    pub(crate) fn insert_data_card(&mut self, card: DataCard) -> CardId {
        let id = card.id;
        self.doc.data_cards.insert(id, card);
        self.touch(id);
        id
    }

    /// A finished, system-generated text card.
    pub(crate) fn insert_generated_text(
        &mut self,
        position: Position,
        size: Size,
        text: String,
        truncated: bool,
        provenance: Provenance,
    ) -> CardId {
        let id = self.ids.card_id();
        let now = self.now();
        self.insert_data_card(DataCard {
            id,
            kind: Modality::Text,
            position,
            size,
            content: Some(CardContent::Text(text)),
            annotation: None,
            file_name: None,
            gen_state: GenState::success(),
            provenance: Some(provenance),
            truncated,
            created_at: now,
        })
    }

    pub(crate) fn insert_pending(
        &mut self,
        kind: Modality,
        position: Position,
        size: Size,
        provenance: Provenance,
    ) -> Result<CardId, CanvasError> {
        if !position.is_finite() {
            return Err(CanvasError::NonFinitePosition);
        }
        let id = self.ids.card_id();
        let now = self.now();
        let content = match kind {
            Modality::Text => Some(CardContent::Text(String::new())),
            _ => None,
        };
        Ok(self.insert_data_card(DataCard {
            id,
            kind,
            position,
            size,
            content,
            annotation: None,
            file_name: None,
            gen_state: GenState::waiting("queued"),
            provenance: Some(provenance),
            truncated: false,
            created_at: now,
        }))
    }

    /// User-created data card, born in `success`.
    pub fn create_card(
        &mut self,
        kind: Modality,
        position: Position,
        content: NewContent,
    ) -> Result<CardId, CanvasError> {
        self.create_card_with(kind, position, content, None, None)
    }

    pub fn create_card_with(
        &mut self,
        kind: Modality,
        position: Position,
        content: NewContent,
        annotation: Option<String>,
        file_name: Option<String>,
    ) -> Result<CardId, CanvasError> {
        if !position.is_finite() {
            return Err(CanvasError::NonFinitePosition);
        }
        let content = match (kind, content) {
            (Modality::Text, NewContent::Text(t)) => CardContent::Text(t),
            (Modality::Image, NewContent::Asset(a)) if a.media_type.starts_with("image/") => {
                CardContent::Asset(a)
            }
            (Modality::Audio, NewContent::Asset(a)) if a.media_type.starts_with("audio/") => {
                CardContent::Asset(a)
            }
            (k, _) => return Err(CanvasError::ContentTypeMismatch(k.as_str())),
        };
        self.transaction(|c| {
            let id = c.ids.card_id();
            let now = c.now();
            Ok(c.insert_data_card(DataCard {
                id,
                kind,
                position,
                size: kind.default_size(),
                content: Some(content),
                annotation,
                file_name,
                gen_state: GenState::success(),
                provenance: None,
                truncated: false,
                created_at: now,
            }))
        })
    }

    pub fn create_action(
        &mut self,
        position: Position,
        target_modality: Modality,
        labels: &[String],
    ) -> Result<CardId, CanvasError> {
        if !position.is_finite() {
            return Err(CanvasError::NonFinitePosition);
        }
        self.transaction(|c| {
            let id = c.ids.card_id();
            let now = c.now();
            let slots = labels
                .iter()
                .enumerate()
                .map(|(i, l)| Slot {
                    slot_id: SlotId(i as u32),
                    label: l.clone(),
                    connection: None,
                })
                .collect();
            c.doc.action_cards.insert(
                id,
                ActionCard {
                    id,
                    position,
                    target_modality,
                    slots,
                    trigger_count: 0,
                    next_slot_id: labels.len() as u32,
                    created_at: now,
                },
            );
            c.touch(id);
            Ok(id)
        })
    }

    // ---- content edits --------------------------------------------------

    /// Text is editable in every lifecycle state; media never is.
    pub fn update_text(&mut self, id: CardId, text: &str) -> Result<u64, CanvasError> {
        self.transaction(|c| {
            let card = c
                .doc
                .data_cards
                .get(&id)
                .ok_or(CanvasError::MissingCard(id))?;
            if card.kind != Modality::Text {
                return Err(CanvasError::MediaImmutable(id));
            }
            if card.text() == Some(text) {
                return Ok(());
            }
            let card = c.data_card_mut(id)?;
            card.content = Some(CardContent::Text(text.to_string()));
            card.truncated = false;
            c.invalidate_cluster_of(id);
            Ok(())
        })?;
        Ok(self.doc.rev)
    }

    pub fn set_annotation(&mut self, id: CardId, annotation: Option<&str>) -> Result<u64, CanvasError> {
        self.transaction(|c| {
            let card = c.data_card_mut(id)?;
            card.annotation = annotation.filter(|a| !a.is_empty()).map(str::to_string);
            Ok(())
        })?;
        Ok(self.doc.rev)
    }

    // ---- layout ---------------------------------------------------------

    /// Translate a selection. Moving a cluster moves its members with it.
    pub fn move_by(&mut self, ids: &[CardId], dx: f64, dy: f64) -> Result<u64, CanvasError> {
        if !(dx.is_finite() && dy.is_finite()) {
            return Err(CanvasError::NonFinitePosition);
        }
        self.transaction(|c| {
            let mut data = BTreeSet::new();
            let mut other = BTreeSet::new();
            for &id in ids {
                match c.doc.entity_kind(id) {
                    Some(EntityKind::Data) => {
                        data.insert(id);
                    }
                    Some(EntityKind::Cluster) => {
                        other.insert(id);
                        data.extend(c.doc.clusters[&id].members.iter().copied());
                    }
                    Some(EntityKind::Action) => {
                        other.insert(id);
                    }
                    None => return Err(CanvasError::MissingCard(id)),
                }
            }
            if dx == 0.0 && dy == 0.0 {
                return Ok(());
            }
            for id in data {
                let card = c.data_card_mut(id)?;
                card.position = card.position.offset(dx, dy);
            }
            for id in other {
                if let Ok(a) = c.action_mut(id) {
                    a.position = a.position.offset(dx, dy);
                } else {
                    let cl = c.cluster_mut(id)?;
                    cl.position = cl.position.offset(dx, dy);
                }
            }
            Ok(())
        })?;
        Ok(self.doc.rev)
    }

    pub fn resize(&mut self, id: CardId, size: Size) -> Result<u64, CanvasError> {
        if !size.is_valid() {
            return Err(CanvasError::InvalidSize);
        }
        self.transaction(|c| {
            c.data_card_mut(id)?.size = size;
            Ok(())
        })?;
        Ok(self.doc.rev)
    }

    // ---- connections ----------------------------------------------------

    /// Bind `source` (a data card or cluster) to a slot, replacing any
    /// existing binding in the same revision.
    pub fn connect(&mut self, source: CardId, action: CardId, slot: SlotId) -> Result<u64, CanvasError> {
        if source == action {
            return Err(CanvasError::SelfConnection);
        }
        match self.doc.entity_kind(source) {
            Some(EntityKind::Data | EntityKind::Cluster) => {}
            Some(EntityKind::Action) => return Err(CanvasError::NotASource(source)),
            None => return Err(CanvasError::MissingEndpoint(source)),
        }
        let a = self
            .doc
            .action_cards
            .get(&action)
            .ok_or(CanvasError::MissingEndpoint(action))?;
        let current = a
            .slot(slot)
            .ok_or(CanvasError::MissingSlot { action, slot })?
            .connection;
        if current == Some(source) {
            return Ok(self.doc.rev);
        }
        self.transaction(|c| {
            c.action_mut(action)?
                .slot_mut(slot)
                .expect("checked")
                .connection = Some(source);
            Ok(())
        })?;
        Ok(self.doc.rev)
    }

    pub fn disconnect(&mut self, action: CardId, slot: SlotId) -> Result<u64, CanvasError> {
        let a = self
            .doc
            .action_cards
            .get(&action)
            .ok_or(CanvasError::MissingAction(action))?;
        let s = a.slot(slot).ok_or(CanvasError::MissingSlot { action, slot })?;
        if s.connection.is_none() {
            return Ok(self.doc.rev);
        }
        self.transaction(|c| {
            c.action_mut(action)?.slot_mut(slot).expect("checked").connection = None;
            Ok(())
        })?;
        Ok(self.doc.rev)
    }

    pub fn add_slot(&mut self, action: CardId, label: &str) -> Result<SlotId, CanvasError> {
        self.transaction(|c| {
            let a = c.action_mut(action)?;
            let slot_id = SlotId(a.next_slot_id);
            a.next_slot_id += 1;
            a.slots.push(Slot {
                slot_id,
                label: label.to_string(),
                connection: None,
            });
            Ok(slot_id)
        })
    }

    pub fn remove_slot(&mut self, action: CardId, slot: SlotId) -> Result<u64, CanvasError> {
        self.transaction(|c| {
            let a = c.action_mut(action)?;
            let before = a.slots.len();
            a.slots.retain(|s| s.slot_id != slot);
            if a.slots.len() == before {
                return Err(CanvasError::MissingSlot { action, slot });
            }
            Ok(())
        })?;
        Ok(self.doc.rev)
    }

    pub fn rename_slot(&mut self, action: CardId, slot: SlotId, label: &str) -> Result<u64, CanvasError> {
        self.transaction(|c| {
            let a = c.action_mut(action)?;
            let s = a.slot_mut(slot).ok_or(CanvasError::MissingSlot { action, slot })?;
            s.label = label.to_string();
            Ok(())
        })?;
        Ok(self.doc.rev)
    }

    pub fn set_target_modality(&mut self, action: CardId, modality: Modality) -> Result<u64, CanvasError> {
        self.transaction(|c| {
            c.action_mut(action)?.target_modality = modality;
            Ok(())
        })?;
        Ok(self.doc.rev)
    }

    // ---- clusters -------------------------------------------------------

    pub fn form_cluster(&mut self, members: &[CardId], label: Option<&str>) -> Result<CardId, CanvasError> {
        let mut ordered = Vec::new();
        for &m in members {
            if !ordered.contains(&m) {
                ordered.push(m);
            }
        }
        if ordered.is_empty() {
            return Err(CanvasError::EmptySelection);
        }
        for &m in &ordered {
            match self.doc.entity_kind(m) {
                Some(EntityKind::Data) => {}
                Some(_) => return Err(CanvasError::NonDataMember(m)),
                None => return Err(CanvasError::MissingCard(m)),
            }
            if let Some(cluster) = self.doc.cluster_of(m) {
                return Err(CanvasError::AlreadyClustered { card: m, cluster });
            }
        }
        let min_x = ordered
            .iter()
            .map(|m| self.doc.data_cards[m].position.x)
            .fold(f64::INFINITY, f64::min);
        let min_y = ordered
            .iter()
            .map(|m| self.doc.data_cards[m].position.y)
            .fold(f64::INFINITY, f64::min);
        self.transaction(|c| {
            let id = c.ids.card_id();
            let now = c.now();
            c.doc.clusters.insert(
                id,
                Cluster {
                    id,
                    position: Position::new(min_x - CLUSTER_PADDING, min_y - CLUSTER_PADDING),
                    label: label.filter(|l| !l.is_empty()).map(str::to_string),
                    members: ordered,
                    cached_interpretation: None,
                    cached_prompt: None,
                    created_at: now,
                },
            );
            c.touch(id);
            Ok(id)
        })
    }

    pub fn set_cluster_label(&mut self, cluster: CardId, label: Option<&str>) -> Result<u64, CanvasError> {
        let label = label.filter(|l| !l.is_empty()).map(str::to_string);
        let cl = self
            .doc
            .clusters
            .get(&cluster)
            .ok_or(CanvasError::MissingCluster(cluster))?;
        if cl.label == label {
            return Ok(self.doc.rev);
        }
        self.transaction(|c| {
            let cl = c.cluster_mut(cluster)?;
            cl.label = label;
            cl.invalidate();
            Ok(())
        })?;
        Ok(self.doc.rev)
    }

    pub fn add_cluster_member(&mut self, cluster: CardId, card: CardId) -> Result<u64, CanvasError> {
        if !self.doc.clusters.contains_key(&cluster) {
            return Err(CanvasError::MissingCluster(cluster));
        }
        match self.doc.entity_kind(card) {
            Some(EntityKind::Data) => {}
            Some(_) => return Err(CanvasError::NonDataMember(card)),
            None => return Err(CanvasError::MissingCard(card)),
        }
        if let Some(existing) = self.doc.cluster_of(card) {
            return Err(CanvasError::AlreadyClustered {
                card,
                cluster: existing,
            });
        }
        self.transaction(|c| {
            let cl = c.cluster_mut(cluster)?;
            cl.members.push(card);
            cl.invalidate();
            Ok(())
        })?;
        Ok(self.doc.rev)
    }

    pub fn remove_cluster_member(&mut self, cluster: CardId, card: CardId) -> Result<u64, CanvasError> {
        self.transaction(|c| {
            let cl = c.cluster_mut(cluster)?;
            let before = cl.members.len();
            cl.members.retain(|m| *m != card);
            if cl.members.len() == before {
                return Err(CanvasError::MissingCard(card));
            }
            cl.invalidate();
            Ok(())
        })?;
        Ok(self.doc.rev)
    }

    // ---- selection operations -------------------------------------------

    /// Selection closure: a cluster brings its members along.
    pub(crate) fn expand_selection(&self, selection: &[CardId]) -> Result<BTreeSet<CardId>, CanvasError> {
        let mut out = BTreeSet::new();
        for &id in selection {
            match self.doc.entity_kind(id) {
                None => return Err(CanvasError::MissingCard(id)),
                Some(EntityKind::Cluster) => {
                    out.insert(id);
                    out.extend(self.doc.clusters[&id].members.iter().copied());
                }
                Some(_) => {
                    out.insert(id);
                }
            }
        }
        Ok(out)
    }

    /// Deep-copy a selection with fresh ids, offset so the copies are visible.
    /// Connections survive only when both endpoints are selected.
    pub fn duplicate(&mut self, selection: &[CardId]) -> Result<Vec<(CardId, CardId)>, CanvasError> {
        if selection.is_empty() {
            return Err(CanvasError::EmptySelection);
        }
        let set = self.expand_selection(selection)?;
        let part = Fragment::extract(&self.doc, &set);
        self.transaction(|c| c.insert_fragment(part, DUPLICATE_OFFSET, DUPLICATE_OFFSET))
    }

    /// Insert copies of the fragment's entities translated by (dx, dy).
    pub(crate) fn insert_fragment(
        &mut self,
        part: Fragment,
        dx: f64,
        dy: f64,
    ) -> Result<Vec<(CardId, CardId)>, CanvasError> {
        let mut olds: Vec<CardId> = part
            .data_cards
            .iter()
            .map(|d| d.id)
            .chain(part.action_cards.iter().map(|a| a.id))
            .chain(part.clusters.iter().map(|c| c.id))
            .collect();
        olds.sort();
        let map: BTreeMap<CardId, CardId> = olds.iter().map(|&o| (o, self.ids.card_id())).collect();
        let now = self.now();
        for mut d in part.data_cards {
            d.id = map[&d.id];
            d.position = d.position.offset(dx, dy);
            d.created_at = now;
            if !d.gen_state.state.is_terminal() {
                d.gen_state = GenState {
                    state: LifecycleState::Error,
                    bubble: Some("copied before completion".to_string()),
                };
            }
            self.insert_data_card(d);
        }
        for mut a in part.action_cards {
            a.id = map[&a.id];
            a.position = a.position.offset(dx, dy);
            a.created_at = now;
            for s in &mut a.slots {
                s.connection = s.connection.and_then(|src| map.get(&src).copied());
            }
            self.doc.action_cards.insert(a.id, a.clone());
            self.touch(a.id);
        }
        for mut cl in part.clusters {
            cl.id = map[&cl.id];
            cl.position = cl.position.offset(dx, dy);
            cl.created_at = now;
            cl.members = cl.members.iter().filter_map(|m| map.get(m).copied()).collect();
            self.doc.clusters.insert(cl.id, cl.clone());
            self.touch(cl.id);
        }
        if let Some(bad) = self.doc.integrity_violations().into_iter().next() {
            return Err(CanvasError::MalformedDocument(bad));
        }
        Ok(olds.into_iter().map(|o| (o, map[&o])).collect())
    }

    /// Remove entities and every reference to them. Deleting a cluster
    /// releases its members. Unknown ids are ignored.
    pub fn delete(&mut self, selection: &[CardId]) -> Result<DeleteReport, CanvasError> {
        let targets: BTreeSet<CardId> = selection
            .iter()
            .copied()
            .filter(|&id| self.doc.contains(id))
            .collect();
        if targets.is_empty() {
            return Ok(DeleteReport {
                rev: self.doc.rev,
                ..Default::default()
            });
        }
        self.transaction(|c| {
            let mut removed_data = Vec::new();
            for &id in &targets {
                if c.doc.data_cards.remove(&id).is_some() {
                    removed_data.push(id);
                } else if c.doc.action_cards.remove(&id).is_none() {
                    c.doc.clusters.remove(&id);
                }
                c.mark_removed(id);
            }
            let cluster_ids: Vec<CardId> = c.doc.clusters.keys().copied().collect();
            for cl in cluster_ids {
                let members = &c.doc.clusters[&cl].members;
                if members.iter().any(|m| targets.contains(m)) {
                    let cl = c.cluster_mut(cl)?;
                    cl.members.retain(|m| !targets.contains(m));
                    cl.invalidate();
                }
            }
            let action_ids: Vec<CardId> = c.doc.action_cards.keys().copied().collect();
            for a in action_ids {
                let dangling = c.doc.action_cards[&a]
                    .slots
                    .iter()
                    .any(|s| s.connection.is_some_and(|x| targets.contains(&x)));
                if dangling {
                    for s in &mut c.action_mut(a)?.slots {
                        if s.connection.is_some_and(|x| targets.contains(&x)) {
                            s.connection = None;
                        }
                    }
                }
            }
            Ok(DeleteReport {
                rev: 0,
                removed_data_cards: removed_data,
                removed_total: targets.len(),
            })
        })
        .map(|mut r| {
            r.rev = self.doc.rev;
            r
        })
    }

    /// Bump `trigger_count`; part of the trigger transaction.
    pub(crate) fn note_trigger(&mut self, action: CardId) -> Result<(), CanvasError> {
        self.action_mut(action)?.trigger_count += 1;
        Ok(())
    }

    pub(crate) fn next_job_id(&mut self) -> crate::ids::JobId {
        self.ids.job_id()
    }

    pub(crate) fn connect_in_txn(&mut self, source: CardId, action: CardId, slot: SlotId) -> Result<(), CanvasError> {
        self.action_mut(action)?
            .slot_mut(slot)
            .ok_or(CanvasError::MissingSlot { action, slot })?
            .connection = Some(source);
        Ok(())
    }
}

/// A self-contained subset of a document.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Fragment {
    pub data_cards: Vec<DataCard>,
    pub action_cards: Vec<ActionCard>,
    pub clusters: Vec<Cluster>,
}

#[cfg(test)]
mod tests;
